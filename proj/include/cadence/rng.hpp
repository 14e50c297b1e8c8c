// Deterministic random number generation (PCG-XSH-RR 32).
//
// Every stochastic component takes an explicit Rng or a (seed, stream) pair.
// Streams let one user-facing seed drive many independent generators (corpus
// item i, training step s, synthesis candidate c) without correlation, and
// keep results identical across runs and thread counts.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "cadence/errors.hpp"

namespace cadence {

inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Combines identifiers into a stream id. Order-sensitive.
inline uint64_t stream_id(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  return mix64(mix64(mix64(a) ^ b) ^ c);
}

class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) {
    inc_ = (stream << 1u) | 1u;
    state_ = 0;
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  int uniform_int(int n) {
    if (n <= 0) throw SamplingError("uniform_int: n must be positive");
    uint32_t un = static_cast<uint32_t>(n);
    uint32_t threshold = (0u - un) % un;
    for (;;) {
      uint32_t r = next_u32();
      if (r >= threshold) return static_cast<int>(r % un);
    }
  }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_range(int lo, int hi) {
    if (hi < lo) throw SamplingError("uniform_range: empty range");
    return lo + uniform_int(hi - lo + 1);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (!have_cached_) {
      double u1 = 0.0;
      do {
        u1 = next_double();
      } while (u1 <= 0.0);
      double u2 = next_double();
      double r = std::sqrt(-2.0 * std::log(u1));
      double theta = 2.0 * std::numbers::pi * u2;
      cached_ = r * std::sin(theta);
      have_cached_ = true;
      return mean + stddev * r * std::cos(theta);
    }
    have_cached_ = false;
    return mean + stddev * cached_;
  }

  // Draws an index according to non-negative weights. Weights need not sum
  // to one; an all-zero weight vector is an error.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw SamplingError("categorical: no positive weight");
    double u = next_double() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);
  }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace cadence
