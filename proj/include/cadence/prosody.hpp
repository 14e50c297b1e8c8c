// Prosody features: phoneme-level pitch extraction and bucketing, duration
// clipping, and the step-to-phoneme alignment map used for attention windows
// and duration-guided decoding.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cadence/errors.hpp"

namespace cadence {

// Maps a raw pitch value onto one of `buckets` equal-width classes over
// [pitch_min, pitch_max]. Values outside the range clamp to the edge buckets.
struct PitchQuantizer {
  double pitch_min = 0.0;
  double pitch_max = 400.0;
  int buckets = 256;

  void validate() const {
    if (buckets <= 0) throw ConfigError("pitch quantizer: buckets must be positive");
    if (!(pitch_max > pitch_min))
      throw ConfigError("pitch quantizer: pitch_max must exceed pitch_min");
  }

  int quantize(double value) const {
    validate();
    if (std::isnan(value)) throw DataError("pitch quantizer: NaN pitch value");
    double v = std::clamp(value, pitch_min, pitch_max);
    double unit = (v - pitch_min) / (pitch_max - pitch_min);
    int b = static_cast<int>(std::floor(unit * buckets));
    return std::clamp(b, 0, buckets - 1);
  }

  // Center value of a bucket; quantize(bucket_center(b)) == b.
  double bucket_center(int b) const {
    validate();
    if (b < 0 || b >= buckets) throw DataError("pitch quantizer: bucket out of range");
    return pitch_min + (b + 0.5) / buckets * (pitch_max - pitch_min);
  }
};

// Mean pitch per phoneme over its voiced frames. A frame is voiced when its
// pitch is strictly positive; a phoneme whose frames are all unvoiced gets
// pitch 0.0.
inline std::vector<double> phoneme_pitch(const std::vector<double>& frames,
                                         const std::vector<int>& durations) {
  int total = 0;
  for (int d : durations) {
    if (d <= 0) throw DataError("phoneme_pitch: non-positive duration");
    total += d;
  }
  if (static_cast<int>(frames.size()) != total)
    throw DataError("phoneme_pitch: frame count " + std::to_string(frames.size()) +
                    " does not match duration sum " + std::to_string(total));
  std::vector<double> out;
  out.reserve(durations.size());
  int t = 0;
  for (int d : durations) {
    double sum = 0.0;
    int voiced = 0;
    for (int j = 0; j < d; ++j, ++t) {
      if (frames[t] > 0.0) {
        sum += frames[t];
        ++voiced;
      }
    }
    out.push_back(voiced > 0 ? sum / voiced : 0.0);
  }
  return out;
}

// Clamps a frame count to the duration vocabulary [1, max_duration].
inline int clip_duration(int d, int max_duration) {
  if (max_duration <= 0) throw ConfigError("clip_duration: max_duration must be positive");
  if (d <= 0) throw DataError("clip_duration: non-positive duration");
  return std::min(d, max_duration);
}

// Bucketed pitch and clipped duration per phoneme, parallel vectors.
struct ProsodySeq {
  std::vector<int> pitch;
  std::vector<int> duration;

  int size() const { return static_cast<int>(pitch.size()); }

  void validate(int pitch_buckets, int max_duration) const {
    if (pitch.size() != duration.size())
      throw DataError("prosody: pitch/duration length mismatch");
    for (int p : pitch)
      if (p < 0 || p >= pitch_buckets)
        throw DataError("prosody: pitch bucket " + std::to_string(p) + " out of range");
    for (int d : duration)
      if (d < 1 || d > max_duration)
        throw DataError("prosody: duration " + std::to_string(d) + " out of range");
  }

  ProsodySeq slice(int begin, int end) const {
    ProsodySeq s;
    s.pitch.assign(pitch.begin() + begin, pitch.begin() + end);
    s.duration.assign(duration.begin() + begin, duration.begin() + end);
    return s;
  }

  void append(const ProsodySeq& other) {
    pitch.insert(pitch.end(), other.pitch.begin(), other.pitch.end());
    duration.insert(duration.end(), other.duration.begin(), other.duration.end());
  }
};

inline ProsodySeq derive_prosody(const std::vector<double>& pitch_frames,
                                 const std::vector<int>& durations,
                                 const PitchQuantizer& quant, int max_duration) {
  ProsodySeq out;
  std::vector<double> per_phoneme = phoneme_pitch(pitch_frames, durations);
  out.pitch.reserve(per_phoneme.size());
  out.duration.reserve(durations.size());
  for (double v : per_phoneme) out.pitch.push_back(quant.quantize(v));
  for (int d : durations) out.duration.push_back(clip_duration(d, max_duration));
  return out;
}

// Maps each speech step t (0-based) to the phoneme index it realizes:
// phoneme i covers steps [cum(i-1), cum(i)) where cum is the running
// duration sum. With durations [2, 3] the map is [0, 0, 1, 1, 1].
class AlignmentMap {
 public:
  AlignmentMap() = default;

  explicit AlignmentMap(const std::vector<int>& durations) : durations_(durations) {
    cum_.reserve(durations.size());
    long long run = 0;
    for (int d : durations_) {
      if (d <= 0) throw AlignmentError("alignment: non-positive duration");
      run += d;
      cum_.push_back(run);
    }
    total_ = run;
  }

  int phoneme_count() const { return static_cast<int>(durations_.size()); }
  long long total_frames() const { return total_; }
  const std::vector<int>& durations() const { return durations_; }

  int phoneme_of_step(int t) const {
    if (t < 0 || t >= total_)
      throw AlignmentError("alignment: step " + std::to_string(t) +
                           " outside [0, " + std::to_string(total_) + ")");
    auto it = std::upper_bound(cum_.begin(), cum_.end(), static_cast<long long>(t));
    return static_cast<int>(it - cum_.begin());
  }

  // Inclusive phoneme index window [lo, hi] of radius k around the phoneme
  // realized at step t, clamped to the sequence. k < 0 means unbounded.
  std::pair<int, int> window(int t, int k) const {
    int center = phoneme_of_step(t);
    if (k < 0) return {0, phoneme_count() - 1};
    return {std::max(0, center - k), std::min(phoneme_count() - 1, center + k)};
  }

 private:
  std::vector<int> durations_;
  std::vector<long long> cum_;
  long long total_ = 0;
};

}  // namespace cadence
