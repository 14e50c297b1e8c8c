// Core data types shared across the library.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cadence/errors.hpp"

namespace cadence {

using PhonemeSeq = std::vector<int>;

// Discrete acoustic tokens, layer-major: tokens[l][t] is the code emitted by
// quantizer layer l at frame t. All layers span the same frame count.
struct CodecMatrix {
  std::vector<std::vector<int>> tokens;

  int layers() const { return static_cast<int>(tokens.size()); }
  int frames() const { return tokens.empty() ? 0 : static_cast<int>(tokens[0].size()); }

  void validate(int expect_layers, int vocab) const {
    if (layers() != expect_layers)
      throw DataError("codec matrix: expected " + std::to_string(expect_layers) +
                      " layers, got " + std::to_string(layers()));
    for (const auto& layer : tokens) {
      if (static_cast<int>(layer.size()) != frames())
        throw DataError("codec matrix: ragged layer lengths");
      for (int v : layer)
        if (v < 0 || v >= vocab)
          throw DataError("codec matrix: token " + std::to_string(v) +
                          " outside vocab " + std::to_string(vocab));
    }
  }
};

// One corpus item. Frame-level pitch is stored raw; bucketed prosody is
// derived at load time so the derivation path is exercised everywhere.
struct Utterance {
  std::string id;
  PhonemeSeq phonemes;
  std::vector<int> durations;       // frames per phoneme, same length as phonemes
  std::vector<double> pitch_frames; // length == sum(durations), 0.0 = unvoiced
  CodecMatrix codec;                // frames() == sum(durations)
  int prompt_len = 0;               // leading phonemes that form the prompt
  std::string category;             // empty for regular corpus items

  int prompt_frames() const {
    int total = 0;
    for (int i = 0; i < prompt_len; ++i) total += durations[i];
    return total;
  }

  int total_frames() const {
    int total = 0;
    for (int d : durations) total += d;
    return total;
  }
};

}  // namespace cadence
