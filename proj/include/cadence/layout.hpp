// Single-stream sequence assembly for the autoregressive model.
//
// Full layout:   [phonemes][SEP_P][prosody plan][SEP_C][speech tokens]
// Plain layout:  [phonemes][SEP_C][speech tokens]
//
// Phonemes, the prosody plan, and speech tokens each concatenate prompt
// content before target content. SEP_P closes the phoneme segment and is the
// position that predicts the first prosody slot; SEP_C opens the speech
// segment and predicts the first speech token.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cadence/errors.hpp"
#include "cadence/prosody.hpp"
#include "cadence/types.hpp"

namespace cadence {

enum class PosKind : uint8_t { Phoneme, SepProsody, Prosody, SepSpeech, Speech };

struct LayoutOptions {
  bool prosody = true;   // include the prosody plan segment at all
  bool pitch = true;     // prosody slots carry pitch tokens
  bool duration = true;  // prosody slots carry duration tokens
};

struct StreamPosition {
  PosKind kind;
  int index = -1;     // phoneme index, prosody slot, or speech step
  bool prompt = false;
  int phoneme = -1;   // token content; -1 where a field does not apply
  int pitch = -1;
  int duration = -1;  // duration value in [1, max_duration]
  int speech = -1;
};

struct SequenceLayout {
  std::vector<StreamPosition> positions;
  int phoneme_total = 0;
  int phoneme_prompt = 0;
  int speech_total = 0;   // speech tokens present in the stream
  int speech_prompt = 0;
  bool has_prosody = false;
  bool has_pitch = false;
  bool has_duration = false;
  int sep_prosody_pos = -1;
  int prosody_begin = -1;
  int sep_speech_pos = -1;
  int speech_begin = -1;

  int size() const { return static_cast<int>(positions.size()); }

  int position_of_prosody(int slot) const { return prosody_begin + slot; }
  int position_of_speech(int step) const { return speech_begin + step; }

  // Position whose next-token prediction targets prosody slot `slot`.
  int prosody_predictor(int slot) const {
    return slot == 0 ? sep_prosody_pos : prosody_begin + slot - 1;
  }

  // Position whose next-token prediction targets speech step `step`. For
  // step == speech_total the prediction target is end-of-sequence.
  int speech_predictor(int step) const {
    return step == 0 ? sep_speech_pos : speech_begin + step - 1;
  }
};

inline SequenceLayout assemble_ar_sequence(const PhonemeSeq& x_prompt,
                                           const PhonemeSeq& x_target,
                                           const ProsodySeq& prosody,
                                           const std::vector<int>& c_prompt,
                                           const std::vector<int>& c_target,
                                           const LayoutOptions& opt = {}) {
  if (x_target.empty()) throw LayoutError("assemble: empty target phonemes");
  int l_prompt = static_cast<int>(x_prompt.size());
  int l_total = l_prompt + static_cast<int>(x_target.size());
  bool with_prosody = opt.prosody && (opt.pitch || opt.duration);
  if (with_prosody && prosody.size() != l_total)
    throw LayoutError("assemble: prosody length " + std::to_string(prosody.size()) +
                      " does not match phoneme count " + std::to_string(l_total));

  SequenceLayout out;
  out.phoneme_total = l_total;
  out.phoneme_prompt = l_prompt;
  out.speech_prompt = static_cast<int>(c_prompt.size());
  out.speech_total = out.speech_prompt + static_cast<int>(c_target.size());
  out.has_prosody = with_prosody;
  out.has_pitch = with_prosody && opt.pitch;
  out.has_duration = with_prosody && opt.duration;
  out.positions.reserve(l_total + out.speech_total + (with_prosody ? l_total + 2 : 1));

  auto push_phoneme = [&](int id, int index, bool prompt) {
    if (id < 0) throw LayoutError("assemble: negative phoneme id");
    StreamPosition p;
    p.kind = PosKind::Phoneme;
    p.index = index;
    p.prompt = prompt;
    p.phoneme = id;
    out.positions.push_back(p);
  };
  for (int i = 0; i < l_prompt; ++i) push_phoneme(x_prompt[i], i, true);
  for (int i = l_prompt; i < l_total; ++i) push_phoneme(x_target[i - l_prompt], i, false);

  if (with_prosody) {
    StreamPosition sep;
    sep.kind = PosKind::SepProsody;
    sep.prompt = true;
    out.sep_prosody_pos = out.size();
    out.positions.push_back(sep);

    out.prosody_begin = out.size();
    for (int i = 0; i < l_total; ++i) {
      StreamPosition p;
      p.kind = PosKind::Prosody;
      p.index = i;
      p.prompt = i < l_prompt;
      if (out.has_pitch) {
        if (prosody.pitch[i] < 0) throw LayoutError("assemble: negative pitch bucket");
        p.pitch = prosody.pitch[i];
      }
      if (out.has_duration) {
        if (prosody.duration[i] < 1) throw LayoutError("assemble: duration below 1");
        p.duration = prosody.duration[i];
      }
      out.positions.push_back(p);
    }
  }

  StreamPosition sep;
  sep.kind = PosKind::SepSpeech;
  sep.prompt = true;
  out.sep_speech_pos = out.size();
  out.positions.push_back(sep);

  out.speech_begin = out.size();
  auto push_speech = [&](int id, int step, bool prompt) {
    if (id < 0) throw LayoutError("assemble: negative speech token");
    StreamPosition p;
    p.kind = PosKind::Speech;
    p.index = step;
    p.prompt = prompt;
    p.speech = id;
    out.positions.push_back(p);
  };
  for (int t = 0; t < out.speech_prompt; ++t) push_speech(c_prompt[t], t, true);
  for (int t = out.speech_prompt; t < out.speech_total; ++t)
    push_speech(c_target[t - out.speech_prompt], t, false);

  return out;
}

}  // namespace cadence
