// Nucleus sampling and the two-phase inference loop: prosody tokens are
// sampled first conditioned on the phonemes, then speech tokens with
// duration-guided stopping. Generation runs on the KV-cache decoder; stream
// positions are materialized up front with placeholder tokens and filled in
// as sampling proceeds, so masks always come from the real layout.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cadence/decode.hpp"
#include "cadence/eval.hpp"
#include "cadence/model.hpp"

namespace cadence {

struct SamplingConfig {
  double rho_p = 0.9;
  double rho_d = 0.9;
  double rho_c = 0.9;
  uint64_t seed = 0;
  int max_steps = 2048;
  bool duration_guided = true;
  int rerank_n = 1;

  void validate() const {
    for (double r : {rho_p, rho_d, rho_c})
      if (!(r > 0.0) || r > 1.0) throw SamplingError("sampling: rho must lie in (0, 1]");
    if (max_steps < 1) throw SamplingError("sampling: max_steps must be positive");
    if (rerank_n < 1) throw SamplingError("sampling: rerank_n must be positive");
  }
};

template <typename S>
std::vector<double> softmax_probs(const Eigen::Matrix<S, 1, Eigen::Dynamic>& logits) {
  int n = static_cast<int>(logits.cols());
  if (n == 0) throw SamplingError("softmax: empty logits");
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(logits(0, i)));
  std::vector<double> p(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(static_cast<double>(logits(0, i)) - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace detail {

struct NucleusSet {
  std::vector<int> ids;      // descending probability, ties by ascending id
  std::vector<double> probs; // unnormalized (original) masses
  double mass = 0.0;
};

inline void check_distribution(const std::vector<double>& probs) {
  if (probs.empty()) throw SamplingError("nucleus: empty distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw SamplingError("nucleus: probabilities must be finite and nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw SamplingError("nucleus: distribution sums to " + std::to_string(sum));
}

inline NucleusSet nucleus_set(const std::vector<double>& probs, double rho) {
  check_distribution(probs);
  if (!(rho > 0.0) || rho > 1.0) throw SamplingError("nucleus: rho must lie in (0, 1]");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  NucleusSet set;
  for (int id : order) {
    set.ids.push_back(id);
    set.probs.push_back(probs[id]);
    set.mass += probs[id];
    if (set.mass >= rho) break;  // smallest prefix reaching rho; shortfall keeps all
  }
  return set;
}

inline int sample_from(const NucleusSet& set, Rng& rng) {
  if (set.ids.empty()) throw SamplingError("nucleus: empty candidate set");
  double u = rng.next_double() * set.mass;
  double acc = 0.0;
  for (size_t i = 0; i < set.ids.size(); ++i) {
    acc += set.probs[i];
    if (u < acc) return set.ids[i];
  }
  return set.ids.back();
}

inline NucleusSet without_id(const NucleusSet& set, int id) {
  NucleusSet out;
  for (size_t i = 0; i < set.ids.size(); ++i) {
    if (set.ids[i] == id) continue;
    out.ids.push_back(set.ids[i]);
    out.probs.push_back(set.probs[i]);
    out.mass += set.probs[i];
  }
  return out;
}

inline int argmax_excluding(const std::vector<double>& probs, int banned) {
  int best = -1;
  double bp = -1.0;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
    if (i == banned) continue;
    if (probs[i] > bp) {
      bp = probs[i];
      best = i;
    }
  }
  if (best < 0) throw SamplingError("nucleus: no token outside the banned id");
  return best;
}

}  // namespace detail

inline int nucleus_sample(const std::vector<double>& probs, double rho, Rng& rng) {
  return detail::sample_from(detail::nucleus_set(probs, rho), rng);
}

// Samples the prosody plan for target phonemes, teacher-forcing the prompt
// slots. Fields the layout does not carry stay at neutral values (pitch 0,
// duration 1) for the caller to overwrite.
template <typename S>
ProsodySeq sample_prosody(const ArModel<S>& m, const PhonemeSeq& phonemes, int prompt_len,
                          const ProsodySeq& prompt_prosody, const LayoutOptions& opt,
                          const SamplingConfig& sc, Rng& rng) {
  sc.validate();
  if (!(opt.prosody && (opt.pitch || opt.duration)))
    throw SamplingError("prosody sampling: layout has no prosody stream");
  int l_total = static_cast<int>(phonemes.size());
  if (prompt_len < 0 || prompt_len >= l_total)
    throw SamplingError("prosody sampling: prompt must leave at least one target phoneme");
  if (static_cast<int>(prompt_prosody.pitch.size()) != prompt_len ||
      static_cast<int>(prompt_prosody.duration.size()) != prompt_len)
    throw SamplingError("prosody sampling: prompt prosody length mismatch");

  PhonemeSeq xp(phonemes.begin(), phonemes.begin() + prompt_len);
  PhonemeSeq xt(phonemes.begin() + prompt_len, phonemes.end());
  ProsodySeq plan = prompt_prosody;
  for (int i = prompt_len; i < l_total; ++i) {
    plan.pitch.push_back(0);
    plan.duration.push_back(1);
  }
  SequenceLayout layout = assemble_ar_sequence(xp, xt, plan, {}, {}, opt);
  AlignmentMap align(plan.duration);  // speech rows never consulted here

  ArDecoder<S> dec(m, decode_group_heads(layout, m.mask_cfg));
  int prefix = layout.sep_prosody_pos + 1;
  Mat<S> hid = dec.append(embed_positions(m, layout, 0, prefix),
                          decode_mask_rows(layout, align, m.mask_cfg, 0, prefix));
  int hid_row = prefix - 1;  // SEP_P, the predictor of slot 0

  ProsodySeq out = prompt_prosody;
  for (int i = 0; i < l_total; ++i) {
    if (i >= prompt_len) {
      int pitch = 0, dur = 1;
      if (layout.has_pitch) {
        std::vector<double> probs = softmax_probs<S>(dec.pitch_logits(hid, hid_row));
        pitch = nucleus_sample(probs, sc.rho_p, rng);
      }
      if (layout.has_duration) {
        std::vector<double> probs = softmax_probs<S>(dec.duration_logits(hid, hid_row));
        dur = nucleus_sample(probs, sc.rho_d, rng) + 1;
      }
      out.pitch.push_back(pitch);
      out.duration.push_back(dur);
    }
    if (i + 1 < l_total) {
      int pos = layout.position_of_prosody(i);
      if (layout.has_pitch) layout.positions[pos].pitch = out.pitch[i];
      if (layout.has_duration) layout.positions[pos].duration = out.duration[i];
      hid = dec.append(embed_positions(m, layout, pos, pos + 1),
                       decode_mask_rows(layout, align, m.mask_cfg, pos, pos + 1));
      hid_row = 0;
    }
  }
  return out;
}

struct SpeechResult {
  std::vector<int> tokens;  // full layer-1 stream, prompt frames included
  bool truncated = false;
  bool hit_eos = false;
};

// Generates layer-1 speech tokens. With duration guidance the total length
// is exactly the summed prosody durations and EOS draws are rejected;
// without it generation stops at the first EOS or at max_steps total frames.
template <typename S>
SpeechResult infer_speech(const ArModel<S>& m, const PhonemeSeq& phonemes, int prompt_len,
                          const ProsodySeq& prosody, const std::vector<int>& prompt_codec,
                          const LayoutOptions& opt, const SamplingConfig& sc, Rng& rng) {
  sc.validate();
  int l_total = static_cast<int>(phonemes.size());
  if (prompt_len < 0 || prompt_len >= l_total)
    throw SamplingError("speech sampling: prompt must leave at least one target phoneme");
  bool plain = m.mask_cfg.plain;
  if (plain && sc.duration_guided)
    throw SamplingError("speech sampling: duration guidance needs a prosody plan");

  int prompt_frames = static_cast<int>(prompt_codec.size());
  std::vector<int> durations;
  int d_total = 0;
  if (!plain) {
    durations = prosody.duration;
    if (static_cast<int>(durations.size()) != l_total)
      throw SamplingError("speech sampling: need one duration per phoneme");
    int prompt_sum = 0;
    for (int i = 0; i < l_total; ++i) {
      if (durations[i] < 1) throw SamplingError("speech sampling: nonpositive duration");
      d_total += durations[i];
      if (i < prompt_len) prompt_sum += durations[i];
    }
    if (prompt_sum != prompt_frames)
      throw SamplingError("speech sampling: prompt codec does not match prompt durations");
  }

  int total_span;
  if (sc.duration_guided) {
    if (d_total > sc.max_steps)
      throw SamplingError("speech sampling: total duration exceeds max_steps");
    total_span = d_total;
  } else {
    total_span = sc.max_steps;
    if (total_span <= prompt_frames)
      throw SamplingError("speech sampling: max_steps leaves no room after the prompt");
  }

  // The alignment map must cover every planned step; steps past the summed
  // durations keep pointing at the last phoneme.
  AlignmentMap align(plain ? std::vector<int>{1} : [&] {
    std::vector<int> ext = durations;
    if (total_span > d_total) ext.back() += total_span - d_total;
    return ext;
  }());

  PhonemeSeq xp(phonemes.begin(), phonemes.begin() + prompt_len);
  PhonemeSeq xt(phonemes.begin() + prompt_len, phonemes.end());
  std::vector<int> c_target(static_cast<size_t>(total_span - prompt_frames), 0);
  SequenceLayout layout =
      assemble_ar_sequence(xp, xt, plain ? ProsodySeq{} : prosody, prompt_codec, c_target, opt);

  ArDecoder<S> dec(m, decode_group_heads(layout, m.mask_cfg));
  int prefix = layout.speech_begin + prompt_frames;
  Mat<S> hid = dec.append(embed_positions(m, layout, 0, prefix),
                          decode_mask_rows(layout, align, m.mask_cfg, 0, prefix));
  int hid_row = prefix - 1;  // predictor of the first generated step

  SpeechResult res;
  res.tokens = prompt_codec;
  int eos = m.cfg.eos_id();
  for (int step = prompt_frames; step < total_span; ++step) {
    std::vector<double> probs = softmax_probs<S>(dec.speech_logits(hid, hid_row));
    detail::NucleusSet set = detail::nucleus_set(probs, sc.rho_c);
    int id = detail::sample_from(set, rng);
    if (id == eos) {
      if (sc.duration_guided) {
        detail::NucleusSet rest = detail::without_id(set, eos);
        id = rest.ids.empty() ? detail::argmax_excluding(probs, eos)
                              : detail::sample_from(rest, rng);
      } else {
        res.hit_eos = true;
        break;
      }
    }
    res.tokens.push_back(id);
    if (step + 1 < total_span) {
      int pos = layout.position_of_speech(step);
      layout.positions[pos].speech = id;
      hid = dec.append(embed_positions(m, layout, pos, pos + 1),
                       decode_mask_rows(layout, align, m.mask_cfg, pos, pos + 1));
      hid_row = 0;
    }
  }
  if (!sc.duration_guided && !res.hit_eos) res.truncated = true;
  return res;
}

// Greedily fills codec layers 2..N given layer-1 tokens, conditioning each
// layer on everything already filled. Prompt frames take their tokens from
// the reference matrix.
template <typename S>
CodecMatrix infer_nar(NarModel<S>& m, const PhonemeSeq& phonemes,
                      const ProsodySeq& prosody, const std::vector<int>& layer1,
                      const CodecMatrix& prompt_codec, int prompt_steps) {
  if (layer1.empty()) throw SamplingError("nar inference: empty layer-1 tokens");
  int n_layers = m.cfg.codec_layers;
  int frames = static_cast<int>(layer1.size());
  if (prompt_steps < 0 || prompt_steps >= frames)
    throw SamplingError("nar inference: prompt must leave target frames");
  if (prompt_steps > 0) {
    if (prompt_codec.layers() != n_layers || prompt_codec.frames() < prompt_steps)
      throw SamplingError("nar inference: prompt codec shape mismatch");
  }

  CodecMatrix out;
  out.tokens.assign(static_cast<size_t>(n_layers), std::vector<int>(layer1.size(), 0));
  out.tokens[0] = layer1;
  for (int j = 1; j < n_layers; ++j)
    for (int t = 0; t < prompt_steps; ++t) out.tokens[j][t] = prompt_codec.tokens[j][t];

  for (int target = 2; target <= n_layers; ++target) {
    NarItem item;
    item.phonemes = &phonemes;
    item.prosody = &prosody;
    item.codec = &out;
    item.prompt_steps = prompt_steps;
    item.target_layer = target;
    Tape<S> tape;
    Var hidden = nar_forward(tape, m, item);
    Var logits = nar_target_logits(tape, m, hidden, item);
    const Mat<S>& lv = tape.value(logits);
    for (int r = 0; r < lv.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < lv.cols(); ++c)
        if (lv(r, c) > lv(r, best)) best = c;
      out.tokens[target - 1][prompt_steps + r] = best;
    }
  }
  return out;
}

// Per-phoneme duration prediction from the standalone model: greedy argmax
// for target phonemes, prompt durations passed through.
template <typename S>
std::vector<int> predict_durations(DurationModel<S>& m, const PhonemeSeq& phonemes,
                                   const std::vector<int>& prompt_durations) {
  int l_total = static_cast<int>(phonemes.size());
  int prompt_len = static_cast<int>(prompt_durations.size());
  if (prompt_len >= l_total)
    throw SamplingError("duration prediction: prompt must leave target phonemes");
  Tape<S> tape;
  Var logits = duration_logits(tape, m, phonemes);
  const Mat<S>& lv = tape.value(logits);
  std::vector<int> out = prompt_durations;
  for (int i = prompt_len; i < l_total; ++i) {
    int best = 0;
    for (int c = 1; c < lv.cols(); ++c)
      if (lv(i, c) > lv(i, best)) best = c;
    out.push_back(best + 1);
  }
  return out;
}

// Index of the candidate closest to the reference in edit distance; ties go
// to the lowest index.
inline size_t rerank(const std::vector<std::vector<int>>& candidates,
                     const std::vector<int>& reference) {
  if (candidates.empty()) throw SamplingError("rerank: no candidates");
  size_t best = 0;
  int best_d = std::numeric_limits<int>::max();
  for (size_t i = 0; i < candidates.size(); ++i) {
    int d = edit_distance(reference, candidates[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace cadence
