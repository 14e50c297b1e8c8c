// Transformer models over the single-stream layout.
//
// ArModel   predicts the prosody plan and the first codec layer, token by
//           token, under the windowed attention masks.
// NarModel  fills codec layers 2..N in parallel given phonemes, the prosody
//           plan, and all layers below the target layer.
// DurationModel predicts a duration class per phoneme from the phoneme
//           sequence alone, for the variant that keeps durations out of the
//           token stream.
// All three share the same pre-norm block structure and the tape autograd.
#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "cadence/errors.hpp"
#include "cadence/layout.hpp"
#include "cadence/masking.hpp"
#include "cadence/nn.hpp"
#include "cadence/rng.hpp"

namespace cadence {

using nn::Mat;
using nn::Parameter;
using nn::Tape;
using nn::Var;

struct ModelConfig {
  int layers = 2;
  int dim = 64;
  int ff = 256;
  int heads = 4;
  int phoneme_vocab = 32;
  int pitch_buckets = 256;
  double pitch_min = 0.0;
  double pitch_max = 1.0;
  int max_duration = 32;
  int codec_vocab = 64;
  int codec_layers = 2;
  double dropout = 0.0;
  int max_positions = 2048;

  int head_dim() const { return dim / heads; }
  int eos_id() const { return codec_vocab; }
  PitchQuantizer quantizer() const { return {pitch_min, pitch_max, pitch_buckets}; }

  void validate() const {
    if (layers < 1 || dim < 1 || ff < 1) throw ConfigError("model: bad core sizes");
    if (heads < 1 || dim % heads != 0)
      throw ConfigError("model: heads must divide dim");
    if (phoneme_vocab < 1 || pitch_buckets < 1 || max_duration < 1 || codec_vocab < 1)
      throw ConfigError("model: bad vocabulary sizes");
    if (!(pitch_max > pitch_min)) throw ConfigError("model: bad pitch range");
    if (codec_layers < 1) throw ConfigError("model: codec_layers must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: bad dropout");
  }
};

// Sinusoidal position rows for arbitrary position indices.
template <typename S>
Mat<S> positional_rows(const std::vector<int>& pos, int dim) {
  Mat<S> out(static_cast<int>(pos.size()), dim);
  for (size_t i = 0; i < pos.size(); ++i) {
    for (int j = 0; j < dim; j += 2) {
      double angle = pos[i] / std::pow(10000.0, static_cast<double>(j) / dim);
      out(static_cast<int>(i), j) = static_cast<S>(std::sin(angle));
      if (j + 1 < dim) out(static_cast<int>(i), j + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return out;
}

template <typename S>
struct Block {
  std::vector<Parameter<S>> wq, wk, wv;  // per head, dim x head_dim
  Parameter<S> wo;                       // dim x dim
  Parameter<S> ln1_g, ln1_b, ln2_g, ln2_b;
  Parameter<S> w1, b1, w2, b2;           // feed-forward
};

template <typename S>
struct TransformerCore {
  std::vector<Block<S>> blocks;
  Parameter<S> lnf_g, lnf_b;

  void build(const ModelConfig& cfg, const std::string& prefix) {
    blocks.clear();
    for (int l = 0; l < cfg.layers; ++l) {
      Block<S> b;
      std::string bp = prefix + ".blk" + std::to_string(l);
      for (int h = 0; h < cfg.heads; ++h) {
        b.wq.emplace_back(bp + ".q" + std::to_string(h), cfg.dim, cfg.head_dim());
        b.wk.emplace_back(bp + ".k" + std::to_string(h), cfg.dim, cfg.head_dim());
        b.wv.emplace_back(bp + ".v" + std::to_string(h), cfg.dim, cfg.head_dim());
      }
      b.wo = Parameter<S>(bp + ".o", cfg.dim, cfg.dim);
      b.ln1_g = Parameter<S>(bp + ".ln1g", 1, cfg.dim, nn::InitKind::One);
      b.ln1_b = Parameter<S>(bp + ".ln1b", 1, cfg.dim, nn::InitKind::Zero);
      b.ln2_g = Parameter<S>(bp + ".ln2g", 1, cfg.dim, nn::InitKind::One);
      b.ln2_b = Parameter<S>(bp + ".ln2b", 1, cfg.dim, nn::InitKind::Zero);
      b.w1 = Parameter<S>(bp + ".ff1", cfg.dim, cfg.ff);
      b.b1 = Parameter<S>(bp + ".ff1b", 1, cfg.ff, nn::InitKind::Zero);
      b.w2 = Parameter<S>(bp + ".ff2", cfg.ff, cfg.dim);
      b.b2 = Parameter<S>(bp + ".ff2b", 1, cfg.dim, nn::InitKind::Zero);
      blocks.push_back(std::move(b));
    }
    lnf_g = Parameter<S>(prefix + ".lnfg", 1, cfg.dim, nn::InitKind::One);
    lnf_b = Parameter<S>(prefix + ".lnfb", 1, cfg.dim, nn::InitKind::Zero);
  }

  void collect(std::vector<Parameter<S>*>& out) {
    for (auto& b : blocks) {
      for (auto& p : b.wq) out.push_back(&p);
      for (auto& p : b.wk) out.push_back(&p);
      for (auto& p : b.wv) out.push_back(&p);
      out.push_back(&b.wo);
      out.push_back(&b.ln1_g);
      out.push_back(&b.ln1_b);
      out.push_back(&b.ln2_g);
      out.push_back(&b.ln2_b);
      out.push_back(&b.w1);
      out.push_back(&b.b1);
      out.push_back(&b.w2);
      out.push_back(&b.b2);
    }
    out.push_back(&lnf_g);
    out.push_back(&lnf_b);
  }
};

// Expands group masks into one mask pointer per head, in group order.
inline std::vector<const AttnMask*> per_head_masks(const HeadMasks& masks) {
  std::vector<const AttnMask*> out;
  for (const auto& g : masks.groups)
    for (int h = 0; h < g.heads; ++h) out.push_back(&g.mask);
  return out;
}

// Pre-norm transformer stack. head_masks has one entry per head; an empty
// vector (or null entries) means unmasked attention. drop_rng must be given
// when dropout is active.
template <typename S>
Var core_forward(Tape<S>& tape, TransformerCore<S>& core, const ModelConfig& cfg, Var x,
                 const std::vector<const AttnMask*>& head_masks, Rng* drop_rng = nullptr) {
  if (!head_masks.empty() && static_cast<int>(head_masks.size()) != cfg.heads)
    throw ModelError("core_forward: need one mask per head");
  S drop = static_cast<S>(cfg.dropout);
  if (drop > 0 && !drop_rng) throw ModelError("core_forward: dropout needs an rng");
  S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(cfg.head_dim()));

  for (auto& blk : core.blocks) {
    Var h = tape.layer_norm(x, tape.leaf(&blk.ln1_g), tape.leaf(&blk.ln1_b));
    std::vector<Var> head_out;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      Var q = tape.matmul(h, tape.leaf(&blk.wq[hd]));
      Var k = tape.matmul(h, tape.leaf(&blk.wk[hd]));
      Var v = tape.matmul(h, tape.leaf(&blk.wv[hd]));
      Var scores = tape.scale(tape.matmul_nt(q, k), inv_sqrt_hd);
      const AttnMask* m = head_masks.empty() ? nullptr : head_masks[hd];
      Var attn = tape.masked_softmax(scores, m);
      head_out.push_back(tape.matmul(attn, v));
    }
    Var merged = tape.matmul(tape.concat_cols(head_out), tape.leaf(&blk.wo));
    if (drop > 0) merged = tape.dropout(merged, drop, *drop_rng);
    x = tape.add(x, merged);

    Var h2 = tape.layer_norm(x, tape.leaf(&blk.ln2_g), tape.leaf(&blk.ln2_b));
    Var f = tape.add_rowvec(tape.matmul(h2, tape.leaf(&blk.w1)), tape.leaf(&blk.b1));
    f = tape.gelu(f);
    f = tape.add_rowvec(tape.matmul(f, tape.leaf(&blk.w2)), tape.leaf(&blk.b2));
    if (drop > 0) f = tape.dropout(f, drop, *drop_rng);
    x = tape.add(x, f);
  }
  return tape.layer_norm(x, tape.leaf(&core.lnf_g), tape.leaf(&core.lnf_b));
}

namespace detail {

template <typename S>
void init_normal(Parameter<S>& p, Rng& rng, double stddev) {
  for (int r = 0; r < p.value.rows(); ++r)
    for (int c = 0; c < p.value.cols(); ++c)
      p.value(r, c) = static_cast<S>(rng.normal(0.0, stddev));
}

template <typename S>
void init_params(std::vector<Parameter<S>*> params, uint64_t seed) {
  Rng rng(seed, stream_id('i', 'n'));
  for (Parameter<S>* p : params) {
    switch (p->init_kind) {
      case nn::InitKind::One: p->value.setOnes(); break;
      case nn::InitKind::Zero: p->value.setZero(); break;
      case nn::InitKind::Normal: init_normal(*p, rng, 0.02); break;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Autoregressive model
// ---------------------------------------------------------------------------

template <typename S>
struct ArModel {
  ModelConfig cfg;
  MaskConfig mask_cfg;

  Parameter<S> emb_phoneme, emb_pitch, emb_dur, emb_codec, emb_sep_p, emb_sep_c;
  TransformerCore<S> core;
  Parameter<S> head_pitch_w, head_pitch_b;
  Parameter<S> head_dur_w, head_dur_b;
  Parameter<S> head_speech_w, head_speech_b;

  ArModel(const ModelConfig& c, const MaskConfig& m) : cfg(c), mask_cfg(m) {
    cfg.validate();
    mask_cfg.validate();
    if (mask_cfg.total_heads() != cfg.heads)
      throw ConfigError("ar model: mask head groups must sum to model heads");
    emb_phoneme = Parameter<S>("ar.emb.phoneme", cfg.phoneme_vocab, cfg.dim);
    emb_pitch = Parameter<S>("ar.emb.pitch", cfg.pitch_buckets, cfg.dim);
    emb_dur = Parameter<S>("ar.emb.dur", cfg.max_duration, cfg.dim);
    emb_codec = Parameter<S>("ar.emb.codec", cfg.codec_vocab, cfg.dim);
    emb_sep_p = Parameter<S>("ar.emb.sep_p", 1, cfg.dim);
    emb_sep_c = Parameter<S>("ar.emb.sep_c", 1, cfg.dim);
    core.build(cfg, "ar");
    head_pitch_w = Parameter<S>("ar.head.pitch", cfg.dim, cfg.pitch_buckets);
    head_pitch_b = Parameter<S>("ar.head.pitchb", 1, cfg.pitch_buckets, nn::InitKind::Zero);
    head_dur_w = Parameter<S>("ar.head.dur", cfg.dim, cfg.max_duration);
    head_dur_b = Parameter<S>("ar.head.durb", 1, cfg.max_duration, nn::InitKind::Zero);
    head_speech_w = Parameter<S>("ar.head.speech", cfg.dim, cfg.codec_vocab + 1);
    head_speech_b = Parameter<S>("ar.head.speechb", 1, cfg.codec_vocab + 1,
                                 nn::InitKind::Zero);
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out = {&emb_phoneme, &emb_pitch, &emb_dur,
                                      &emb_codec,   &emb_sep_p, &emb_sep_c};
    core.collect(out);
    out.push_back(&head_pitch_w);
    out.push_back(&head_pitch_b);
    out.push_back(&head_dur_w);
    out.push_back(&head_dur_b);
    out.push_back(&head_speech_w);
    out.push_back(&head_speech_b);
    return out;
  }

  void init(uint64_t seed) { detail::init_params<S>(params(), seed); }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
};

// Per-table gather ids for a layout, -1 where a table does not apply.
struct StreamIds {
  std::vector<int> phoneme, pitch, dur, codec, sep_p, sep_c, pos;
};

inline StreamIds stream_ids(const SequenceLayout& layout) {
  StreamIds ids;
  int s = layout.size();
  ids.phoneme.assign(s, -1);
  ids.pitch.assign(s, -1);
  ids.dur.assign(s, -1);
  ids.codec.assign(s, -1);
  ids.sep_p.assign(s, -1);
  ids.sep_c.assign(s, -1);
  ids.pos.resize(s);
  for (int i = 0; i < s; ++i) {
    const StreamPosition& p = layout.positions[i];
    ids.pos[i] = i;
    switch (p.kind) {
      case PosKind::Phoneme: ids.phoneme[i] = p.phoneme; break;
      case PosKind::SepProsody: ids.sep_p[i] = 0; break;
      case PosKind::Prosody:
        if (p.pitch >= 0) ids.pitch[i] = p.pitch;
        if (p.duration >= 1) ids.dur[i] = p.duration - 1;
        break;
      case PosKind::SepSpeech: ids.sep_c[i] = 0; break;
      case PosKind::Speech: ids.codec[i] = p.speech; break;
    }
  }
  return ids;
}

template <typename S>
Var ar_forward(Tape<S>& tape, ArModel<S>& m, const SequenceLayout& layout,
               const HeadMasks& masks, Rng* drop_rng = nullptr) {
  if (layout.size() > m.cfg.max_positions)
    throw ModelError("ar_forward: sequence exceeds max_positions");
  StreamIds ids = stream_ids(layout);
  Var x = tape.embed_rows(tape.leaf(&m.emb_phoneme), ids.phoneme);
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_pitch), ids.pitch));
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_dur), ids.dur));
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_codec), ids.codec));
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_sep_p), ids.sep_p));
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_sep_c), ids.sep_c));
  x = tape.add(x, tape.constant(positional_rows<S>(ids.pos, m.cfg.dim)));
  return core_forward(tape, m.core, m.cfg, x, per_head_masks(masks), drop_rng);
}

// Mean cross-entropy over every non-prompt prediction the layout defines:
// pitch and duration for target prosody slots, codec tokens for target
// speech steps, and end-of-sequence after the last speech token.
template <typename S>
Var ar_loss(Tape<S>& tape, ArModel<S>& m, Var hidden, const SequenceLayout& layout) {
  std::vector<int> pros_rows, pitch_targets, dur_targets;
  for (int i = layout.phoneme_prompt; i < layout.phoneme_total && layout.has_prosody; ++i) {
    const StreamPosition& p = layout.positions[layout.position_of_prosody(i)];
    pros_rows.push_back(layout.prosody_predictor(i));
    pitch_targets.push_back(layout.has_pitch ? p.pitch : -1);
    dur_targets.push_back(layout.has_duration ? p.duration - 1 : -1);
  }

  std::vector<int> speech_rows, speech_targets;
  bool has_target_speech = layout.speech_total > layout.speech_prompt;
  for (int t = layout.speech_prompt; t < layout.speech_total; ++t) {
    speech_rows.push_back(layout.speech_predictor(t));
    speech_targets.push_back(layout.positions[layout.position_of_speech(t)].speech);
  }
  if (has_target_speech) {
    speech_rows.push_back(layout.speech_predictor(layout.speech_total));
    speech_targets.push_back(m.cfg.eos_id());
  }

  int count = 0;
  for (int t : pitch_targets) count += t >= 0;
  for (int t : dur_targets) count += t >= 0;
  count += static_cast<int>(speech_targets.size());
  if (count == 0) throw ModelError("ar_loss: no target positions to train on");

  std::vector<Var> terms;
  if (!pros_rows.empty()) {
    Var h = tape.select_rows(hidden, pros_rows);
    if (layout.has_pitch) {
      Var logits = tape.add_rowvec(tape.matmul(h, tape.leaf(&m.head_pitch_w)),
                                   tape.leaf(&m.head_pitch_b));
      terms.push_back(tape.ce_sum(logits, pitch_targets));
    }
    if (layout.has_duration) {
      Var logits = tape.add_rowvec(tape.matmul(h, tape.leaf(&m.head_dur_w)),
                                   tape.leaf(&m.head_dur_b));
      terms.push_back(tape.ce_sum(logits, dur_targets));
    }
  }
  if (!speech_rows.empty()) {
    Var h = tape.select_rows(hidden, speech_rows);
    Var logits = tape.add_rowvec(tape.matmul(h, tape.leaf(&m.head_speech_w)),
                                 tape.leaf(&m.head_speech_b));
    terms.push_back(tape.ce_sum(logits, speech_targets));
  }

  Var total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
  return tape.scale(total, S(1) / static_cast<S>(count));
}

// ---------------------------------------------------------------------------
// Non-autoregressive refinement model
// ---------------------------------------------------------------------------

template <typename S>
struct NarModel {
  ModelConfig cfg;
  bool use_pitch = true;
  bool use_duration = true;

  Parameter<S> emb_phoneme, emb_pitch, emb_dur;
  std::vector<Parameter<S>> emb_codec;  // one table per codec layer
  Parameter<S> emb_layer;               // one row per target layer j in [2, N]
  TransformerCore<S> core;
  std::vector<Parameter<S>> head_w, head_b;  // one head per target layer

  NarModel(const ModelConfig& c, bool pitch = true, bool duration = true)
      : cfg(c), use_pitch(pitch), use_duration(duration) {
    cfg.validate();
    if (cfg.codec_layers < 2)
      throw ConfigError("nar model: needs at least two codec layers");
    emb_phoneme = Parameter<S>("nar.emb.phoneme", cfg.phoneme_vocab, cfg.dim);
    emb_pitch = Parameter<S>("nar.emb.pitch", cfg.pitch_buckets, cfg.dim);
    emb_dur = Parameter<S>("nar.emb.dur", cfg.max_duration, cfg.dim);
    for (int l = 0; l < cfg.codec_layers; ++l)
      emb_codec.emplace_back("nar.emb.codec" + std::to_string(l), cfg.codec_vocab, cfg.dim);
    emb_layer = Parameter<S>("nar.emb.layer", cfg.codec_layers - 1, cfg.dim);
    core.build(cfg, "nar");
    for (int j = 2; j <= cfg.codec_layers; ++j) {
      head_w.emplace_back("nar.head" + std::to_string(j), cfg.dim, cfg.codec_vocab);
      head_b.emplace_back("nar.head" + std::to_string(j) + "b", 1, cfg.codec_vocab,
                          nn::InitKind::Zero);
    }
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out = {&emb_phoneme, &emb_pitch, &emb_dur};
    for (auto& p : emb_codec) out.push_back(&p);
    out.push_back(&emb_layer);
    core.collect(out);
    for (auto& p : head_w) out.push_back(&p);
    for (auto& p : head_b) out.push_back(&p);
    return out;
  }

  void init(uint64_t seed) { detail::init_params<S>(params(), seed); }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
};

// One refinement task: predict codec layer `target_layer` (1-based, >= 2).
// Prompt frames embed all codec layers; target frames embed only layers
// below the target. pos_index overrides position indices when non-empty.
struct NarItem {
  const PhonemeSeq* phonemes = nullptr;
  const ProsodySeq* prosody = nullptr;
  const CodecMatrix* codec = nullptr;
  int prompt_steps = 0;
  int target_layer = 2;
  std::vector<int> pos_index;
};

template <typename S>
Var nar_forward(Tape<S>& tape, NarModel<S>& m, const NarItem& item) {
  int l_total = static_cast<int>(item.phonemes->size());
  int frames = item.codec->frames();
  int s = l_total + frames;
  if (item.target_layer < 2 || item.target_layer > m.cfg.codec_layers)
    throw ModelError("nar_forward: target layer out of range");
  if (item.codec->layers() != m.cfg.codec_layers)
    throw ModelError("nar_forward: codec layer count mismatch");
  if (item.prompt_steps < 0 || item.prompt_steps > frames)
    throw ModelError("nar_forward: bad prompt length");
  if (m.use_pitch || m.use_duration) {
    if (static_cast<int>(item.prosody->pitch.size()) != l_total)
      throw ModelError("nar_forward: prosody length mismatch");
  }
  if (s > m.cfg.max_positions) throw ModelError("nar_forward: sequence too long");

  std::vector<int> ph_ids(s, -1), pitch_ids(s, -1), dur_ids(s, -1), layer_ids(s, 0);
  for (int i = 0; i < l_total; ++i) {
    ph_ids[i] = (*item.phonemes)[i];
    if (m.use_pitch) pitch_ids[i] = item.prosody->pitch[i];
    if (m.use_duration) dur_ids[i] = item.prosody->duration[i] - 1;
  }
  std::fill(layer_ids.begin(), layer_ids.end(), item.target_layer - 2);

  Var x = tape.embed_rows(tape.leaf(&m.emb_phoneme), ph_ids);
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_pitch), pitch_ids));
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_dur), dur_ids));
  for (int l = 0; l < m.cfg.codec_layers; ++l) {
    std::vector<int> ids(s, -1);
    bool used = false;
    for (int t = 0; t < frames; ++t) {
      bool in_prompt = t < item.prompt_steps;
      if (in_prompt || l < item.target_layer - 1) {
        ids[l_total + t] = item.codec->tokens[l][t];
        used = true;
      }
    }
    if (used) x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_codec[l]), ids));
  }
  x = tape.add(x, tape.embed_rows(tape.leaf(&m.emb_layer), layer_ids));

  std::vector<int> pos = item.pos_index;
  if (pos.empty()) {
    pos.resize(s);
    for (int i = 0; i < s; ++i) pos[i] = i;
  } else if (static_cast<int>(pos.size()) != s) {
    throw ModelError("nar_forward: pos_index length mismatch");
  }
  x = tape.add(x, tape.constant(positional_rows<S>(pos, m.cfg.dim)));
  return core_forward(tape, m.core, m.cfg, x, {});
}

// Logits for the target layer at the target frames (rows beyond the prompt).
template <typename S>
Var nar_target_logits(Tape<S>& tape, NarModel<S>& m, Var hidden, const NarItem& item) {
  int l_total = static_cast<int>(item.phonemes->size());
  std::vector<int> rows;
  for (int t = item.prompt_steps; t < item.codec->frames(); ++t) rows.push_back(l_total + t);
  if (rows.empty()) throw ModelError("nar: no target frames");
  Var h = tape.select_rows(hidden, rows);
  int hi = item.target_layer - 2;
  return tape.add_rowvec(tape.matmul(h, tape.leaf(&m.head_w[hi])), tape.leaf(&m.head_b[hi]));
}

template <typename S>
Var nar_loss(Tape<S>& tape, NarModel<S>& m, Var hidden, const NarItem& item) {
  Var logits = nar_target_logits(tape, m, hidden, item);
  std::vector<int> targets;
  for (int t = item.prompt_steps; t < item.codec->frames(); ++t)
    targets.push_back(item.codec->tokens[item.target_layer - 1][t]);
  Var sum = tape.ce_sum(logits, targets);
  return tape.scale(sum, S(1) / static_cast<S>(targets.size()));
}

// ---------------------------------------------------------------------------
// Standalone duration predictor
// ---------------------------------------------------------------------------

template <typename S>
struct DurationModel {
  ModelConfig cfg;
  Parameter<S> emb_phoneme;
  TransformerCore<S> core;
  Parameter<S> head_w, head_b;

  explicit DurationModel(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    emb_phoneme = Parameter<S>("dur.emb.phoneme", cfg.phoneme_vocab, cfg.dim);
    core.build(cfg, "dur");
    head_w = Parameter<S>("dur.head", cfg.dim, cfg.max_duration);
    head_b = Parameter<S>("dur.headb", 1, cfg.max_duration, nn::InitKind::Zero);
  }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out = {&emb_phoneme};
    core.collect(out);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  void init(uint64_t seed) { detail::init_params<S>(params(), seed); }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
};

// Bidirectional forward over the phoneme sequence; returns duration logits
// for every phoneme position.
template <typename S>
Var duration_logits(Tape<S>& tape, DurationModel<S>& m, const PhonemeSeq& phonemes) {
  if (phonemes.empty()) throw ModelError("duration model: empty input");
  int s = static_cast<int>(phonemes.size());
  if (s > m.cfg.max_positions) throw ModelError("duration model: sequence too long");
  std::vector<int> pos(s);
  for (int i = 0; i < s; ++i) pos[i] = i;
  Var x = tape.embed_rows(tape.leaf(&m.emb_phoneme), phonemes);
  x = tape.add(x, tape.constant(positional_rows<S>(pos, m.cfg.dim)));
  Var hidden = core_forward(tape, m.core, m.cfg, x, {});
  return tape.add_rowvec(tape.matmul(hidden, tape.leaf(&m.head_w)), tape.leaf(&m.head_b));
}

template <typename S>
Var duration_loss(Tape<S>& tape, DurationModel<S>& m, const PhonemeSeq& phonemes,
                  const std::vector<int>& durations, int first_target) {
  Var logits = duration_logits(tape, m, phonemes);
  std::vector<int> targets(phonemes.size(), -1);
  int count = 0;
  for (size_t i = first_target; i < durations.size(); ++i) {
    targets[i] = clip_duration(durations[i], m.cfg.max_duration) - 1;
    ++count;
  }
  if (count == 0) throw ModelError("duration model: no target positions");
  return tape.scale(tape.ce_sum(logits, std::move(targets)), S(1) / static_cast<S>(count));
}

}  // namespace cadence
