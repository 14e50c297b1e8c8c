// Training loops for the three models. Examples are prepared once (layouts,
// masks, alignment) and reused across epochs; gradients accumulate over a
// fixed number of examples per optimizer step. Adam with an inverse-sqrt
// learning-rate schedule and linear warmup.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cadence/checkpoint.hpp"
#include "cadence/decode.hpp"
#include "cadence/model.hpp"
#include "cadence/types.hpp"

namespace cadence {

// Which conditioning stream the autoregressive model trains on.
enum class TrainVariant { Full, Plain, NoPitch, DurationExternal };

inline const char* variant_name(TrainVariant v) {
  switch (v) {
    case TrainVariant::Full: return "full";
    case TrainVariant::Plain: return "plain";
    case TrainVariant::NoPitch: return "no_pitch";
    case TrainVariant::DurationExternal: return "duration_external";
  }
  return "?";
}

inline TrainVariant variant_from_name(const std::string& s) {
  if (s == "full") return TrainVariant::Full;
  if (s == "plain") return TrainVariant::Plain;
  if (s == "no_pitch") return TrainVariant::NoPitch;
  if (s == "duration_external") return TrainVariant::DurationExternal;
  throw ConfigError("unknown train variant '" + s + "'");
}

inline LayoutOptions variant_layout_options(TrainVariant v) {
  LayoutOptions opt;
  switch (v) {
    case TrainVariant::Full: break;
    case TrainVariant::Plain: opt.prosody = false; break;
    case TrainVariant::NoPitch: opt.pitch = false; break;
    case TrainVariant::DurationExternal: opt.duration = false; break;
  }
  return opt;
}

struct TrainConfig {
  int epochs = 4;
  double peak_lr = 1e-3;
  int warmup_steps = 100;
  int accum = 8;  // examples per optimizer step
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;  // global gradient-norm clip, <= 0 disables
  uint64_t seed = 42;
  int log_every = 50;  // optimizer steps per log entry

  void validate() const {
    if (epochs < 1 || accum < 1 || warmup_steps < 1)
      throw ConfigError("train: epochs, accum, warmup must be positive");
    if (!(peak_lr > 0)) throw ConfigError("train: peak_lr must be positive");
  }
};

struct TrainLog {
  struct Entry {
    int step;
    double loss;
  };
  std::vector<Entry> entries;
  double final_loss = 0.0;
  int steps = 0;
  long long examples_seen = 0;

  json to_json() const {
    json arr = json::array();
    for (const auto& e : entries) arr.push_back(json{{"step", e.step}, {"loss", e.loss}});
    return json{{"entries", arr},
                {"final_loss", final_loss},
                {"steps", steps},
                {"examples_seen", examples_seen}};
  }
};

// Adam with linear warmup into an inverse square-root decay; the learning
// rate peaks exactly at warmup_steps.
template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter<S>*> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  double lr_at(int step) const {
    double t = static_cast<double>(step);
    double w = static_cast<double>(cfg_.warmup_steps);
    return cfg_.peak_lr * std::min(t / w, std::sqrt(w / t));
  }

  // Applies one update from the accumulated gradients, pre-divided by
  // `scale` (the number of examples accumulated).
  void step(double scale) {
    ++t_;
    double lr = lr_at(t_);
    S inv = static_cast<S>(1.0 / scale);

    if (cfg_.clip_norm > 0) {
      double sq = 0;
      for (auto* p : params_) sq += static_cast<double>((p->grad * inv).squaredNorm());
      double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) inv = static_cast<S>(inv * (cfg_.clip_norm / norm));
    }

    S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    S eps = static_cast<S>(cfg_.adam_eps);
    for (size_t i = 0; i < params_.size(); ++i) {
      Mat<S> g = params_[i]->grad * inv;
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
      Mat<S> mhat = m_[i] / static_cast<S>(bc1);
      Mat<S> vhat = v_[i] / static_cast<S>(bc2);
      params_[i]->value -=
          (static_cast<S>(lr) * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    }
  }

  int steps_taken() const { return t_; }

 private:
  std::vector<Parameter<S>*> params_;
  TrainConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  int t_ = 0;
};

// One prepared autoregressive example: layout, alignment, and masks are
// built once and reused every epoch.
struct ArExample {
  SequenceLayout layout;
  AlignmentMap align;
  HeadMasks masks;
};

inline ArExample prepare_ar_example(const Utterance& u, const ModelConfig& cfg,
                                    const MaskConfig& mask_cfg, TrainVariant variant) {
  ArExample ex;
  ex.align = AlignmentMap(u.durations);
  ProsodySeq pros = derive_prosody(u.pitch_frames, u.durations, cfg.quantizer(),
                                   cfg.max_duration);
  PhonemeSeq x_prompt(u.phonemes.begin(), u.phonemes.begin() + u.prompt_len);
  PhonemeSeq x_target(u.phonemes.begin() + u.prompt_len, u.phonemes.end());
  int pf = u.prompt_frames();
  const std::vector<int>& c1 = u.codec.tokens.at(0);
  std::vector<int> c_prompt(c1.begin(), c1.begin() + pf);
  std::vector<int> c_target(c1.begin() + pf, c1.end());
  ex.layout = assemble_ar_sequence(x_prompt, x_target, pros, c_prompt, c_target,
                                   variant_layout_options(variant));
  ex.masks = build_ar_mask(ex.layout, ex.align, mask_cfg);
  return ex;
}

namespace detail {

template <typename T>
void shuffle_indices(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(static_cast<int>(i))]);
}

inline void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss))
    throw TrainingError(std::string(what) + ": non-finite loss, training diverged");
}

}  // namespace detail

// Progress callback: (epoch, optimizer step, windowed mean loss).
using ProgressFn = std::function<void(int, int, double)>;

template <typename S>
TrainLog train_ar(ArModel<S>& model, const std::vector<Utterance>& data,
                  TrainVariant variant, const TrainConfig& tc,
                  const ProgressFn& progress = {}) {
  tc.validate();
  if (data.empty()) throw TrainingError("train: empty dataset");
  if ((variant == TrainVariant::Plain) != model.mask_cfg.plain)
    throw ConfigError("train: plain variant requires plain masks and vice versa");

  std::vector<ArExample> examples;
  examples.reserve(data.size());
  for (const auto& u : data)
    examples.push_back(prepare_ar_example(u, model.cfg, model.mask_cfg, variant));

  AdamOptimizer<S> opt(model.params(), tc);
  model.zero_grad();
  Rng order_rng(tc.seed, stream_id('t', 'o'));
  Rng drop_rng(tc.seed, stream_id('t', 'd'));
  TrainLog log;
  std::vector<int> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double window_loss = 0;
  int window_n = 0;
  int pending = 0;
  double epoch_loss = 0;
  long long epoch_n = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    detail::shuffle_indices(order, order_rng);
    epoch_loss = 0;
    epoch_n = 0;
    for (int idx : order) {
      ArExample& ex = examples[idx];
      Tape<S> tape;
      Var hidden = ar_forward(tape, model, ex.layout, ex.masks,
                              model.cfg.dropout > 0 ? &drop_rng : nullptr);
      Var loss = ar_loss(tape, model, hidden, ex.layout);
      double lv = static_cast<double>(tape.value(loss)(0, 0));
      detail::check_finite(lv, "train_ar");
      tape.backward(loss);
      ++pending;
      ++log.examples_seen;
      window_loss += lv;
      ++window_n;
      epoch_loss += lv;
      ++epoch_n;
      if (pending == tc.accum) {
        opt.step(pending);
        model.zero_grad();
        pending = 0;
        if (opt.steps_taken() % tc.log_every == 0) {
          log.entries.push_back({opt.steps_taken(), window_loss / window_n});
          if (progress) progress(epoch, opt.steps_taken(), window_loss / window_n);
          window_loss = 0;
          window_n = 0;
        }
      }
    }
    if (pending > 0) {
      opt.step(pending);
      model.zero_grad();
      pending = 0;
    }
  }
  log.steps = opt.steps_taken();
  log.final_loss = epoch_n > 0 ? epoch_loss / epoch_n : 0.0;
  return log;
}

struct NarExample {
  PhonemeSeq phonemes;
  ProsodySeq prosody;
  CodecMatrix codec;
  int prompt_steps;
};

template <typename S>
TrainLog train_nar(NarModel<S>& model, const std::vector<Utterance>& data,
                   const TrainConfig& tc, const ProgressFn& progress = {}) {
  tc.validate();
  if (data.empty()) throw TrainingError("train: empty dataset");

  std::vector<NarExample> examples;
  examples.reserve(data.size());
  for (const auto& u : data) {
    NarExample ex;
    ex.phonemes = u.phonemes;
    ex.prosody = derive_prosody(u.pitch_frames, u.durations, model.cfg.quantizer(),
                                model.cfg.max_duration);
    ex.codec = u.codec;
    ex.prompt_steps = u.prompt_frames();
    examples.push_back(std::move(ex));
  }

  AdamOptimizer<S> opt(model.params(), tc);
  model.zero_grad();
  Rng order_rng(tc.seed, stream_id('n', 'o'));
  Rng layer_rng(tc.seed, stream_id('n', 'l'));
  Rng drop_rng(tc.seed, stream_id('n', 'd'));
  TrainLog log;
  std::vector<int> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double window_loss = 0;
  int window_n = 0;
  int pending = 0;
  double epoch_loss = 0;
  long long epoch_n = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    detail::shuffle_indices(order, order_rng);
    epoch_loss = 0;
    epoch_n = 0;
    for (int idx : order) {
      NarExample& ex = examples[idx];
      NarItem item;
      item.phonemes = &ex.phonemes;
      item.prosody = &ex.prosody;
      item.codec = &ex.codec;
      item.prompt_steps = ex.prompt_steps;
      item.target_layer = 2 + layer_rng.uniform_int(model.cfg.codec_layers - 1);
      if (ex.prompt_steps >= ex.codec.frames()) continue;  // nothing to refine
      Tape<S> tape;
      Var hidden = nar_forward(tape, model, item);
      Var loss = nar_loss(tape, model, hidden, item);
      double lv = static_cast<double>(tape.value(loss)(0, 0));
      detail::check_finite(lv, "train_nar");
      tape.backward(loss);
      ++pending;
      ++log.examples_seen;
      window_loss += lv;
      ++window_n;
      epoch_loss += lv;
      ++epoch_n;
      if (pending == tc.accum) {
        opt.step(pending);
        model.zero_grad();
        pending = 0;
        if (opt.steps_taken() % tc.log_every == 0) {
          log.entries.push_back({opt.steps_taken(), window_loss / window_n});
          if (progress) progress(epoch, opt.steps_taken(), window_loss / window_n);
          window_loss = 0;
          window_n = 0;
        }
      }
    }
    if (pending > 0) {
      opt.step(pending);
      model.zero_grad();
      pending = 0;
    }
  }
  log.steps = opt.steps_taken();
  log.final_loss = epoch_n > 0 ? epoch_loss / epoch_n : 0.0;
  return log;
}

template <typename S>
TrainLog train_duration(DurationModel<S>& model, const std::vector<Utterance>& data,
                        const TrainConfig& tc, const ProgressFn& progress = {}) {
  tc.validate();
  if (data.empty()) throw TrainingError("train: empty dataset");

  AdamOptimizer<S> opt(model.params(), tc);
  model.zero_grad();
  Rng order_rng(tc.seed, stream_id('d', 'o'));
  TrainLog log;
  std::vector<int> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double window_loss = 0;
  int window_n = 0;
  int pending = 0;
  double epoch_loss = 0;
  long long epoch_n = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    detail::shuffle_indices(order, order_rng);
    epoch_loss = 0;
    epoch_n = 0;
    for (int idx : order) {
      const Utterance& u = data[idx];
      Tape<S> tape;
      Var loss = duration_loss(tape, model, u.phonemes, u.durations, u.prompt_len);
      double lv = static_cast<double>(tape.value(loss)(0, 0));
      detail::check_finite(lv, "train_duration");
      tape.backward(loss);
      ++pending;
      ++log.examples_seen;
      window_loss += lv;
      ++window_n;
      epoch_loss += lv;
      ++epoch_n;
      if (pending == tc.accum) {
        opt.step(pending);
        model.zero_grad();
        pending = 0;
        if (opt.steps_taken() % tc.log_every == 0) {
          log.entries.push_back({opt.steps_taken(), window_loss / window_n});
          if (progress) progress(epoch, opt.steps_taken(), window_loss / window_n);
          window_loss = 0;
          window_n = 0;
        }
      }
    }
    if (pending > 0) {
      opt.step(pending);
      model.zero_grad();
      pending = 0;
    }
  }
  log.steps = opt.steps_taken();
  log.final_loss = epoch_n > 0 ? epoch_loss / epoch_n : 0.0;
  return log;
}

}  // namespace cadence
