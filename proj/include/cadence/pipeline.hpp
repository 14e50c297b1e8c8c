// Experiment pipeline behind the CLI: dataset generation, variant training,
// synthesis, evaluation, mask rendering, and the attention-window sweep.
// Every command materializes its outputs under the configured output root
// and writes the resolved configuration beside them.
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "cadence/checkpoint.hpp"
#include "cadence/eval.hpp"
#include "cadence/runconfig.hpp"
#include "cadence/sampling.hpp"
#include "cadence/train.hpp"

namespace cadence {

// ---------------------------------------------------------------------------
// System variants
// ---------------------------------------------------------------------------

// A system variant bundles the switches that turn the full configuration
// into one of the studied ablations. Window-size changes are orthogonal and
// applied through MaskConfig::window_k.
enum class SystemVariant { Full, Baseline, NoPitch, NoMasking, DurationExternal };

inline const char* variant_label(SystemVariant v) {
  switch (v) {
    case SystemVariant::Full: return "full";
    case SystemVariant::Baseline: return "baseline";
    case SystemVariant::NoPitch: return "no_pitch";
    case SystemVariant::NoMasking: return "no_masking";
    case SystemVariant::DurationExternal: return "duration_external";
  }
  throw ConfigError("variant_label: bad variant");
}

inline SystemVariant variant_from_label(const std::string& s) {
  for (SystemVariant v : {SystemVariant::Full, SystemVariant::Baseline, SystemVariant::NoPitch,
                          SystemVariant::NoMasking, SystemVariant::DurationExternal})
    if (s == variant_label(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

inline TrainVariant variant_train(SystemVariant v) {
  switch (v) {
    case SystemVariant::Baseline: return TrainVariant::Plain;
    case SystemVariant::NoPitch: return TrainVariant::NoPitch;
    case SystemVariant::DurationExternal: return TrainVariant::DurationExternal;
    default: return TrainVariant::Full;
  }
}

inline LayoutOptions variant_layout(SystemVariant v) {
  return variant_layout_options(variant_train(v));
}

// Baseline drops the prosody segment and reads the whole phoneme sequence;
// no_masking removes the window and the head grouping but keeps prosody.
inline MaskConfig variant_mask(SystemVariant v, MaskConfig m) {
  if (v == SystemVariant::Baseline) {
    m.plain = true;
    m.grouping = false;
  }
  if (v == SystemVariant::NoMasking) {
    m.window_k = -1;
    m.grouping = false;
  }
  return m;
}

// Without a duration plan the baseline must stop on EOS.
inline SamplingConfig variant_sampling(SystemVariant v, SamplingConfig sc) {
  if (v == SystemVariant::Baseline) sc.duration_guided = false;
  return sc;
}

// ---------------------------------------------------------------------------
// Artifact paths
// ---------------------------------------------------------------------------

namespace paths {

inline std::filesystem::path data_dir(const RunConfig& c) {
  return std::filesystem::path(c.out_dir) / "data";
}
inline std::filesystem::path split_file(const RunConfig& c, const std::string& split) {
  return data_dir(c) / (split + ".jsonl");
}
inline std::filesystem::path run_dir(const RunConfig& c, const std::string& name) {
  return std::filesystem::path(c.out_dir) / "runs" / name;
}
inline std::filesystem::path masks_dir(const RunConfig& c) {
  return std::filesystem::path(c.out_dir) / "masks";
}

}  // namespace paths

inline std::vector<Utterance> load_split(const RunConfig& cfg, const std::string& split) {
  std::filesystem::path p = paths::split_file(cfg, split);
  if (!std::filesystem::exists(p))
    throw IoError("dataset " + p.string() + " not found; run gen first");
  return read_jsonl(p.string());
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

inline void cmd_gen(const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  std::filesystem::create_directories(paths::data_dir(cfg));
  Corpus corpus = gen_corpus(cfg.corpus);
  std::vector<Utterance> hard = gen_hard_suite(cfg.corpus);
  write_jsonl(paths::split_file(cfg, "train").string(), corpus.train);
  write_jsonl(paths::split_file(cfg, "test").string(), corpus.test);
  write_jsonl(paths::split_file(cfg, "hard").string(), hard);
  write_run_config((paths::data_dir(cfg) / "resolved.ini").string(), cfg);
  if (log)
    *log << "gen: " << corpus.train.size() << " train, " << corpus.test.size() << " test, "
         << hard.size() << " hard -> " << paths::data_dir(cfg).string() << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline ProgressFn log_progress(std::ostream* log, const std::string& name,
                               const std::string& phase) {
  if (!log) return {};
  return [log, name, phase](int epoch, int step, double loss) {
    *log << name << ": " << phase << " epoch " << epoch << " step " << step << " loss " << loss
         << "\n";
  };
}

// Trains the AR and NAR models for one variant (plus the standalone duration
// model for duration_external) and writes checkpoints, the training log, and
// the resolved configuration into the run directory.
inline std::filesystem::path cmd_train(const RunConfig& cfg, SystemVariant variant,
                                       const std::string& name, std::ostream* log = nullptr) {
  cfg.validate();
  std::vector<Utterance> data = load_split(cfg, "train");
  MaskConfig mask = variant_mask(variant, cfg.mask);
  LayoutOptions opt = variant_layout(variant);

  RunConfig resolved = cfg;
  resolved.mask = mask;

  ArModel<float> ar(cfg.model, mask);
  ar.init(cfg.train.seed);
  TrainLog ar_log =
      train_ar(ar, data, variant_train(variant), cfg.train, log_progress(log, name, "ar"));

  NarModel<float> nar(cfg.model, opt.prosody && opt.pitch, opt.prosody && opt.duration);
  nar.init(cfg.train.seed + 1);
  TrainLog nar_log = train_nar(nar, data, cfg.train, log_progress(log, name, "nar"));

  std::filesystem::path dir = paths::run_dir(cfg, name);
  std::filesystem::create_directories(dir);

  json extra = {{"variant", variant_label(variant)},
                {"model", model_config_json(cfg.model)},
                {"mask", mask_config_json(mask)}};
  save_checkpoint<float>((dir / "ar.ckpt").string(), "ar", extra, ar.params());
  json nar_extra = {{"variant", variant_label(variant)},
                    {"model", model_config_json(cfg.model)},
                    {"use_pitch", nar.use_pitch},
                    {"use_duration", nar.use_duration}};
  save_checkpoint<float>((dir / "nar.ckpt").string(), "nar", nar_extra, nar.params());

  json logs = {{"ar", ar_log.to_json()}, {"nar", nar_log.to_json()}};
  if (variant == SystemVariant::DurationExternal) {
    DurationModel<float> dm(cfg.model);
    dm.init(cfg.train.seed + 2);
    TrainLog dm_log = train_duration(dm, data, cfg.train, log_progress(log, name, "duration"));
    json dm_extra = {{"variant", variant_label(variant)},
                     {"model", model_config_json(cfg.model)}};
    save_checkpoint<float>((dir / "duration.ckpt").string(), "duration", dm_extra, dm.params());
    logs["duration"] = dm_log.to_json();
  }

  {
    std::ofstream out(dir / "train_log.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write train log in " + dir.string());
    out << logs.dump(2) << "\n";
  }
  write_run_config((dir / "resolved.ini").string(), resolved);
  if (log) *log << name << ": checkpoints written to " << dir.string() << "\n";
  return dir;
}

// ---------------------------------------------------------------------------
// checkpoint loading
// ---------------------------------------------------------------------------

struct LoadedSystem {
  SystemVariant variant = SystemVariant::Full;
  LayoutOptions layout_opt;
  std::unique_ptr<ArModel<float>> ar;
  std::unique_ptr<NarModel<float>> nar;
  std::unique_ptr<DurationModel<float>> dur;  // only for duration_external
};

inline LoadedSystem load_system(const std::filesystem::path& run_dir) {
  std::filesystem::path ar_path = run_dir / "ar.ckpt";
  if (!std::filesystem::exists(ar_path))
    throw IoError("checkpoint " + ar_path.string() + " not found; run train first");

  LoadedSystem sys;
  json header = peek_checkpoint(ar_path);
  const json& extra = header.at("extra");
  sys.variant = variant_from_label(extra.at("variant").get<std::string>());
  sys.layout_opt = variant_layout(sys.variant);
  ModelConfig mc = model_config_from_json(extra.at("model"));
  MaskConfig mask = mask_config_from_json(extra.at("mask"));
  sys.ar = std::make_unique<ArModel<float>>(mc, mask);
  load_checkpoint<float>(ar_path.string(), "ar", sys.ar->params());

  std::filesystem::path nar_path = run_dir / "nar.ckpt";
  json nar_header = peek_checkpoint(nar_path);
  const json& nar_extra = nar_header.at("extra");
  sys.nar = std::make_unique<NarModel<float>>(model_config_from_json(nar_extra.at("model")),
                                              nar_extra.at("use_pitch").get<bool>(),
                                              nar_extra.at("use_duration").get<bool>());
  load_checkpoint<float>(nar_path.string(), "nar", sys.nar->params());

  if (sys.variant == SystemVariant::DurationExternal) {
    std::filesystem::path dm_path = run_dir / "duration.ckpt";
    json dm_header = peek_checkpoint(dm_path);
    sys.dur = std::make_unique<DurationModel<float>>(
        model_config_from_json(dm_header.at("extra").at("model")));
    load_checkpoint<float>(dm_path.string(), "duration", sys.dur->params());
  }
  return sys;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthRow {
  std::string id, category;
  int prompt_len = 0;
  std::vector<std::vector<int>> candidates;  // layer-1 tokens, target region only
  std::vector<bool> hit_eos, truncated;
  int best = 0;
  CodecMatrix codec;  // all layers, prompt plus best-candidate target

  json to_json() const {
    json cands = json::array();
    for (const auto& c : candidates) cands.push_back(c);
    json codec_j = json::array();
    for (const auto& layer : codec.tokens) codec_j.push_back(layer);
    return json{{"id", id},           {"category", category},   {"prompt_len", prompt_len},
                {"candidates", cands}, {"hit_eos", hit_eos},     {"truncated", truncated},
                {"best", best},        {"codec", codec_j}};
  }

  static SynthRow from_json(const json& j) {
    SynthRow r;
    try {
      r.id = j.at("id").get<std::string>();
      r.category = j.at("category").get<std::string>();
      r.prompt_len = j.at("prompt_len").get<int>();
      for (const auto& c : j.at("candidates")) r.candidates.push_back(c.get<std::vector<int>>());
      r.hit_eos = j.at("hit_eos").get<std::vector<bool>>();
      r.truncated = j.at("truncated").get<std::vector<bool>>();
      r.best = j.at("best").get<int>();
      for (const auto& layer : j.at("codec")) r.codec.tokens.push_back(layer.get<std::vector<int>>());
    } catch (const json::exception& e) {
      throw DataError(std::string("synth record: ") + e.what());
    }
    if (r.candidates.empty()) throw DataError("synth record " + r.id + ": no candidates");
    if (r.best < 0 || r.best >= static_cast<int>(r.candidates.size()))
      throw DataError("synth record " + r.id + ": best index out of range");
    return r;
  }
};

// Generates rerank_n candidates for one utterance, reranks against the
// reference, and fills the remaining codec layers for the winner.
inline SynthRow synth_one(LoadedSystem& sys, const Utterance& u, const SamplingConfig& sc,
                          uint64_t utt_index) {
  const ModelConfig& mc = sys.ar->cfg;
  bool plain = sys.ar->mask_cfg.plain;
  int pf = u.prompt_frames();
  std::vector<int> prompt_c1(u.codec.tokens[0].begin(), u.codec.tokens[0].begin() + pf);
  std::vector<int> ref_target(u.codec.tokens[0].begin() + pf, u.codec.tokens[0].end());

  ProsodySeq full_pros =
      derive_prosody(u.pitch_frames, u.durations, mc.quantizer(), mc.max_duration);
  ProsodySeq prompt_pros;
  prompt_pros.pitch.assign(full_pros.pitch.begin(), full_pros.pitch.begin() + u.prompt_len);
  prompt_pros.duration.assign(full_pros.duration.begin(),
                              full_pros.duration.begin() + u.prompt_len);

  std::vector<int> ext_durations;
  if (sys.dur) ext_durations = predict_durations(*sys.dur, u.phonemes, prompt_pros.duration);

  SynthRow row;
  row.id = u.id;
  row.category = u.category;
  row.prompt_len = u.prompt_len;

  std::vector<ProsodySeq> plans;
  for (int cand = 0; cand < sc.rerank_n; ++cand) {
    Rng rng(sc.seed, stream_id('s', utt_index, static_cast<uint64_t>(cand)));
    ProsodySeq plan;
    if (!plain) {
      plan = sample_prosody(*sys.ar, u.phonemes, u.prompt_len, prompt_pros, sys.layout_opt, sc,
                            rng);
      if (sys.dur) plan.duration = ext_durations;
    }
    SpeechResult res =
        infer_speech(*sys.ar, u.phonemes, u.prompt_len, plan, prompt_c1, sys.layout_opt, sc, rng);
    row.candidates.emplace_back(res.tokens.begin() + pf, res.tokens.end());
    row.hit_eos.push_back(res.hit_eos);
    row.truncated.push_back(res.truncated);
    plans.push_back(std::move(plan));
  }

  row.best = static_cast<int>(rerank(row.candidates, ref_target));

  std::vector<int> layer1 = prompt_c1;
  layer1.insert(layer1.end(), row.candidates[row.best].begin(), row.candidates[row.best].end());
  if (static_cast<int>(layer1.size()) > pf) {
    row.codec = infer_nar(*sys.nar, u.phonemes, plans[row.best], layer1, u.codec, pf);
  } else {
    // an empty winning candidate leaves nothing to refine; keep the prompt
    for (const auto& layer : u.codec.tokens)
      row.codec.tokens.emplace_back(layer.begin(), layer.begin() + pf);
  }
  return row;
}

inline std::vector<SynthRow> synth_split(LoadedSystem& sys, const std::vector<Utterance>& data,
                                         const SamplingConfig& sc) {
  sc.validate();
  std::vector<SynthRow> rows;
  rows.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    rows.push_back(synth_one(sys, data[i], sc, static_cast<uint64_t>(i)));
  return rows;
}

inline void write_synth_jsonl(const std::string& path, const std::vector<SynthRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : rows) out << r.to_json().dump() << "\n";
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<SynthRow> read_synth_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + "; run synth first");
  std::vector<SynthRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError(path + ": invalid JSON line " + std::to_string(rows.size() + 1));
    rows.push_back(SynthRow::from_json(j));
  }
  return rows;
}

inline void cmd_synth(const RunConfig& cfg, const std::string& name, const std::string& split,
                      std::ostream* log = nullptr) {
  cfg.validate();
  if (split != "test" && split != "hard")
    throw ConfigError("synth: split must be test or hard, got '" + split + "'");
  std::vector<Utterance> data = load_split(cfg, split);
  std::filesystem::path dir = paths::run_dir(cfg, name);
  LoadedSystem sys = load_system(dir);
  SamplingConfig sc = variant_sampling(sys.variant, cfg.sampling);

  std::vector<SynthRow> rows = synth_split(sys, data, sc);
  write_synth_jsonl((dir / ("synth_" + split + ".jsonl")).string(), rows);

  RunConfig resolved = cfg;
  resolved.model = sys.ar->cfg;
  resolved.mask = sys.ar->mask_cfg;
  resolved.sampling = sc;
  write_run_config((dir / ("synth_" + split + ".ini")).string(), resolved);
  if (log)
    *log << name << ": synthesized " << rows.size() << " " << split << " utterances ("
         << sc.rerank_n << " candidates each)\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct WerAccum {
  long long sub = 0, del = 0, ins = 0, ref_len = 0;
  long long dist_first = 0, dist_best = 0;

  double wer() const { return ref_len == 0 ? 0.0 : static_cast<double>(dist_first) / ref_len; }
  double wer_r() const { return ref_len == 0 ? 0.0 : static_cast<double>(dist_best) / ref_len; }
};

struct HardAccum {
  int n = 0, err_first = 0, err_best = 0;
  int mispronunciation = 0, omission = 0, repetition = 0, hallucination = 0;

  double ser() const { return n == 0 ? 0.0 : static_cast<double>(err_first) / n; }
  double ser_r() const { return n == 0 ? 0.0 : static_cast<double>(err_best) / n; }
};

namespace detail {

inline std::map<std::string, const SynthRow*> index_rows(const std::vector<SynthRow>& rows) {
  std::map<std::string, const SynthRow*> by_id;
  for (const auto& r : rows)
    if (!by_id.emplace(r.id, &r).second) throw DataError("duplicate synth id " + r.id);
  return by_id;
}

inline const SynthRow& row_for(const std::map<std::string, const SynthRow*>& by_id,
                               const Utterance& u) {
  auto it = by_id.find(u.id);
  if (it == by_id.end()) throw DataError("no synth output for utterance " + u.id);
  return *it->second;
}

}  // namespace detail

// Token-level error counts; substitutions/deletions/insertions come from the
// first candidate, the reranked distance from the per-utterance minimum.
inline WerAccum accumulate_wer(const std::vector<Utterance>& data,
                               const std::vector<SynthRow>& rows) {
  auto by_id = detail::index_rows(rows);
  WerAccum acc;
  for (const Utterance& u : data) {
    const SynthRow& r = detail::row_for(by_id, u);
    std::vector<int> ref(u.codec.tokens[0].begin() + u.prompt_frames(),
                         u.codec.tokens[0].end());
    EditAlignment first = edit_distance_align(ref, r.candidates[0]);
    acc.sub += first.counts.sub;
    acc.del += first.counts.del;
    acc.ins += first.counts.ins;
    acc.ref_len += first.counts.total_ref_len;
    acc.dist_first += first.counts.distance();
    int best = first.counts.distance();
    for (size_t c = 1; c < r.candidates.size(); ++c)
      best = std::min(best, edit_distance(ref, r.candidates[c]));
    acc.dist_best += best;
  }
  return acc;
}

inline HardAccum accumulate_hard(const std::vector<Utterance>& data,
                                 const std::vector<SynthRow>& rows, const ToyCodecRule& rule) {
  auto by_id = detail::index_rows(rows);
  HardAccum acc;
  for (const Utterance& u : data) {
    const SynthRow& r = detail::row_for(by_id, u);
    ++acc.n;
    if (classify_hard_errors(u, r.candidates[0], rule).error()) ++acc.err_first;
    HardSentenceVerdict best = classify_hard_errors(u, r.candidates[r.best], rule);
    if (best.error()) ++acc.err_best;
    if (best.mispronunciation) ++acc.mispronunciation;
    if (best.omission) ++acc.omission;
    if (best.repetition) ++acc.repetition;
    if (best.hallucination) ++acc.hallucination;
  }
  return acc;
}

inline SystemResult compose_result(const std::string& system, const WerAccum& wer,
                                   const HardAccum& hard, int n_eval) {
  SystemResult r;
  r.system = system;
  r.wer = wer.wer();
  r.wer_r = wer.wer_r();
  r.sub = static_cast<int>(wer.sub);
  r.del = static_cast<int>(wer.del);
  r.ins = static_cast<int>(wer.ins);
  r.n_eval = n_eval;
  r.ser = hard.ser();
  r.ser_r = hard.ser_r();
  r.mispronunciation = hard.mispronunciation;
  r.omission = hard.omission;
  r.repetition = hard.repetition;
  r.hallucination = hard.hallucination;
  r.n_hard = hard.n;
  return r;
}

// Scores one run from its synth outputs: token WER on the held-out split,
// sentence-level error decomposition on the hard suite.
inline SystemResult cmd_eval(const RunConfig& cfg, const std::string& name,
                             std::ostream* log = nullptr) {
  cfg.validate();
  std::filesystem::path dir = paths::run_dir(cfg, name);
  std::vector<Utterance> test = load_split(cfg, "test");
  std::vector<Utterance> hard = load_split(cfg, "hard");
  std::vector<SynthRow> test_rows = read_synth_jsonl((dir / "synth_test.jsonl").string());
  std::vector<SynthRow> hard_rows = read_synth_jsonl((dir / "synth_hard.jsonl").string());

  WerAccum wer = accumulate_wer(test, test_rows);
  HardAccum hmet = accumulate_hard(hard, hard_rows, cfg.corpus.rule);
  SystemResult result = compose_result(name, wer, hmet, static_cast<int>(test.size()));

  write_results_jsonl((dir / "results.jsonl").string(), {result});
  write_report_csv((dir / "report.csv").string(), {result});
  write_report_table((dir / "report.txt").string(), {result});
  if (log) {
    std::ifstream in(dir / "report.txt");
    *log << in.rdbuf();
  }
  return result;
}

// ---------------------------------------------------------------------------
// mask-dump
// ---------------------------------------------------------------------------

namespace detail {

inline const char* pos_kind_name(PosKind k) {
  switch (k) {
    case PosKind::Phoneme: return "phoneme";
    case PosKind::SepProsody: return "sep_prosody";
    case PosKind::Prosody: return "prosody";
    case PosKind::SepSpeech: return "sep_speech";
    case PosKind::Speech: return "speech";
  }
  return "?";
}

inline void write_pgm(const std::string& path, const AttnMask& mask) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "P2\n" << mask.size << " " << mask.size << "\n255\n";
  for (int r = 0; r < mask.size; ++r) {
    for (int c = 0; c < mask.size; ++c) {
      if (c) out << " ";
      out << (mask.at(r, c) ? 255 : 0);
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

// Renders the attention masks of a fixed example layout as one PGM image
// per head group (255 = may attend), plus a position legend.
inline void cmd_mask_dump(const RunConfig& cfg, SystemVariant variant,
                          std::ostream* log = nullptr) {
  cfg.validate();
  MaskConfig mask = variant_mask(variant, cfg.mask);
  LayoutOptions opt = variant_layout(variant);

  PhonemeSeq phonemes;
  std::vector<int> durations;
  const int example_len = 6, example_prompt = 2;
  const int base_durs[example_len] = {2, 3, 1, 4, 2, 3};
  for (int i = 0; i < example_len; ++i) {
    phonemes.push_back(i % cfg.model.phoneme_vocab);
    durations.push_back(std::min(base_durs[i], cfg.model.max_duration));
  }
  ProsodySeq pros;
  for (int i = 0; i < example_len; ++i) {
    pros.pitch.push_back(cfg.model.pitch_buckets / 2);
    pros.duration.push_back(durations[i]);
  }
  int pf = durations[0] + durations[1];
  int total = 0;
  for (int d : durations) total += d;
  std::vector<int> c1(total, 0);
  PhonemeSeq xp(phonemes.begin(), phonemes.begin() + example_prompt);
  PhonemeSeq xt(phonemes.begin() + example_prompt, phonemes.end());
  SequenceLayout layout = assemble_ar_sequence(
      xp, xt, opt.prosody ? pros : ProsodySeq{}, std::vector<int>(c1.begin(), c1.begin() + pf),
      std::vector<int>(c1.begin() + pf, c1.end()), opt);
  AlignmentMap align(durations);
  HeadMasks masks = build_ar_mask(layout, align, mask);

  std::filesystem::path dir = paths::masks_dir(cfg);
  std::filesystem::create_directories(dir);
  for (const auto& g : masks.groups)
    detail::write_pgm((dir / (std::string(head_group_name(g.role)) + ".pgm")).string(), g.mask);

  {
    std::ofstream out(dir / "positions.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write position legend");
    for (size_t i = 0; i < layout.positions.size(); ++i) {
      const StreamPosition& p = layout.positions[i];
      out << i << " " << detail::pos_kind_name(p.kind) << (p.prompt ? " prompt" : "") << "\n";
    }
  }
  RunConfig resolved = cfg;
  resolved.mask = mask;
  write_run_config((dir / "resolved.ini").string(), resolved);
  if (log)
    *log << "mask-dump: " << masks.groups.size() << " group masks (" << layout.size() << "x"
         << layout.size() << ") -> " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// sweep-k
// ---------------------------------------------------------------------------

struct SweepCell {
  std::string k_label;
  int window_k = 0;
  double rho_pd = 0.9;
  double rho_c = 0.9;
  double wer = 0.0;
  double wer_r = 0.0;
};

struct SweepGrid {
  std::vector<SweepCell> cells;  // fixed order: k major, rho setting minor
};

namespace detail {

// Bounded worker pool; rethrows the first failure after all workers stop.
template <typename F>
void run_pool(int jobs, int n, F&& fn) {
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_err;
  auto worker = [&] {
    for (int i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> guard(err_mu);
        if (!first_err) first_err = std::current_exception();
        return;
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w) workers.emplace_back(worker);
    for (auto& t : workers) t.join();
  }
  if (first_err) std::rethrow_exception(first_err);
}

}  // namespace detail

inline const std::vector<std::pair<std::string, int>>& sweep_windows() {
  static const std::vector<std::pair<std::string, int>> kWindows = {
      {"k0", 0}, {"k1", 1}, {"k2", 2}, {"kinf", -1}};
  return kWindows;
}

// Evaluates the WER grid over window sizes and nucleus settings. Expects one
// trained run per window size under runs/<prefix>_<label>; cells run in a
// pool of cfg.jobs workers with per-cell sampling seeds.
inline SweepGrid cmd_sweep_k(const RunConfig& cfg, const std::string& prefix,
                             std::ostream* log = nullptr) {
  cfg.validate();
  const auto& windows = sweep_windows();
  static const std::pair<double, double> kRho[4] = {
      {0.9, 0.9}, {0.9, 1.0}, {1.0, 0.9}, {1.0, 1.0}};

  std::vector<Utterance> test = load_split(cfg, "test");
  std::vector<LoadedSystem> systems;
  for (const auto& [label, k] : windows) {
    std::filesystem::path dir = paths::run_dir(cfg, prefix + "_" + label);
    LoadedSystem sys = load_system(dir);
    if (sys.ar->mask_cfg.window_k != k)
      throw ConfigError("sweep: run " + dir.string() + " was trained with window_k " +
                        std::to_string(sys.ar->mask_cfg.window_k) + ", expected " +
                        std::to_string(k));
    systems.push_back(std::move(sys));
  }

  SweepGrid grid;
  grid.cells.resize(windows.size() * 4);
  // inference only reads model parameters, so cells may share a loaded system
  detail::run_pool(cfg.jobs, static_cast<int>(grid.cells.size()), [&](int cell) {
    int wi = cell / 4, si = cell % 4;
    SamplingConfig sc = cfg.sampling;
    sc.rho_p = sc.rho_d = kRho[si].first;
    sc.rho_c = kRho[si].second;
    // well-spread per-cell seed offsets keep cell sample streams independent
    sc.seed = cfg.sampling.seed + static_cast<uint64_t>(cell + 1) * 0x9E3779B97F4A7C15ULL;
    std::vector<SynthRow> rows = synth_split(systems[wi], test, sc);
    WerAccum acc = accumulate_wer(test, rows);
    SweepCell& out = grid.cells[cell];
    out.k_label = windows[wi].first;
    out.window_k = windows[wi].second;
    out.rho_pd = kRho[si].first;
    out.rho_c = kRho[si].second;
    out.wer = acc.wer();
    out.wer_r = acc.wer_r();
  });

  std::filesystem::path out_path =
      std::filesystem::path(cfg.out_dir) / "runs" / (prefix + "_grid.csv");
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + out_path.string());
  out << "k,rho_pd,rho_c,wer,wer_r\n";
  for (const SweepCell& c : grid.cells) {
    out << c.k_label << "," << format_metric(c.rho_pd) << "," << format_metric(c.rho_c) << ","
        << format_metric(c.wer) << "," << format_metric(c.wer_r) << "\n";
    if (log)
      *log << "sweep " << c.k_label << " rho_pd=" << c.rho_pd << " rho_c=" << c.rho_c
           << " wer=" << format_metric(c.wer) << " wer_r=" << format_metric(c.wer_r) << "\n";
  }
  if (!out) throw IoError("write failed for " + out_path.string());
  return grid;
}

}  // namespace cadence
