// Run configuration: a sectioned key=value file merged with command-line
// overrides into one fully resolved RunConfig. Every command serializes the
// resolved form next to its outputs so a run can be reproduced from the
// artifact directory alone.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cadence/model.hpp"
#include "cadence/sampling.hpp"
#include "cadence/synthdata.hpp"
#include "cadence/train.hpp"

namespace cadence {

struct RunConfig {
  std::string out_dir = "out";
  int jobs = 1;  // sweep worker pool size
  ModelConfig model;
  MaskConfig mask;
  TrainConfig train;
  SamplingConfig sampling;
  CorpusConfig corpus;

  // Cross-section consistency: the model must be sized for the corpus and
  // codec it will be trained on.
  void validate() const {
    if (out_dir.empty()) throw ConfigError("run: out_dir must not be empty");
    if (jobs < 1) throw ConfigError("run: jobs must be positive");
    model.validate();
    mask.validate();
    train.validate();
    sampling.validate();
    corpus.validate();
    if (mask.total_heads() != model.heads)
      throw ConfigError("run: mask head groups must sum to model heads");
    if (model.phoneme_vocab != corpus.phoneme_vocab)
      throw ConfigError("run: model phoneme_vocab differs from corpus");
    if (model.pitch_buckets != corpus.pitch_buckets)
      throw ConfigError("run: model pitch_buckets differs from corpus");
    if (model.max_duration < corpus.max_duration)
      throw ConfigError("run: model max_duration below the corpus range");
    if (model.codec_vocab != corpus.rule.vocab)
      throw ConfigError("run: model codec_vocab differs from codec rule");
    if (model.codec_layers != corpus.rule.layers)
      throw ConfigError("run: model codec_layers differs from codec rule");
    if (model.pitch_min != 0.0 || model.pitch_max != 1.0)
      throw ConfigError("run: corpus pitch lives on [0, 1]");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct IniValue {
  std::string raw;
  int line = 0;
};

// section -> key -> value; duplicate keys are an error.
struct IniFile {
  std::map<std::string, std::map<std::string, IniValue>> sections;
};

inline IniFile parse_ini(std::istream& in, const std::string& origin) {
  IniFile out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
      out.sections[section];
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": key before any section");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    auto [it, inserted] = out.sections[section].emplace(key, IniValue{val, lineno});
    if (!inserted)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + section +
                        "." + key);
  }
  return out;
}

// Typed reader over one parsed file; records which keys were consumed so
// unknown keys can be rejected afterwards.
class IniReader {
 public:
  IniReader(const IniFile& file, std::string origin) : file_(file), origin_(std::move(origin)) {}

  void read(const std::string& sec, const std::string& key, std::string& dst) {
    const IniValue* v = fetch(sec, key);
    if (v) dst = v->raw;
  }
  void read(const std::string& sec, const std::string& key, bool& dst) {
    const IniValue* v = fetch(sec, key);
    if (!v) return;
    if (v->raw == "true") dst = true;
    else if (v->raw == "false") dst = false;
    else throw ConfigError(where(sec, key) + ": expected true or false, got '" + v->raw + "'");
  }
  void read(const std::string& sec, const std::string& key, int& dst) {
    const IniValue* v = fetch(sec, key);
    if (!v) return;
    dst = parse_long(sec, key, v->raw);
  }
  void read(const std::string& sec, const std::string& key, uint64_t& dst) {
    const IniValue* v = fetch(sec, key);
    if (!v) return;
    try {
      // stoull wraps negative input instead of rejecting it
      if (!v->raw.empty() && v->raw[0] == '-') throw std::invalid_argument("negative");
      size_t used = 0;
      unsigned long long parsed = std::stoull(v->raw, &used);
      if (used != v->raw.size()) throw std::invalid_argument("trailing");
      dst = parsed;
    } catch (const std::exception&) {
      throw ConfigError(where(sec, key) + ": expected unsigned integer, got '" + v->raw + "'");
    }
  }
  void read(const std::string& sec, const std::string& key, double& dst) {
    const IniValue* v = fetch(sec, key);
    if (!v) return;
    try {
      size_t used = 0;
      double parsed = std::stod(v->raw, &used);
      if (used != v->raw.size()) throw std::invalid_argument("trailing");
      dst = parsed;
    } catch (const std::exception&) {
      throw ConfigError(where(sec, key) + ": expected number, got '" + v->raw + "'");
    }
  }
  void read(const std::string& sec, const std::string& key, std::vector<int>& dst) {
    const IniValue* v = fetch(sec, key);
    if (!v) return;
    std::vector<int> out;
    std::stringstream ss(v->raw);
    std::string part;
    while (std::getline(ss, part, ','))
      out.push_back(parse_long(sec, key, trim(part)));
    if (out.empty()) throw ConfigError(where(sec, key) + ": expected comma-separated integers");
    dst = out;
  }

  // Every key in the file must have been consumed by a read() call.
  void reject_unknown() const {
    for (const auto& [sec, keys] : file_.sections) {
      if (!known_sections_.count(sec))
        throw ConfigError(origin_ + ": unknown section [" + sec + "]");
      for (const auto& [key, val] : keys)
        if (!consumed_.count(sec + "." + key))
          throw ConfigError(origin_ + ":" + std::to_string(val.line) + ": unknown key " + sec +
                            "." + key);
    }
  }

  void claim_section(const std::string& sec) { known_sections_.insert(sec); }

 private:
  const IniValue* fetch(const std::string& sec, const std::string& key) {
    known_sections_.insert(sec);
    consumed_.insert(sec + "." + key);
    auto s = file_.sections.find(sec);
    if (s == file_.sections.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  int parse_long(const std::string& sec, const std::string& key, const std::string& raw) {
    try {
      size_t used = 0;
      long parsed = std::stol(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing");
      return static_cast<int>(parsed);
    } catch (const std::exception&) {
      throw ConfigError(where(sec, key) + ": expected integer, got '" + raw + "'");
    }
  }

  std::string where(const std::string& sec, const std::string& key) const {
    return origin_ + ": " + sec + "." + key;
  }

  const IniFile& file_;
  std::string origin_;
  std::set<std::string> consumed_;
  std::set<std::string> known_sections_;
};

}  // namespace detail

inline RunConfig run_config_from_ini(std::istream& in, const std::string& origin) {
  detail::IniFile file = detail::parse_ini(in, origin);
  detail::IniReader r(file, origin);
  RunConfig c;

  r.read("run", "out_dir", c.out_dir);
  r.read("run", "jobs", c.jobs);

  r.read("model", "layers", c.model.layers);
  r.read("model", "dim", c.model.dim);
  r.read("model", "ff", c.model.ff);
  r.read("model", "heads", c.model.heads);
  r.read("model", "phoneme_vocab", c.model.phoneme_vocab);
  r.read("model", "pitch_buckets", c.model.pitch_buckets);
  r.read("model", "pitch_min", c.model.pitch_min);
  r.read("model", "pitch_max", c.model.pitch_max);
  r.read("model", "max_duration", c.model.max_duration);
  r.read("model", "codec_vocab", c.model.codec_vocab);
  r.read("model", "codec_layers", c.model.codec_layers);
  r.read("model", "dropout", c.model.dropout);
  r.read("model", "max_positions", c.model.max_positions);

  r.read("mask", "window_k", c.mask.window_k);
  r.read("mask", "grouping", c.mask.grouping);
  r.read("mask", "plain", c.mask.plain);
  r.read("mask", "heads_phoneme", c.mask.heads_phoneme);
  r.read("mask", "heads_prosody", c.mask.heads_prosody);
  r.read("mask", "heads_context", c.mask.heads_context);

  r.read("train", "epochs", c.train.epochs);
  r.read("train", "peak_lr", c.train.peak_lr);
  r.read("train", "warmup_steps", c.train.warmup_steps);
  r.read("train", "accum", c.train.accum);
  r.read("train", "beta1", c.train.beta1);
  r.read("train", "beta2", c.train.beta2);
  r.read("train", "adam_eps", c.train.adam_eps);
  r.read("train", "clip_norm", c.train.clip_norm);
  r.read("train", "seed", c.train.seed);
  r.read("train", "log_every", c.train.log_every);

  r.read("sampling", "rho_p", c.sampling.rho_p);
  r.read("sampling", "rho_d", c.sampling.rho_d);
  r.read("sampling", "rho_c", c.sampling.rho_c);
  r.read("sampling", "seed", c.sampling.seed);
  r.read("sampling", "max_steps", c.sampling.max_steps);
  r.read("sampling", "duration_guided", c.sampling.duration_guided);
  r.read("sampling", "rerank_n", c.sampling.rerank_n);

  r.read("corpus", "phoneme_vocab", c.corpus.phoneme_vocab);
  r.read("corpus", "pitch_buckets", c.corpus.pitch_buckets);
  r.read("corpus", "len_min", c.corpus.len_min);
  r.read("corpus", "len_max", c.corpus.len_max);
  r.read("corpus", "prompt_min", c.corpus.prompt_min);
  r.read("corpus", "prompt_max", c.corpus.prompt_max);
  r.read("corpus", "max_duration", c.corpus.max_duration);
  r.read("corpus", "unvoiced_rate", c.corpus.unvoiced_rate);
  r.read("corpus", "train_size", c.corpus.train_size);
  r.read("corpus", "test_size", c.corpus.test_size);
  r.read("corpus", "hard_per_category", c.corpus.hard_per_category);
  r.read("corpus", "seed", c.corpus.seed);

  r.read("codec", "a", c.corpus.rule.a);
  r.read("codec", "b", c.corpus.rule.b);
  r.read("codec", "c", c.corpus.rule.c);
  r.read("codec", "vocab", c.corpus.rule.vocab);
  r.read("codec", "layer_offsets", c.corpus.rule.layer_offsets);
  c.corpus.rule.layers = static_cast<int>(c.corpus.rule.layer_offsets.size());

  r.reject_unknown();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  return run_config_from_ini(in, path);
}

// Canonical resolved form: every key, fixed order, full double precision.
// Parsing this text reproduces the config exactly.
inline std::string run_config_ini(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream out;
  out << "[run]\n";
  out << "out_dir = " << c.out_dir << "\n";
  out << "jobs = " << c.jobs << "\n";
  out << "\n[model]\n";
  out << "layers = " << c.model.layers << "\n";
  out << "dim = " << c.model.dim << "\n";
  out << "ff = " << c.model.ff << "\n";
  out << "heads = " << c.model.heads << "\n";
  out << "phoneme_vocab = " << c.model.phoneme_vocab << "\n";
  out << "pitch_buckets = " << c.model.pitch_buckets << "\n";
  out << "pitch_min = " << fmt_double(c.model.pitch_min) << "\n";
  out << "pitch_max = " << fmt_double(c.model.pitch_max) << "\n";
  out << "max_duration = " << c.model.max_duration << "\n";
  out << "codec_vocab = " << c.model.codec_vocab << "\n";
  out << "codec_layers = " << c.model.codec_layers << "\n";
  out << "dropout = " << fmt_double(c.model.dropout) << "\n";
  out << "max_positions = " << c.model.max_positions << "\n";
  out << "\n[mask]\n";
  out << "window_k = " << c.mask.window_k << "\n";
  out << "grouping = " << (c.mask.grouping ? "true" : "false") << "\n";
  out << "plain = " << (c.mask.plain ? "true" : "false") << "\n";
  out << "heads_phoneme = " << c.mask.heads_phoneme << "\n";
  out << "heads_prosody = " << c.mask.heads_prosody << "\n";
  out << "heads_context = " << c.mask.heads_context << "\n";
  out << "\n[train]\n";
  out << "epochs = " << c.train.epochs << "\n";
  out << "peak_lr = " << fmt_double(c.train.peak_lr) << "\n";
  out << "warmup_steps = " << c.train.warmup_steps << "\n";
  out << "accum = " << c.train.accum << "\n";
  out << "beta1 = " << fmt_double(c.train.beta1) << "\n";
  out << "beta2 = " << fmt_double(c.train.beta2) << "\n";
  out << "adam_eps = " << fmt_double(c.train.adam_eps) << "\n";
  out << "clip_norm = " << fmt_double(c.train.clip_norm) << "\n";
  out << "seed = " << c.train.seed << "\n";
  out << "log_every = " << c.train.log_every << "\n";
  out << "\n[sampling]\n";
  out << "rho_p = " << fmt_double(c.sampling.rho_p) << "\n";
  out << "rho_d = " << fmt_double(c.sampling.rho_d) << "\n";
  out << "rho_c = " << fmt_double(c.sampling.rho_c) << "\n";
  out << "seed = " << c.sampling.seed << "\n";
  out << "max_steps = " << c.sampling.max_steps << "\n";
  out << "duration_guided = " << (c.sampling.duration_guided ? "true" : "false") << "\n";
  out << "rerank_n = " << c.sampling.rerank_n << "\n";
  out << "\n[corpus]\n";
  out << "phoneme_vocab = " << c.corpus.phoneme_vocab << "\n";
  out << "pitch_buckets = " << c.corpus.pitch_buckets << "\n";
  out << "len_min = " << c.corpus.len_min << "\n";
  out << "len_max = " << c.corpus.len_max << "\n";
  out << "prompt_min = " << c.corpus.prompt_min << "\n";
  out << "prompt_max = " << c.corpus.prompt_max << "\n";
  out << "max_duration = " << c.corpus.max_duration << "\n";
  out << "unvoiced_rate = " << fmt_double(c.corpus.unvoiced_rate) << "\n";
  out << "train_size = " << c.corpus.train_size << "\n";
  out << "test_size = " << c.corpus.test_size << "\n";
  out << "hard_per_category = " << c.corpus.hard_per_category << "\n";
  out << "seed = " << c.corpus.seed << "\n";
  out << "\n[codec]\n";
  out << "a = " << c.corpus.rule.a << "\n";
  out << "b = " << c.corpus.rule.b << "\n";
  out << "c = " << c.corpus.rule.c << "\n";
  out << "vocab = " << c.corpus.rule.vocab << "\n";
  out << "layer_offsets = ";
  for (size_t i = 0; i < c.corpus.rule.layer_offsets.size(); ++i) {
    if (i) out << ",";
    out << c.corpus.rule.layer_offsets[i];
  }
  out << "\n";
  return out.str();
}

inline void write_run_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << run_config_ini(c);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace cadence
