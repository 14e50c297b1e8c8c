// Edit-distance metrics and structural error classification. The distance
// uses unit costs with a fixed tie order (substitution, then deletion, then
// insertion) so alignment paths are unique and reports reproduce exactly.
// The classifier decodes generated tokens through the invertible toy codec
// and compares block structure against the reference phonemes.
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadence/synthdata.hpp"
#include "cadence/types.hpp"

namespace cadence {

enum class EditOp : uint8_t { Match, Sub, Del, Ins };

struct ErrorCounts {
  int sub = 0;
  int del = 0;
  int ins = 0;
  int total_ref_len = 0;

  int distance() const { return sub + del + ins; }
  double wer() const {
    if (total_ref_len <= 0) throw DataError("wer: empty reference");
    return static_cast<double>(distance()) / total_ref_len;
  }
};

struct EditAlignment {
  ErrorCounts counts;
  std::vector<EditOp> path;  // ref/hyp consumed in order
};

// Levenshtein with unit costs. On equal cost the path prefers substitution
// over deletion over insertion, which pins a unique alignment.
inline EditAlignment edit_distance_align(const std::vector<int>& ref,
                                         const std::vector<int>& hyp) {
  int m = static_cast<int>(ref.size());
  int n = static_cast<int>(hyp.size());
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (int i = 0; i <= m; ++i) dp[i][0] = i;
  for (int j = 0; j <= n; ++j) dp[0][j] = j;
  for (int i = 1; i <= m; ++i)
    for (int j = 1; j <= n; ++j) {
      int diag = dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      int del = dp[i - 1][j] + 1;
      int ins = dp[i][j - 1] + 1;
      dp[i][j] = std::min({diag, del, ins});
    }

  EditAlignment out;
  out.counts.total_ref_len = m;
  int i = m, j = n;
  std::vector<EditOp> rev;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        dp[i][j] == dp[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      rev.push_back(ref[i - 1] == hyp[j - 1] ? EditOp::Match : EditOp::Sub);
      --i;
      --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      rev.push_back(EditOp::Del);
      --i;
    } else {
      rev.push_back(EditOp::Ins);
      --j;
    }
  }
  out.path.assign(rev.rbegin(), rev.rend());
  for (EditOp op : out.path) {
    if (op == EditOp::Sub) ++out.counts.sub;
    else if (op == EditOp::Del) ++out.counts.del;
    else if (op == EditOp::Ins) ++out.counts.ins;
  }
  return out;
}

inline int edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return edit_distance_align(ref, hyp).counts.distance();
}

struct HardSentenceVerdict {
  bool mispronunciation = false;
  bool omission = false;
  bool repetition = false;
  bool hallucination = false;

  bool error() const { return mispronunciation || omission || repetition || hallucination; }
};

namespace detail {

struct Block {
  int cls;
  int len;
};

// Groups decoded tokens into blocks: a block extends while the class stays
// fixed and the offset increments by one. Undecodable tokens become
// negative-class singleton blocks.
inline std::vector<Block> parse_blocks(const std::vector<int>& tokens,
                                       const ToyCodecRule& rule) {
  std::vector<Block> blocks;
  int prev_cls = -2, prev_off = -2;
  for (int tok : tokens) {
    DecodedToken d = toy_decode_token(rule, tok, 0);
    bool extends = d.cls >= 0 && d.cls == prev_cls && d.offset == prev_off + 1;
    if (extends) {
      ++blocks.back().len;
    } else {
      blocks.push_back({d.cls, 1});
    }
    prev_cls = d.cls;
    prev_off = d.offset;
  }
  return blocks;
}

}  // namespace detail

// Classifies one synthesized utterance against its reference. `hyp_tokens`
// are the generated layer-1 tokens for the non-prompt region; the reference
// block structure comes from decoding the reference codec tokens for the
// same region, so both sides go through the identical token-to-class map.
// Flags are set at most once regardless of how often a failure repeats
// inside the utterance.
inline HardSentenceVerdict classify_hard_errors(const Utterance& ref,
                                                const std::vector<int>& hyp_tokens,
                                                const ToyCodecRule& rule) {
  if (ref.codec.layers() < 1) throw DataError("classify: reference has no codec tokens");
  std::vector<int> ref_target(ref.codec.tokens[0].begin() + ref.prompt_frames(),
                              ref.codec.tokens[0].end());
  std::vector<detail::Block> ref_blocks = detail::parse_blocks(ref_target, rule);

  std::vector<int> ref_classes;
  std::multiset<int> ref_class_count;
  for (const auto& b : ref_blocks) {
    ref_classes.push_back(b.cls);
    ref_class_count.insert(b.cls);
  }
  std::set<int> ref_class_set(ref_classes.begin(), ref_classes.end());

  std::vector<detail::Block> blocks = detail::parse_blocks(hyp_tokens, rule);
  std::vector<int> hyp_classes;
  std::map<int, int> hyp_class_count;
  HardSentenceVerdict v;
  for (const auto& b : blocks) {
    if (b.cls < 0 || ref_class_set.find(b.cls) == ref_class_set.end()) v.hallucination = true;
    hyp_classes.push_back(b.cls);
    ++hyp_class_count[b.cls];
  }

  EditAlignment align = edit_distance_align(ref_classes, hyp_classes);
  size_t ri = 0, hi = 0;
  for (EditOp op : align.path) {
    switch (op) {
      case EditOp::Match:
        ++ri;
        ++hi;
        break;
      case EditOp::Sub:
        if (ref_class_set.count(hyp_classes[hi])) v.mispronunciation = true;
        ++ri;
        ++hi;
        break;
      case EditOp::Del:
        v.omission = true;
        ++ri;
        break;
      case EditOp::Ins:
        ++hi;
        break;
    }
  }

  for (const auto& [cls, n] : hyp_class_count)
    if (n > static_cast<int>(ref_class_count.count(cls))) v.repetition = true;
  return v;
}

// Aggregated metrics for one trained system on one evaluation run.
struct SystemResult {
  std::string system;
  double wer = 0.0;
  double wer_r = 0.0;
  int sub = 0, del = 0, ins = 0;
  int n_eval = 0;
  double ser = 0.0;
  double ser_r = 0.0;
  int mispronunciation = 0, omission = 0, repetition = 0, hallucination = 0;
  int n_hard = 0;

  json to_json() const {
    return json{{"system", system},       {"wer", wer},
                {"wer_r", wer_r},         {"sub", sub},
                {"del", del},             {"ins", ins},
                {"n_eval", n_eval},       {"ser", ser},
                {"ser_r", ser_r},         {"mispronunciation", mispronunciation},
                {"omission", omission},   {"repetition", repetition},
                {"hallucination", hallucination}, {"n_hard", n_hard}};
  }

  static SystemResult from_json(const json& j) {
    SystemResult r;
    r.system = j.at("system").get<std::string>();
    r.wer = j.at("wer");
    r.wer_r = j.at("wer_r");
    r.sub = j.at("sub");
    r.del = j.at("del");
    r.ins = j.at("ins");
    r.n_eval = j.at("n_eval");
    r.ser = j.at("ser");
    r.ser_r = j.at("ser_r");
    r.mispronunciation = j.at("mispronunciation");
    r.omission = j.at("omission");
    r.repetition = j.at("repetition");
    r.hallucination = j.at("hallucination");
    r.n_hard = j.at("n_hard");
    return r;
  }
};

inline constexpr int kReportVersion = 1;

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline void write_results_jsonl(const std::string& path,
                                const std::vector<SystemResult>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : rows) out << r.to_json().dump() << "\n";
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<SystemResult> read_results_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<SystemResult> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(SystemResult::from_json(json::parse(line)));
  }
  return rows;
}

inline void write_report_csv(const std::string& path,
                             const std::vector<SystemResult>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "version,system,wer,wer_r,sub,del,ins,n_eval,ser,ser_r,"
         "mispronunciation,omission,repetition,hallucination,n_hard\n";
  for (const auto& r : rows) {
    out << kReportVersion << "," << r.system << "," << format_metric(r.wer) << ","
        << format_metric(r.wer_r) << "," << r.sub << "," << r.del << "," << r.ins << ","
        << r.n_eval << "," << format_metric(r.ser) << "," << format_metric(r.ser_r) << ","
        << r.mispronunciation << "," << r.omission << "," << r.repetition << ","
        << r.hallucination << "," << r.n_hard << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

inline void write_report_table(const std::string& path,
                               const std::vector<SystemResult>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  char line[256];
  std::snprintf(line, sizeof(line), "%-20s %10s %10s %6s %6s %6s %10s %10s\n", "system", "wer",
                "wer_r", "sub", "del", "ins", "ser", "ser_r");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-20s %10.6f %10.6f %6d %6d %6d %10.6f %10.6f\n",
                  r.system.c_str(), r.wer, r.wer_r, r.sub, r.del, r.ins, r.ser, r.ser_r);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace cadence
