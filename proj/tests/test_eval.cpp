#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cadence/eval.hpp"

using namespace cadence;

namespace {

// Independent recursive edit distance, memoized, for cross-checking the DP.
int slow_edit(const std::vector<int>& a, const std::vector<int>& b, size_t i, size_t j,
              std::map<std::pair<size_t, size_t>, int>& memo) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int best = slow_edit(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, slow_edit(a, b, i + 1, j, memo) + 1);
  best = std::min(best, slow_edit(a, b, i, j + 1, memo) + 1);
  memo[key] = best;
  return best;
}

int slow_edit(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<size_t, size_t>, int> memo;
  return slow_edit(a, b, 0, 0, memo);
}

std::vector<int> random_seq(Rng& rng, int max_len, int alphabet) {
  std::vector<int> out(rng.uniform_int(max_len + 1));
  for (int& v : out) v = static_cast<int>(rng.uniform_int(alphabet));
  return out;
}

// Reference utterance with one frame per phoneme, all voiced, even buckets:
// classes are phoneme id mod 8 and layer-1 tokens are 8*x mod 64.
Utterance flat_utterance(const std::vector<int>& phonemes, const ToyCodecRule& rule) {
  Utterance u;
  u.id = "flat";
  u.phonemes = phonemes;
  PitchQuantizer q(0.0, 1.0, 256);
  ProsodySeq pros;
  for (int x : phonemes) {
    (void)x;
    u.durations.push_back(1);
    u.pitch_frames.push_back(q.bucket_center(64));
    pros.pitch.push_back(64);
    pros.duration.push_back(1);
  }
  u.codec = toy_encode(u.phonemes, pros, rule);
  return u;
}

std::string temp_file(const char* tag, const char* ext) {
  return (std::filesystem::temp_directory_path() / (std::string("cadence_") + tag + ext))
      .string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("edit distance counts hand-checked cases", "[eval]") {
  EditAlignment a = edit_distance_align({0, 1, 2}, {0, 2});
  CHECK(a.counts.sub == 0);
  CHECK(a.counts.del == 1);
  CHECK(a.counts.ins == 0);
  CHECK(a.counts.distance() == 1);
  CHECK(a.counts.total_ref_len == 3);
  CHECK(a.counts.wer() == 1.0 / 3.0);

  EditAlignment b = edit_distance_align({5, 6, 7}, {5, 6, 7});
  CHECK(b.counts.distance() == 0);
  CHECK(b.counts.wer() == 0.0);

  EditAlignment c = edit_distance_align({1, 2, 3}, {});
  CHECK(c.counts.del == 3);
  CHECK(c.counts.wer() == 1.0);

  EditAlignment d = edit_distance_align({1, 2}, {2, 1, 2});
  CHECK(d.counts.distance() == 1);  // one insertion
  CHECK(d.counts.ins == 1);

  ErrorCounts empty_ref;
  CHECK_THROWS_AS(empty_ref.wer(), DataError);
}

TEST_CASE("edit distance matches a brute-force oracle", "[eval]") {
  Rng rng(3, stream_id('e', 1));
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> ref = random_seq(rng, 6, 3);
    std::vector<int> hyp = random_seq(rng, 6, 3);
    EditAlignment a = edit_distance_align(ref, hyp);
    int expect = slow_edit(ref, hyp);
    CHECK(a.counts.distance() == expect);
    CHECK(edit_distance(ref, hyp) == expect);

    // path replay covers both sequences and reproduces the counts
    int m = 0, s = 0, del = 0, ins = 0;
    for (EditOp op : a.path) {
      if (op == EditOp::Match) ++m;
      if (op == EditOp::Sub) ++s;
      if (op == EditOp::Del) ++del;
      if (op == EditOp::Ins) ++ins;
    }
    CHECK(s == a.counts.sub);
    CHECK(del == a.counts.del);
    CHECK(ins == a.counts.ins);
    CHECK(m + s + del == static_cast<int>(ref.size()));
    CHECK(m + s + ins == static_cast<int>(hyp.size()));
  }
}

TEST_CASE("edit distance is symmetric and triangular", "[eval]") {
  Rng rng(4, stream_id('e', 2));
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> a = random_seq(rng, 8, 4);
    std::vector<int> b = random_seq(rng, 8, 4);
    std::vector<int> c = random_seq(rng, 8, 4);
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
  }
}

TEST_CASE("hard-error classifier flags constructed failures", "[eval]") {
  ToyCodecRule rule;
  Utterance ref = flat_utterance({0, 1, 2, 0}, rule);
  REQUIRE(ref.codec.tokens[0] == std::vector<int>{0, 8, 16, 0});

  SECTION("exact hypothesis is clean") {
    HardSentenceVerdict v = classify_hard_errors(ref, {0, 8, 16, 0}, rule);
    CHECK_FALSE(v.error());
  }
  SECTION("dropped block is an omission") {
    HardSentenceVerdict v = classify_hard_errors(ref, {0, 16, 0}, rule);
    CHECK(v.omission);
    CHECK_FALSE(v.repetition);
    CHECK_FALSE(v.mispronunciation);
    CHECK_FALSE(v.hallucination);
  }
  SECTION("duplicated block is a repetition") {
    HardSentenceVerdict v = classify_hard_errors(ref, {0, 8, 8, 16, 0}, rule);
    CHECK(v.repetition);
    CHECK_FALSE(v.omission);
    CHECK_FALSE(v.mispronunciation);
    CHECK_FALSE(v.hallucination);
  }
  SECTION("out-of-reference class is a hallucination") {
    HardSentenceVerdict v = classify_hard_errors(ref, {0, 56, 16, 0}, rule);
    CHECK(v.hallucination);
    CHECK_FALSE(v.mispronunciation);
  }
  SECTION("undecodable token is a hallucination") {
    HardSentenceVerdict v = classify_hard_errors(ref, {0, 9999, 16, 0}, rule);
    CHECK(v.hallucination);
  }
  SECTION("swapped in-reference classes are mispronunciations") {
    HardSentenceVerdict v = classify_hard_errors(ref, {0, 16, 8, 0}, rule);
    CHECK(v.mispronunciation);
    CHECK_FALSE(v.repetition);
    CHECK_FALSE(v.omission);
    CHECK_FALSE(v.hallucination);
  }
}

TEST_CASE("classifier works on blocks, not frames", "[eval]") {
  ToyCodecRule rule;
  Utterance u;
  u.id = "blocks";
  u.phonemes = {0, 1};
  u.durations = {2, 1};
  PitchQuantizer q(0.0, 1.0, 256);
  u.pitch_frames = {q.bucket_center(64), q.bucket_center(64), q.bucket_center(64)};
  ProsodySeq pros;
  pros.pitch = {64, 64};
  pros.duration = {2, 1};
  u.codec = toy_encode(u.phonemes, pros, rule);
  REQUIRE(u.codec.tokens[0] == std::vector<int>{0, 1, 8});

  // shortening a block changes its length but not its class sequence
  CHECK_FALSE(classify_hard_errors(u, {0, 8}, rule).error());
  // breaking the offset chain splits the block and duplicates its class
  CHECK(classify_hard_errors(u, {0, 0, 8}, rule).repetition);
}

TEST_CASE("classifier ignores the prompt region", "[eval]") {
  ToyCodecRule rule;
  Utterance ref = flat_utterance({0, 1, 2, 0}, rule);
  ref.prompt_len = 1;

  // target classes are {1, 2, 0}; an exact target needs no prompt tokens
  CHECK_FALSE(classify_hard_errors(ref, {8, 16, 0}, rule).error());
  // an extra leading class-0 block now exceeds the target count of one
  HardSentenceVerdict v = classify_hard_errors(ref, {0, 8, 16, 0}, rule);
  CHECK(v.repetition);
}

TEST_CASE("system results roundtrip and reports are stable", "[eval]") {
  SystemResult r;
  r.system = "full";
  r.wer = 1.0 / 3.0;
  r.wer_r = 0.25;
  r.sub = 5;
  r.del = 2;
  r.ins = 1;
  r.n_eval = 40;
  r.ser = 0.125;
  r.ser_r = 0.1;
  r.mispronunciation = 3;
  r.omission = 2;
  r.repetition = 1;
  r.hallucination = 0;
  r.n_hard = 24;

  SystemResult back = SystemResult::from_json(r.to_json());
  CHECK(back.system == r.system);
  CHECK(back.wer == r.wer);
  CHECK(back.wer_r == r.wer_r);
  CHECK(back.sub == r.sub);
  CHECK(back.n_hard == r.n_hard);

  std::vector<SystemResult> rows = {r, back};
  std::string pj = temp_file("results", ".jsonl");
  write_results_jsonl(pj, rows);
  std::vector<SystemResult> loaded = read_results_jsonl(pj);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].system == "full");
  CHECK(loaded[1].wer == r.wer);

  std::string pc1 = temp_file("report_a", ".csv");
  std::string pc2 = temp_file("report_b", ".csv");
  write_report_csv(pc1, rows);
  write_report_csv(pc2, rows);
  std::string csv = read_bytes(pc1);
  CHECK(csv == read_bytes(pc2));
  CHECK(csv.rfind("version,system,wer,", 0) == 0);
  CHECK(csv.find("0.333333") != std::string::npos);

  std::string pt = temp_file("report", ".txt");
  write_report_table(pt, rows);
  std::string table = read_bytes(pt);
  CHECK(table.find("full") != std::string::npos);

  std::remove(pj.c_str());
  std::remove(pc1.c_str());
  std::remove(pc2.c_str());
  std::remove(pt.c_str());
}
