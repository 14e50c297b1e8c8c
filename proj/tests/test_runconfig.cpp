#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "cadence/runconfig.hpp"

using namespace cadence;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return run_config_from_ini(in, "test.ini");
}

}  // namespace

TEST_CASE("ini parser reads sections, keys, and comments") {
  std::istringstream in(
      "# leading comment\n"
      "[alpha]\n"
      "  x = 1  \n"
      "y=  spaced value \n"
      "; another comment\n"
      "[beta]\n"
      "x = 2\n");
  detail::IniFile f = detail::parse_ini(in, "t");
  REQUIRE(f.sections.size() == 2);
  CHECK(f.sections.at("alpha").at("x").raw == "1");
  CHECK(f.sections.at("alpha").at("y").raw == "spaced value");
  CHECK(f.sections.at("alpha").at("y").line == 4);
  CHECK(f.sections.at("beta").at("x").raw == "2");
}

TEST_CASE("ini parser rejects malformed input") {
  auto parse_text = [](const std::string& text) {
    std::istringstream in(text);
    return detail::parse_ini(in, "t");
  };
  CHECK_THROWS_AS(parse_text("[a]\nx = 1\nx = 2\n"), ConfigError);   // duplicate key
  CHECK_THROWS_AS(parse_text("x = 1\n"), ConfigError);               // key before section
  CHECK_THROWS_AS(parse_text("[a]\njust words\n"), ConfigError);     // no equals sign
  CHECK_THROWS_AS(parse_text("[a\nx = 1\n"), ConfigError);           // unterminated section
  CHECK_THROWS_AS(parse_text("[]\n"), ConfigError);                  // empty section name
  CHECK_THROWS_AS(parse_text("[a]\n= 1\n"), ConfigError);            // empty key

  try {
    parse_text("[a]\nx = 1\nx = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("t:3") != std::string::npos);
  }
}

TEST_CASE("empty input yields the built-in defaults") {
  RunConfig parsed = parse("");
  RunConfig defaults;
  CHECK(run_config_ini(parsed) == run_config_ini(defaults));
  CHECK(parsed.out_dir == "out");
  CHECK(parsed.jobs == 1);
  CHECK(parsed.model.dim == 64);
  CHECK(parsed.mask.window_k == 1);
  CHECK(parsed.sampling.rho_c == 0.9);
  CHECK(parsed.corpus.rule.layers == 2);
}

TEST_CASE("typed keys parse into their fields") {
  RunConfig c = parse(
      "[run]\n"
      "out_dir = /tmp/somewhere\n"
      "jobs = 3\n"
      "[model]\n"
      "dim = 48\n"
      "heads = 6\n"
      "[mask]\n"
      "window_k = 2\n"
      "grouping = false\n"
      "heads_context = 4\n"
      "[train]\n"
      "peak_lr = 0.0025\n"
      "seed = 123\n"
      "[sampling]\n"
      "rho_c = 1.0\n"
      "duration_guided = false\n"
      "[corpus]\n"
      "unvoiced_rate = 0.25\n"
      "[codec]\n"
      "layer_offsets = 0,17,34\n");
  CHECK(c.out_dir == "/tmp/somewhere");
  CHECK(c.jobs == 3);
  CHECK(c.model.dim == 48);
  CHECK(c.model.heads == 6);
  CHECK(c.model.ff == 256);  // untouched keys keep defaults
  CHECK(c.mask.window_k == 2);
  CHECK(c.mask.grouping == false);
  CHECK(c.mask.heads_context == 4);
  CHECK(c.train.peak_lr == 0.0025);
  CHECK(c.train.seed == 123);
  CHECK(c.sampling.rho_c == 1.0);
  CHECK(c.sampling.duration_guided == false);
  CHECK(c.corpus.unvoiced_rate == 0.25);
  CHECK(c.corpus.rule.layer_offsets == std::vector<int>{0, 17, 34});
  CHECK(c.corpus.rule.layers == 3);  // derived from the offset list
}

TEST_CASE("type errors carry the key path") {
  CHECK_THROWS_AS(parse("[run]\njobs = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse("[run]\njobs = 3x\n"), ConfigError);
  CHECK_THROWS_AS(parse("[sampling]\nrho_c = high\n"), ConfigError);
  CHECK_THROWS_AS(parse("[mask]\ngrouping = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse("[train]\nseed = -4\n"), ConfigError);
  CHECK_THROWS_AS(parse("[codec]\nlayer_offsets = \n"), ConfigError);

  try {
    parse("[mask]\ngrouping = yes\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("mask.grouping") != std::string::npos);
    CHECK(msg.find("yes") != std::string::npos);
  }
}

TEST_CASE("unknown sections and keys are rejected") {
  CHECK_THROWS_AS(parse("[nonsense]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[model]\ndimension = 48\n"), ConfigError);

  try {
    parse("[model]\ndim = 48\ndimension = 12\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("model.dimension") != std::string::npos);
    CHECK(msg.find(":3") != std::string::npos);
  }
}

TEST_CASE("serialized form reparses exactly") {
  RunConfig c;
  c.out_dir = "elsewhere";
  c.jobs = 4;
  c.model.dim = 16;
  c.model.ff = 32;
  c.model.pitch_buckets = 16;
  c.model.max_duration = 4;
  c.mask.window_k = 2;
  c.mask.heads_context = 2;
  c.train.peak_lr = 1e-3 / 3.0;  // not representable in few digits
  c.train.seed = 0xFFFFFFFFFFFFFFFFull;
  c.sampling.rho_p = 0.1 + 0.2;       // 0.30000000000000004
  c.sampling.duration_guided = false;
  c.corpus.pitch_buckets = 16;
  c.corpus.max_duration = 4;
  c.corpus.unvoiced_rate = 1.0 / 3.0;
  c.corpus.rule.layer_offsets = {0, 11, 22};
  c.corpus.rule.layers = 3;

  std::string text = run_config_ini(c);
  RunConfig back = parse(text);
  CHECK(run_config_ini(back) == text);
  CHECK(back.train.peak_lr == c.train.peak_lr);
  CHECK(back.sampling.rho_p == c.sampling.rho_p);
  CHECK(back.train.seed == c.train.seed);
  CHECK(back.corpus.unvoiced_rate == c.corpus.unvoiced_rate);
}

TEST_CASE("config file roundtrips through disk") {
  std::string path =
      (std::filesystem::temp_directory_path() / "cadence_runconfig_test.ini").string();
  RunConfig c;
  c.out_dir = "disk_roundtrip";
  c.sampling.seed = 99;
  write_run_config(path, c);
  RunConfig back = load_run_config(path);
  CHECK(run_config_ini(back) == run_config_ini(c));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_run_config(path), IoError);
}

TEST_CASE("cross-section validation") {
  RunConfig c;  // defaults are mutually consistent
  CHECK_NOTHROW(c.validate());

  SECTION("mask heads must sum to model heads") {
    c.mask.heads_context = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SECTION("model must match corpus sizes") {
    c.model.phoneme_vocab = 33;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SECTION("duration vocabulary must cover the corpus range") {
    c.model.max_duration = c.corpus.max_duration - 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SECTION("model must match codec rule") {
    c.model.codec_vocab = 128;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SECTION("pitch range is pinned to the corpus") {
    c.model.pitch_max = 2.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SECTION("jobs must be positive") {
    c.jobs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}
