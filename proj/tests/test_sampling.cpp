#include <catch2/catch_amalgamated.hpp>

#include "cadence/sampling.hpp"
#include "cadence/train.hpp"

using namespace cadence;

namespace {

ModelConfig sampling_config() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.dim = 16;
  cfg.ff = 32;
  cfg.heads = 4;
  cfg.phoneme_vocab = 8;
  cfg.pitch_buckets = 16;
  cfg.max_duration = 4;
  cfg.codec_vocab = 12;
  cfg.codec_layers = 2;
  return cfg;
}

MaskConfig grouped_masks() {
  MaskConfig mc;
  mc.window_k = 1;
  mc.heads_phoneme = 1;
  mc.heads_prosody = 1;
  mc.heads_context = 2;
  return mc;
}

// Toy rule sized to the sampling_config codec: 3 classes, 4 offset slots.
ToyCodecRule small_rule() {
  ToyCodecRule rule;
  rule.a = 4;
  rule.b = 8;
  rule.c = 1;
  rule.vocab = 12;
  rule.layer_offsets = {0, 5};
  return rule;
}

Utterance memorization_utterance() {
  Utterance u;
  u.id = "memo";
  u.phonemes = {1, 2, 3};
  u.durations = {1, 2, 1};
  PitchQuantizer q(0.0, 1.0, 16);
  std::vector<int> buckets = {4, 6, 8};
  for (size_t i = 0; i < u.phonemes.size(); ++i)
    for (int off = 0; off < u.durations[i]; ++off)
      u.pitch_frames.push_back(q.bucket_center(buckets[i]));
  ProsodySeq pros;
  pros.pitch = buckets;
  pros.duration = u.durations;
  u.codec = toy_encode(u.phonemes, pros, small_rule());
  return u;
}

}  // namespace

TEST_CASE("softmax matches hand computation", "[sampling]") {
  Eigen::Matrix<float, 1, Eigen::Dynamic> logits(2);
  // large shared offset exercises the max-subtraction; float storage of the
  // shifted logit bounds accuracy near 1e-4
  logits << 1000.0f, 1000.0f + std::log(2.0f);
  std::vector<double> p = softmax_probs<float>(logits);
  CHECK(p[0] == Catch::Approx(1.0 / 3.0).margin(1e-4));
  CHECK(p[1] == Catch::Approx(2.0 / 3.0).margin(1e-4));

  Eigen::Matrix<double, 1, Eigen::Dynamic> dl(3);
  dl << 0.0, std::log(2.0), std::log(3.0);
  std::vector<double> q = softmax_probs<double>(dl);
  CHECK(q[0] == Catch::Approx(1.0 / 6.0));
  CHECK(q[1] == Catch::Approx(2.0 / 6.0));
  CHECK(q[2] == Catch::Approx(3.0 / 6.0));
}

TEST_CASE("nucleus keeps the smallest sufficient prefix", "[sampling]") {
  detail::NucleusSet set = detail::nucleus_set({0.5, 0.3, 0.2}, 0.7);
  CHECK(set.ids == std::vector<int>{0, 1});
  CHECK(set.mass == Catch::Approx(0.8));

  CHECK(detail::nucleus_set({0.5, 0.3, 0.2}, 0.2).ids == std::vector<int>{0});
  CHECK(detail::nucleus_set({0.5, 0.3, 0.2}, 1.0).ids.size() == 3);
  // equal masses break ties toward the lower id
  CHECK(detail::nucleus_set({0.4, 0.4, 0.2}, 0.5).ids == std::vector<int>{0, 1});
  // a slight float shortfall at rho = 1 keeps the full support
  CHECK(detail::nucleus_set({0.5, 0.5 - 5e-7}, 1.0).ids.size() == 2);
}

TEST_CASE("nucleus sampling rejects invalid inputs", "[sampling]") {
  Rng rng(1, 1);
  CHECK_THROWS_AS(nucleus_sample({}, 0.9, rng), SamplingError);
  CHECK_THROWS_AS(nucleus_sample({0.5, 0.4}, 0.9, rng), SamplingError);
  CHECK_THROWS_AS(nucleus_sample({1.5, -0.5}, 0.9, rng), SamplingError);
  CHECK_THROWS_AS(nucleus_sample({0.5, 0.5}, 0.0, rng), SamplingError);
  CHECK_THROWS_AS(nucleus_sample({0.5, 0.5}, 1.1, rng), SamplingError);
}

TEST_CASE("nucleus sampling draws from the truncated support", "[sampling]") {
  std::vector<double> probs = {0.5, 0.3, 0.2};
  Rng rng(2, stream_id('s', 1));
  int count0 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    int id = nucleus_sample(probs, 0.7, rng);
    REQUIRE(id <= 1);  // token 2 lies outside the nucleus
    if (id == 0) ++count0;
  }
  // renormalized p(0) = 0.5 / 0.8 = 0.625; five sigma is about 0.017
  CHECK(std::abs(count0 / static_cast<double>(n) - 0.625) < 0.02);

  // one-hot distribution is deterministic
  for (int i = 0; i < 50; ++i) CHECK(nucleus_sample({0.0, 0.0, 1.0, 0.0}, 0.9, rng) == 2);
  // a tiny rho degenerates to argmax
  for (int i = 0; i < 50; ++i) CHECK(nucleus_sample({0.1, 0.6, 0.3}, 1e-9, rng) == 1);
}

TEST_CASE("nucleus sampling is deterministic under a fixed seed", "[sampling]") {
  std::vector<double> probs = {0.25, 0.25, 0.3, 0.2};
  std::vector<int> a, b;
  {
    Rng rng(9, stream_id('s', 2));
    for (int i = 0; i < 100; ++i) a.push_back(nucleus_sample(probs, 0.9, rng));
  }
  {
    Rng rng(9, stream_id('s', 2));
    for (int i = 0; i < 100; ++i) b.push_back(nucleus_sample(probs, 0.9, rng));
  }
  CHECK(a == b);
}

TEST_CASE("prosody sampling fills targets and respects layout fields", "[sampling]") {
  ModelConfig cfg = sampling_config();
  ArModel<float> model(cfg, grouped_masks());
  model.init(31);
  SamplingConfig sc;

  PhonemeSeq phonemes = {1, 2, 3, 4};
  ProsodySeq prompt;
  prompt.pitch = {3};
  prompt.duration = {2};

  SECTION("full prosody") {
    Rng rng(5, stream_id('s', 3));
    ProsodySeq out = sample_prosody(model, phonemes, 1, prompt, LayoutOptions{}, sc, rng);
    REQUIRE(out.pitch.size() == 4);
    REQUIRE(out.duration.size() == 4);
    CHECK(out.pitch[0] == 3);
    CHECK(out.duration[0] == 2);
    for (int i = 1; i < 4; ++i) {
      CHECK(out.pitch[i] >= 0);
      CHECK(out.pitch[i] < cfg.pitch_buckets);
      CHECK(out.duration[i] >= 1);
      CHECK(out.duration[i] <= cfg.max_duration);
    }
  }
  SECTION("pitch disabled leaves neutral pitch") {
    LayoutOptions opt;
    opt.pitch = false;
    Rng rng(5, stream_id('s', 4));
    ProsodySeq out = sample_prosody(model, phonemes, 1, prompt, opt, sc, rng);
    for (int i = 1; i < 4; ++i) CHECK(out.pitch[i] == 0);
    for (int i = 1; i < 4; ++i) CHECK(out.duration[i] >= 1);
  }
  SECTION("duration disabled leaves neutral durations") {
    LayoutOptions opt;
    opt.duration = false;
    Rng rng(5, stream_id('s', 5));
    ProsodySeq out = sample_prosody(model, phonemes, 1, prompt, opt, sc, rng);
    for (int i = 1; i < 4; ++i) CHECK(out.duration[i] == 1);
  }
  SECTION("deterministic under a fixed stream") {
    Rng r1(5, stream_id('s', 6)), r2(5, stream_id('s', 6));
    ProsodySeq a = sample_prosody(model, phonemes, 1, prompt, LayoutOptions{}, sc, r1);
    ProsodySeq b = sample_prosody(model, phonemes, 1, prompt, LayoutOptions{}, sc, r2);
    CHECK(a.pitch == b.pitch);
    CHECK(a.duration == b.duration);
  }
  SECTION("rejects bad prompts") {
    Rng rng(5, 1);
    CHECK_THROWS_AS(sample_prosody(model, phonemes, 4, prompt, LayoutOptions{}, sc, rng),
                    SamplingError);
    ProsodySeq short_prompt;
    CHECK_THROWS_AS(sample_prosody(model, phonemes, 1, short_prompt, LayoutOptions{}, sc, rng),
                    SamplingError);
  }
}

TEST_CASE("duration-guided generation emits exactly the planned frames", "[sampling]") {
  ModelConfig cfg = sampling_config();
  SamplingConfig sc;
  Rng meta(77, stream_id('s', 7));
  for (int trial = 0; trial < 10; ++trial) {
    ArModel<float> model(cfg, grouped_masks());
    model.init(100 + trial);

    int l_total = 3;
    PhonemeSeq phonemes;
    ProsodySeq prosody;
    int total = 0;
    for (int i = 0; i < l_total; ++i) {
      phonemes.push_back(static_cast<int>(meta.uniform_int(cfg.phoneme_vocab)));
      prosody.pitch.push_back(static_cast<int>(meta.uniform_int(cfg.pitch_buckets)));
      int d = 1 + static_cast<int>(meta.uniform_int(cfg.max_duration));
      prosody.duration.push_back(d);
      total += d;
    }
    std::vector<int> prompt_codec(prosody.duration[0], 3);
    Rng rng(trial, stream_id('s', 8));
    SpeechResult res =
        infer_speech(model, phonemes, 1, prosody, prompt_codec, LayoutOptions{}, sc, rng);
    REQUIRE(static_cast<int>(res.tokens.size()) == total);
    CHECK_FALSE(res.truncated);
    CHECK_FALSE(res.hit_eos);
    for (size_t i = 0; i < prompt_codec.size(); ++i) CHECK(res.tokens[i] == prompt_codec[i]);
    for (int tok : res.tokens) {
      CHECK(tok >= 0);
      CHECK(tok < cfg.codec_vocab);  // EOS is rejected under duration guidance
    }
  }
}

TEST_CASE("speech generation validates its inputs", "[sampling]") {
  ModelConfig cfg = sampling_config();
  ArModel<float> model(cfg, grouped_masks());
  model.init(41);
  SamplingConfig sc;
  Rng rng(1, 1);

  PhonemeSeq phonemes = {1, 2};
  ProsodySeq prosody;
  prosody.pitch = {3, 4};
  prosody.duration = {2, 2};

  // prompt codec length must equal the summed prompt durations
  CHECK_THROWS_AS(infer_speech(model, phonemes, 1, prosody, {7}, LayoutOptions{}, sc, rng),
                  SamplingError);
  // total duration must fit in max_steps
  SamplingConfig tight = sc;
  tight.max_steps = 3;
  CHECK_THROWS_AS(
      infer_speech(model, phonemes, 1, prosody, {7, 7}, LayoutOptions{}, tight, rng),
      SamplingError);

  MaskConfig plain = grouped_masks();
  plain.plain = true;
  plain.grouping = false;
  ArModel<float> plain_model(cfg, plain);
  plain_model.init(42);
  LayoutOptions plain_opt;
  plain_opt.prosody = false;
  // duration guidance requires a prosody plan
  CHECK_THROWS_AS(
      infer_speech(plain_model, phonemes, 1, ProsodySeq{}, {7}, plain_opt, sc, rng),
      SamplingError);
}

TEST_CASE("unguided generation stops at EOS or the step budget", "[sampling]") {
  ModelConfig cfg = sampling_config();
  MaskConfig plain = grouped_masks();
  plain.plain = true;
  plain.grouping = false;
  SamplingConfig sc;
  sc.duration_guided = false;
  sc.max_steps = 25;

  PhonemeSeq phonemes = {1, 2, 3};
  LayoutOptions plain_opt;
  plain_opt.prosody = false;
  for (int trial = 0; trial < 5; ++trial) {
    ArModel<float> model(cfg, plain);
    model.init(200 + trial);
    Rng rng(trial, stream_id('s', 9));
    SpeechResult res =
        infer_speech(model, phonemes, 1, ProsodySeq{}, {3}, plain_opt, sc, rng);
    CHECK(static_cast<int>(res.tokens.size()) <= sc.max_steps);
    CHECK((res.hit_eos || res.truncated));
    CHECK(res.hit_eos != res.truncated);
    for (int tok : res.tokens) CHECK(tok != cfg.eos_id());
  }
}

TEST_CASE("refinement fill preserves given layers and prompts", "[sampling]") {
  ModelConfig cfg = sampling_config();
  NarModel<float> model(cfg);
  model.init(51);

  PhonemeSeq phonemes = {1, 2, 3};
  ProsodySeq prosody;
  prosody.pitch = {3, 5, 7};
  prosody.duration = {2, 2, 1};
  std::vector<int> layer1 = {4, 5, 6, 7, 8};
  CodecMatrix prompt;
  prompt.tokens = {{4, 5}, {9, 10}};

  CodecMatrix out = infer_nar(model, phonemes, prosody, layer1, prompt, 2);
  REQUIRE(out.layers() == 2);
  REQUIRE(out.frames() == 5);
  CHECK(out.tokens[0] == layer1);
  CHECK(out.tokens[1][0] == 9);
  CHECK(out.tokens[1][1] == 10);
  for (int t = 2; t < 5; ++t) {
    CHECK(out.tokens[1][t] >= 0);
    CHECK(out.tokens[1][t] < cfg.codec_vocab);
  }

  CodecMatrix again = infer_nar(model, phonemes, prosody, layer1, prompt, 2);
  CHECK(again.tokens == out.tokens);

  CHECK_THROWS_AS(infer_nar(model, phonemes, prosody, {}, prompt, 0), SamplingError);
  CHECK_THROWS_AS(infer_nar(model, phonemes, prosody, layer1, prompt, 5), SamplingError);
  CodecMatrix bad;
  bad.tokens = {{4, 5}};
  CHECK_THROWS_AS(infer_nar(model, phonemes, prosody, layer1, bad, 2), SamplingError);
}

TEST_CASE("standalone duration prediction passes prompts through", "[sampling]") {
  ModelConfig cfg = sampling_config();
  DurationModel<float> model(cfg);
  model.init(61);

  PhonemeSeq phonemes = {0, 1, 2, 3, 4};
  std::vector<int> out = predict_durations(model, phonemes, {2, 3});
  REQUIRE(out.size() == 5);
  CHECK(out[0] == 2);
  CHECK(out[1] == 3);
  for (size_t i = 2; i < out.size(); ++i) {
    CHECK(out[i] >= 1);
    CHECK(out[i] <= cfg.max_duration);
  }
  std::vector<int> again = predict_durations(model, phonemes, {2, 3});
  CHECK(again == out);
  CHECK_THROWS_AS(predict_durations(model, phonemes, {1, 1, 1, 1, 1}), SamplingError);
}

TEST_CASE("reranking picks the closest candidate", "[sampling]") {
  CHECK(rerank({{1, 2, 3}}, {1, 2, 3}) == 0);
  CHECK(rerank({{1, 2, 3}, {1, 2}, {9, 9, 9}}, {1, 2}) == 1);
  CHECK(rerank({{1}, {1}}, {2}) == 0);  // tie goes to the lower index
  CHECK_THROWS_AS(rerank({}, {1}), SamplingError);
}

TEST_CASE("models memorize a single utterance end to end", "[sampling]") {
  ModelConfig cfg = sampling_config();
  Utterance u = memorization_utterance();
  std::vector<Utterance> data = {u};

  TrainConfig tc;
  tc.epochs = 300;
  tc.accum = 1;
  tc.peak_lr = 2e-3;
  tc.warmup_steps = 20;
  tc.log_every = 1000;

  ArModel<float> ar(cfg, grouped_masks());
  ar.init(71);
  TrainLog ar_log = train_ar(ar, data, TrainVariant::Full, tc);
  REQUIRE(ar_log.final_loss < 0.2);

  SamplingConfig greedy;
  greedy.rho_p = 1e-9;
  greedy.rho_d = 1e-9;
  greedy.rho_c = 1e-9;

  Rng r1(1, stream_id('m', 1));
  ProsodySeq plan = sample_prosody(ar, u.phonemes, 0, ProsodySeq{}, LayoutOptions{}, greedy, r1);
  CHECK(plan.pitch == std::vector<int>{4, 6, 8});
  CHECK(plan.duration == u.durations);

  Rng r2(1, stream_id('m', 2));
  SpeechResult speech =
      infer_speech(ar, u.phonemes, 0, plan, {}, LayoutOptions{}, greedy, r2);
  CHECK(speech.tokens == u.codec.tokens[0]);

  TrainConfig nar_tc = tc;
  nar_tc.epochs = 200;
  NarModel<float> nar(cfg);
  nar.init(72);
  TrainLog nar_log = train_nar(nar, data, nar_tc);
  REQUIRE(nar_log.final_loss < 0.2);
  CodecMatrix filled = infer_nar(nar, u.phonemes, plan, u.codec.tokens[0], {}, 0);
  CHECK(filled.tokens[1] == u.codec.tokens[1]);

  TrainConfig dur_tc = tc;
  dur_tc.epochs = 200;
  DurationModel<float> dm(cfg);
  dm.init(73);
  TrainLog dur_log = train_duration(dm, data, dur_tc);
  REQUIRE(dur_log.final_loss < 0.2);
  CHECK(predict_durations(dm, u.phonemes, {}) == u.durations);
}
