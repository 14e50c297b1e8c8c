#include <catch2/catch_amalgamated.hpp>

#include "cadence/decode.hpp"
#include "cadence/model.hpp"
#include "testutil.hpp"

using namespace cadence;

namespace {

ModelConfig decode_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.dim = 16;
  cfg.ff = 32;
  cfg.heads = 4;
  cfg.phoneme_vocab = 16;
  cfg.pitch_buckets = 16;
  cfg.max_duration = 6;
  cfg.codec_vocab = 8;
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

double max_abs_diff(const Mat<float>& a, const Mat<float>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("decoder prefill matches tape forward") {
  ModelConfig cfg = decode_config();
  MaskConfig mc = grouped_masks();
  ArModel<float> model(cfg, mc);
  model.init(21);

  Rng rng(500, 1);
  for (int trial = 0; trial < 20; ++trial) {
    LayoutOptions opt;
    testutil::RandomCase rc = testutil::random_case(rng, opt);

    Tape<float> tape;
    HeadMasks masks = build_ar_mask(rc.layout, rc.align, mc);
    Var hidden = ar_forward(tape, model, rc.layout, masks, nullptr);
    Mat<float> tape_hidden = tape.value(hidden);

    Mat<float> dec_hidden = decoder_full_hidden(model, rc.layout, rc.align);

    INFO("trial " << trial << " size " << rc.layout.size());
    REQUIRE(max_abs_diff(tape_hidden, dec_hidden) < 2e-4);
  }
}

TEST_CASE("decoder incremental append equals one-shot prefill") {
  ModelConfig cfg = decode_config();
  MaskConfig mc = grouped_masks();
  ArModel<float> model(cfg, mc);
  model.init(33);

  Rng rng(501, 1);
  for (int trial = 0; trial < 10; ++trial) {
    LayoutOptions opt;
    testutil::RandomCase rc = testutil::random_case(rng, opt);
    int n = rc.layout.size();
    auto group_heads = decode_group_heads(rc.layout, mc);

    // One-shot: feed the whole stream as a single block.
    ArDecoder<float> oneshot(model, group_heads);
    Mat<float> full_x = embed_positions(model, rc.layout, 0, n);
    Mat<float> full_hidden =
        oneshot.append(full_x, decode_mask_rows(rc.layout, rc.align, mc, 0, n));

    // Incremental: the phoneme segment plus its closing separator as one
    // block (phoneme rows look ahead to the separator), then one position
    // at a time.
    ArDecoder<float> inc(model, group_heads);
    Mat<float> inc_hidden(n, cfg.dim);
    int pt = rc.layout.has_prosody ? rc.layout.sep_prosody_pos + 1
                                   : rc.layout.phoneme_total;
    Mat<float> seg = inc.append(embed_positions(model, rc.layout, 0, pt),
                                decode_mask_rows(rc.layout, rc.align, mc, 0, pt));
    inc_hidden.topRows(pt) = seg;
    for (int pos = pt; pos < n; ++pos) {
      Mat<float> x = embed_positions(model, rc.layout, pos, pos + 1);
      Mat<float> h = inc.append(x, decode_mask_rows(rc.layout, rc.align, mc, pos, pos + 1));
      REQUIRE(h.rows() == 1);
      inc_hidden.row(pos) = h.row(0);
    }

    // Block size changes which matrix-product kernel runs, so accumulation
    // order differs at the ulp level; the results must still agree closely.
    INFO("trial " << trial << " size " << n);
    REQUIRE(max_abs_diff(full_hidden, inc_hidden) < 1e-4);
  }
}

TEST_CASE("decoder splits a stream at arbitrary block boundaries") {
  ModelConfig cfg = decode_config();
  MaskConfig mc = grouped_masks();
  ArModel<float> model(cfg, mc);
  model.init(5);

  Rng rng(502, 1);
  LayoutOptions opt;
  testutil::RandomCase rc = testutil::random_case(rng, opt);
  int n = rc.layout.size();
  auto group_heads = decode_group_heads(rc.layout, mc);

  ArDecoder<float> oneshot(model, group_heads);
  Mat<float> full = oneshot.append(embed_positions(model, rc.layout, 0, n),
                                   decode_mask_rows(rc.layout, rc.align, mc, 0, n));

  // Cuts never split the phoneme segment or separate it from its closing
  // separator; phoneme rows look ahead that far.
  int prefix = rc.layout.has_prosody ? rc.layout.sep_prosody_pos + 1
                                     : rc.layout.phoneme_total;
  int cut = prefix + rng.uniform_int(n - prefix);
  if (cut == 0) cut = 1;
  ArDecoder<float> split(model, group_heads);
  Mat<float> ha = split.append(embed_positions(model, rc.layout, 0, cut),
                               decode_mask_rows(rc.layout, rc.align, mc, 0, cut));
  Mat<float> hb = split.append(embed_positions(model, rc.layout, cut, n),
                               decode_mask_rows(rc.layout, rc.align, mc, cut, n));
  REQUIRE(ha.rows() == cut);
  REQUIRE(hb.rows() == n - cut);

  Mat<float> joined(n, cfg.dim);
  joined.topRows(cut) = ha;
  joined.bottomRows(n - cut) = hb;
  REQUIRE((full - joined).cwiseAbs().maxCoeff() < 1e-4f);
}

TEST_CASE("decoder readout heads match tape logits") {
  ModelConfig cfg = decode_config();
  MaskConfig mc = grouped_masks();
  ArModel<float> model(cfg, mc);
  model.init(77);

  Rng rng(503, 1);
  LayoutOptions opt;
  testutil::RandomCase rc = testutil::random_case(rng, opt);
  const SequenceLayout& L = rc.layout;

  Tape<float> tape;
  HeadMasks masks = build_ar_mask(L, rc.align, mc);
  Var hidden = ar_forward(tape, model, L, masks, nullptr);
  Mat<float> th = tape.value(hidden);

  ArDecoder<float> dec(model, decode_group_heads(L, mc));
  Mat<float> dh = dec.append(embed_positions(model, L, 0, L.size()),
                             decode_mask_rows(L, rc.align, mc, 0, L.size()));

  auto logits_close = [](const Mat<float>& a, const Mat<float>& b) {
    return (a - b).cwiseAbs().maxCoeff() < 2e-4f;
  };

  int pr = L.prosody_predictor(0);
  Mat<float> tape_pitch = th.row(pr) * model.head_pitch_w.value + model.head_pitch_b.value;
  REQUIRE(logits_close(tape_pitch, dec.pitch_logits(dh, pr)));
  Mat<float> tape_dur = th.row(pr) * model.head_dur_w.value + model.head_dur_b.value;
  REQUIRE(logits_close(tape_dur, dec.duration_logits(dh, pr)));

  int sr = L.speech_predictor(0);
  Mat<float> tape_speech = th.row(sr) * model.head_speech_w.value + model.head_speech_b.value;
  REQUIRE(logits_close(tape_speech, dec.speech_logits(dh, sr)));
  REQUIRE(dec.speech_logits(dh, sr).cols() == cfg.codec_vocab + 1);
}

TEST_CASE("decoder works on plain layouts") {
  ModelConfig cfg = decode_config();
  MaskConfig mc = grouped_masks();
  mc.plain = true;
  mc.grouping = false;
  ArModel<float> model(cfg, mc);
  model.init(9);

  Rng rng(504, 1);
  LayoutOptions opt;
  opt.prosody = false;
  testutil::RandomCase rc = testutil::random_case(rng, opt);

  Tape<float> tape;
  HeadMasks masks = build_ar_mask(rc.layout, rc.align, mc);
  Var hidden = ar_forward(tape, model, rc.layout, masks, nullptr);
  Mat<float> th = tape.value(hidden);
  Mat<float> dh = decoder_full_hidden(model, rc.layout, rc.align);
  REQUIRE((th - dh).cwiseAbs().maxCoeff() < 2e-4f);
}

TEST_CASE("decoder rejects bad head grouping") {
  ModelConfig cfg = decode_config();
  MaskConfig mc = grouped_masks();
  ArModel<float> model(cfg, mc);
  model.init(1);
  REQUIRE_THROWS_AS(ArDecoder<float>(model, {1, 1, 1}), ModelError);
}
