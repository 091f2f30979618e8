#include <doctest.h>

#include <cmath>

#include "logo/lsc.hpp"
#include "logo/rng.hpp"
#include "logo/synthdata.hpp"
#include "oracles.hpp"

using namespace logo;
using namespace logo::lsc;
using mine::CharSequence;
using mine::CodeDictionary;

namespace {

// small configuration keeps graph-heavy tests quick
LscConfig small_config() {
  LscConfig cfg;
  cfg.patch_w = 32;
  cfg.patch_h = 16;
  cfg.c = 6;
  cfg.d = 8;
  cfg.e0 = 4;
  cfg.e1 = 6;
  cfg.e2 = 8;
  cfg.e3 = 10;
  cfg.M = 2;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("language score depends only on the first code") {
  CodeDictionary dict;
  const CharSequence pos = mine::encode_positive("ab", dict);
  CHECK(language_score(pos) == 1);
  const CharSequence neg = mine::encode_negative(dict);
  CHECK(language_score(neg) == 0);

  // mutating any later position never changes the score
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    CharSequence mut = pos;
    const int i = 1 + rng.uniform_int(dict.len_max - 1);
    mut.codes[static_cast<size_t>(i)] = rng.uniform_int(CodeDictionary::kNumClasses);
    CHECK(language_score(mut) == 1);
    CharSequence mutn = neg;
    mutn.codes[static_cast<size_t>(i)] = rng.uniform_int(CodeDictionary::kNumClasses);
    CHECK(language_score(mutn) == 0);
  }
}

TEST_CASE("rescore averages detection and language scores") {
  std::vector<Detection> dets{{oracles::box(0, 0, 4, 4), 0.5}, {oracles::box(8, 0, 4, 4), 0.8}};
  const auto out = rescore(dets, {1, 0});
  CHECK(out[0].score == doctest::Approx(0.75));
  CHECK(out[1].score == doctest::Approx(0.40));
  CHECK(out[0].score == (0.5 + 1.0) / 2.0);  // exact
  CHECK_THROWS(rescore(dets, {1}));

  // all-ones language scores preserve the ordering
  Rng rng(9);
  std::vector<Detection> many;
  for (int i = 0; i < 20; ++i) many.push_back({oracles::box(i * 5.0, 0, 4, 4), rng.uniform(0, 1)});
  const auto uplifted = rescore(many, std::vector<int>(20, 1));
  for (int i = 0; i < 19; ++i) {
    const bool before = many[static_cast<size_t>(i)].score < many[static_cast<size_t>(i + 1)].score;
    const bool after = uplifted[static_cast<size_t>(i)].score < uplifted[static_cast<size_t>(i + 1)].score;
    CHECK(before == after);
  }

  // exposed fusion weight defaults to the arithmetic mean
  const auto weighted = rescore(dets, {1, 0}, 0.75);
  CHECK(weighted[0].score == doctest::Approx(0.75 * 1.0 + 0.25 * 0.5));
}

TEST_CASE("kmeans pseudo-labels separate two-tone patches exactly") {
  img::Image patch(24, 10, 1);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 24; ++x) patch.at(x, y) = 30;
  // glyph block in the middle
  for (int y = 3; y < 7; ++y)
    for (int x = 8; x < 16; ++x) patch.at(x, y) = 200;
  const nn::Tensor mask = kmeans_pseudolabel(patch);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 24; ++x) {
      const bool glyph = y >= 3 && y < 7 && x >= 8 && x < 16;
      CHECK(mask[static_cast<int64_t>(y) * 24 + x] == (glyph ? 1.0 : 0.0));
    }

  img::Image constant(8, 8, 1, 77);
  const nn::Tensor zeros = kmeans_pseudolabel(constant);
  for (int64_t i = 0; i < zeros.size(); ++i) CHECK(zeros[i] == 0.0);
}

TEST_CASE("kmeans masks agree with generator glyph masks") {
  const char* words[] = {"abc", "xyz", "m0th", "42"};
  double agree = 0.0;
  for (const char* w : words) {
    const synth::WordPatch wp = synth::render_word_patch(w, 64, 24);
    const nn::Tensor mask = kmeans_pseudolabel(wp.patch);
    int64_t same = 0;
    for (int64_t i = 0; i < mask.size(); ++i)
      if ((mask[i] > 0.5) == (wp.mask[static_cast<size_t>(i)] != 0)) ++same;
    agree += static_cast<double>(same) / static_cast<double>(mask.size());
  }
  CHECK(agree / 4.0 >= 0.9);
}

TEST_CASE("segmentation loss values and zero case") {
  nn::Tensor a = nn::Tensor::full({4, 6}, 0.5);
  nn::Tensor b({4, 6});
  for (int64_t i = 0; i < b.size(); ++i) b[i] = i % 2 ? 1.0 : 0.0;
  CHECK(loss_seg(a, a) == doctest::Approx(0.0));
  CHECK(loss_seg(a, b) == doctest::Approx(0.25));
  nn::Tensor c({3, 3});
  CHECK_THROWS(loss_seg(a, c));
}

TEST_CASE("recognition loss: lambdas, one-hot zero case, M=1 reduction") {
  LscConfig cfg;
  CHECK(cfg.lambda_v == doctest::Approx(1.0));
  CHECK(cfg.lambda_l == doctest::Approx(1.0));

  CodeDictionary dict;
  dict.len_max = 5;
  const CharSequence target = mine::encode_positive("hi", dict);
  const int K = CodeDictionary::kNumClasses;
  auto one_hot = [&](double scale) {
    nn::Tensor t({5, K});
    for (int i = 0; i < 5; ++i)
      for (int k = 0; k < K; ++k)
        t[static_cast<int64_t>(i) * K + k] =
            k == target.codes[static_cast<size_t>(i)] ? scale : -scale;
    return t;
  };

  RecognitionOutput out;
  out.logits_v = one_hot(30.0);
  out.logits_l = {one_hot(30.0)};
  out.logits_f = {one_hot(30.0)};
  CHECK(loss_rec(out, target, 1.0, 1.0) < 1e-9);

  // M = 1 reduces to L_v + L_l + L_f
  RecognitionOutput noisy;
  noisy.logits_v = one_hot(1.0);
  noisy.logits_l = {one_hot(0.5)};
  noisy.logits_f = {one_hot(2.0)};
  double manual = 0.0;
  for (const nn::Tensor* t : {&noisy.logits_v, &noisy.logits_l[0], &noisy.logits_f[0]}) {
    double ce = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double* row = t->data() + static_cast<int64_t>(i) * K;
      double mx = row[0];
      for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      double z = 0.0;
      for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
      ce -= row[target.codes[static_cast<size_t>(i)]] - mx - std::log(z);
    }
    manual += ce / 5.0;
  }
  CHECK(loss_rec(noisy, target, 1.0, 1.0) == doctest::Approx(manual));
}

TEST_CASE("recognize emits the documented shapes deterministically") {
  LscConfig cfg;  // default 128x32 geometry
  cfg.seed = 5;
  LscNet net(cfg);
  const synth::WordPatch wp = synth::render_word_patch("test", cfg.patch_w, cfg.patch_h);
  const RecognitionOutput a = net.recognize(wp.patch);
  CHECK(a.logits_v.shape() == std::vector<int>{26, 38});
  CHECK(a.logits_f.size() == 3);
  CHECK(a.logits_l.size() == 3);
  CHECK(a.f_vis.shape() == std::vector<int>{26, 32});
  mine::CodeDictionary dict;
  mine::validate_sequence(a.decoded, dict);

  // duplicated input gives identical outputs (inference is per-sample)
  const RecognitionOutput b = net.recognize(wp.patch);
  for (int64_t i = 0; i < a.logits_f.back().size(); ++i)
    CHECK(a.logits_f.back()[i] == b.logits_f.back()[i]);

  img::Image wrong(16, 16, 1);
  CHECK_THROWS(net.recognize(wrong));
}

TEST_CASE("glyph branch: output shape, constant case, gradients") {
  LscConfig cfg = small_config();
  LscNet net(cfg);
  const synth::WordPatch wp = synth::render_word_patch("ab", cfg.patch_w, cfg.patch_h);

  GlyphFeatures feats;
  net.recognize(wp.patch, &feats);
  CHECK(feats.f0.shape() == std::vector<int>{1, cfg.e0, cfg.patch_h, cfg.patch_w});
  CHECK(feats.f1.shape() == std::vector<int>{1, cfg.e1, cfg.patch_h / 2, cfg.patch_w / 2});
  CHECK(feats.f2.shape() == std::vector<int>{1, cfg.e2, cfg.patch_h / 4, cfg.patch_w / 4});

  nn::Tensor sm = net.glyph_forward(feats);
  CHECK(sm.shape() == std::vector<int>{cfg.patch_h, cfg.patch_w});
  for (int64_t i = 0; i < sm.size(); ++i) {
    CHECK(sm[i] >= 0.0);
    CHECK(sm[i] <= 1.0);
  }

  // zero weights in the last conv: sigmoid(0) = 0.5 everywhere
  LscNet zeroed(cfg);
  nn::Tensor& w = zeroed.params().get("tau3.w");
  for (int64_t i = 0; i < w.size(); ++i) w[i] = 0.0;
  zeroed.params().get("tau3.b")[0] = 0.0;
  GlyphFeatures feats2;
  zeroed.recognize(wp.patch, &feats2);
  const nn::Tensor flat = zeroed.glyph_forward(feats2);
  for (int64_t i = 0; i < flat.size(); ++i) CHECK(flat[i] == doctest::Approx(0.5));

  // mismatched shapes are rejected
  GlyphFeatures bad = feats;
  bad.f1 = nn::Tensor({1, cfg.e1, 3, 5});
  CHECK_THROWS(net.glyph_forward(bad));
}

TEST_CASE("seg loss gradient through the glyph branch matches finite differences") {
  LscConfig cfg = small_config();
  LscNet net(cfg);
  const synth::WordPatch wp = synth::render_word_patch("ok", cfg.patch_w, cfg.patch_h);
  const nn::Tensor label = kmeans_pseudolabel(wp.patch);
  nn::Tensor label4({1, 1, cfg.patch_h, cfg.patch_w}, label.vec());

  auto loss_fn = [&]() {
    nn::Tape tape;
    nn::GraphParams P(tape, net.params(), false);
    nn::Val x = tape.constant(patch_to_tensor(wp.patch));
    auto g = net.forward(tape, P, x, true);
    nn::Val sm = net.glyph_graph(tape, P, g.f0, g.f1, g.f2, true);
    return tape.val(tape.mse(sm, tape.constant(label4))).item();
  };

  nn::Tape tape;
  nn::GraphParams P(tape, net.params(), true);
  nn::Val x = tape.constant(patch_to_tensor(wp.patch));
  auto g = net.forward(tape, P, x, true);
  nn::Val sm = net.glyph_graph(tape, P, g.f0, g.f1, g.f2, true);
  nn::Val loss = tape.mse(sm, tape.constant(label4));
  tape.backward(loss);

  Rng pick(17);
  for (const char* name : {"phi2.w", "phi1.w", "tau1.w", "tau3.w", "gbn2.g", "b0.w"}) {
    nn::Tensor& w = net.params().get(name);
    nn::Tape tape2;
    nn::GraphParams P2(tape2, net.params(), true);
    nn::Val x2 = tape2.constant(patch_to_tensor(wp.patch));
    auto g2 = net.forward(tape2, P2, x2, true);
    nn::Val sm2 = net.glyph_graph(tape2, P2, g2.f0, g2.f1, g2.f2, true);
    nn::Val loss2 = tape2.mse(sm2, tape2.constant(label4));
    tape2.backward(loss2);
    const nn::Tensor grad = tape2.grad(P2(name));
    const int64_t i = pick.uniform_int(static_cast<int>(w.size()));
    const double fd = oracles::central_diff(loss_fn, &w[i], 1e-6);
    CHECK(oracles::rel_err(grad[i], fd) < 1e-4);
  }
}

TEST_CASE("recognition loss gradient through the recognizer matches finite differences") {
  LscConfig cfg = small_config();
  LscNet net(cfg);
  const synth::WordPatch wp = synth::render_word_patch("no", cfg.patch_w, cfg.patch_h);
  mine::CodeDictionary dict;
  dict.len_max = cfg.c;
  const CharSequence target = mine::encode_positive("no", dict);
  std::vector<int> targets(target.codes.begin(), target.codes.end());
  const std::vector<double> ones(targets.size(), 1.0);

  auto build = [&](nn::Tape& tape, nn::GraphParams& P) {
    nn::Val x = tape.constant(patch_to_tensor(wp.patch));
    auto g = net.forward(tape, P, x, true);
    nn::Val rec = tape.scale(tape.ce_rows(g.logits_v, targets, ones), cfg.lambda_v);
    for (int i = 0; i < cfg.M; ++i) {
      rec = tape.add(rec, tape.scale(tape.ce_rows(g.logits_l[static_cast<size_t>(i)], targets, ones),
                                     cfg.lambda_l / cfg.M));
      rec = tape.add(rec, tape.scale(tape.ce_rows(g.logits_f[static_cast<size_t>(i)], targets, ones),
                                     1.0 / cfg.M));
    }
    return rec;
  };
  auto loss_fn = [&]() {
    nn::Tape tape;
    nn::GraphParams P(tape, net.params(), false);
    return tape.val(build(tape, P)).item();
  };

  Rng pick(29);
  for (const char* name : {"len.w", "attn.v.w", "lang.embed", "lang.l0.f.w", "fuse.g.w", "v_cls.w", "b3.w"}) {
    nn::Tensor& w = net.params().get(name);
    nn::Tape tape;
    nn::GraphParams P(tape, net.params(), true);
    nn::Val loss = build(tape, P);
    tape.backward(loss);
    const nn::Tensor grad = tape.grad(P(name));
    const int64_t i = pick.uniform_int(static_cast<int>(w.size()));
    const double fd = oracles::central_diff(loss_fn, &w[i], 1e-6);
    CHECK(oracles::rel_err(grad[i], fd) < 1e-4);
  }
}

TEST_CASE("train_step combines terms per the documented composition") {
  LscConfig cfg = small_config();
  mine::CodeDictionary dict;
  dict.len_max = cfg.c;
  const synth::WordPatch pos = synth::render_word_patch("hi", cfg.patch_w, cfg.patch_h);
  const synth::WordPatch neg = synth::render_word_patch("zz", cfg.patch_w, cfg.patch_h);
  const CharSequence pos_t = mine::encode_positive("hi", dict);
  const CharSequence neg_t = mine::encode_negative(dict);
  const nn::Tensor mask = kmeans_pseudolabel(pos.patch);

  // negative-only batch: the loss equals the recognition term alone
  LscNet a(cfg);
  LscNet b(cfg);
  LscNet::Batch neg_batch;
  neg_batch.patches = {&neg.patch};
  neg_batch.targets = {&neg_t};
  neg_batch.positive = {0};
  neg_batch.masks = {nullptr};
  const double neg_loss = a.train_step(neg_batch);

  LscConfig no_glyph = cfg;
  no_glyph.use_glyph = false;
  LscNet c(no_glyph);
  const double no_glyph_loss = c.train_step(neg_batch);
  CHECK(neg_loss == doctest::Approx(no_glyph_loss));

  // adding a positive sample brings in the segmentation term
  LscNet::Batch both;
  both.patches = {&pos.patch, &neg.patch};
  both.targets = {&pos_t, &neg_t};
  both.positive = {1, 0};
  both.masks = {&mask, nullptr};
  const double with_seg = b.train_step(both);
  CHECK(with_seg > 0.0);
}
