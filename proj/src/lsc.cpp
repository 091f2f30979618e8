#include "logo/lsc.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "logo/common.hpp"
#include "logo/rng.hpp"

using json = nlohmann::json;

namespace logo::lsc {

using mine::CharSequence;
using mine::CodeDictionary;

int language_score(const CharSequence& codes) {
  require(!codes.codes.empty(), "language_score: empty sequence");
  return codes.codes[0] != CodeDictionary::kEos ? 1 : 0;
}

std::vector<Detection> rescore(const std::vector<Detection>& dets,
                               const std::vector<int>& language_scores, double weight) {
  require(dets.size() == language_scores.size(), "rescore: length mismatch");
  std::vector<Detection> out = dets;
  for (size_t i = 0; i < out.size(); ++i) {
    const double lan = static_cast<double>(language_scores[i]);
    if (weight == 0.5)
      out[i].score = (out[i].score + lan) / 2.0;
    else
      out[i].score = weight * lan + (1.0 - weight) * out[i].score;
  }
  return out;
}

nn::Tensor kmeans_pseudolabel(const img::Image& patch) {
  require(patch.w > 0 && patch.h > 0, "kmeans_pseudolabel: empty patch");
  const int n = patch.w * patch.h;
  std::vector<double> gray(static_cast<size_t>(n));
  for (int y = 0; y < patch.h; ++y)
    for (int x = 0; x < patch.w; ++x) {
      double v = 0.0;
      for (int ch = 0; ch < patch.c; ++ch) v += patch.at(x, y, ch);
      gray[static_cast<size_t>(y) * patch.w + x] = v / patch.c;
    }

  nn::Tensor mask({patch.h, patch.w});
  double lo = gray[0], hi = gray[0];
  for (double v : gray) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-9) return mask;  // constant patch -> all background

  Rng rng(fnv1a(patch.px.data(), patch.px.size()));
  double c0 = gray[static_cast<size_t>(rng.uniform_int(n))];
  double c1 = c0;
  for (int tries = 0; tries < 64 && c1 == c0; ++tries)
    c1 = gray[static_cast<size_t>(rng.uniform_int(n))];
  if (c1 == c0) {
    c0 = lo;
    c1 = hi;
  }

  std::vector<char> label(static_cast<size_t>(n), 0);
  for (int it = 0; it < 50; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const char l = std::abs(gray[static_cast<size_t>(i)] - c0) <= std::abs(gray[static_cast<size_t>(i)] - c1) ? 0 : 1;
      if (l != label[static_cast<size_t>(i)]) {
        label[static_cast<size_t>(i)] = l;
        changed = true;
      }
    }
    double s0 = 0.0, s1 = 0.0;
    int n0 = 0, n1 = 0;
    for (int i = 0; i < n; ++i) {
      if (label[static_cast<size_t>(i)] == 0) {
        s0 += gray[static_cast<size_t>(i)];
        ++n0;
      } else {
        s1 += gray[static_cast<size_t>(i)];
        ++n1;
      }
    }
    if (n0 == 0 || n1 == 0) break;
    c0 = s0 / n0;
    c1 = s1 / n1;
    if (!changed) break;
  }

  // the cluster that rarely touches the border is the glyph foreground
  int border0 = 0, border1 = 0, total0 = 0, total1 = 0;
  for (int i = 0; i < n; ++i) (label[static_cast<size_t>(i)] ? total1 : total0)++;
  for (int x = 0; x < patch.w; ++x) {
    (label[static_cast<size_t>(x)] ? border1 : border0)++;
    (label[static_cast<size_t>((patch.h - 1) * patch.w + x)] ? border1 : border0)++;
  }
  for (int y = 0; y < patch.h; ++y) {
    (label[static_cast<size_t>(y * patch.w)] ? border1 : border0)++;
    (label[static_cast<size_t>(y * patch.w + patch.w - 1)] ? border1 : border0)++;
  }
  int fg;
  if (border0 != border1)
    fg = border0 < border1 ? 0 : 1;
  else if (total0 != total1)
    fg = total0 < total1 ? 0 : 1;
  else
    fg = c0 > c1 ? 0 : 1;
  if (total0 == 0 || total1 == 0) return mask;  // degenerate clustering
  for (int i = 0; i < n; ++i) mask[i] = label[static_cast<size_t>(i)] == fg ? 1.0 : 0.0;
  return mask;
}

double loss_seg(const nn::Tensor& sm, const nn::Tensor& spl) {
  require(sm.same_shape(spl), "loss_seg: shape mismatch");
  require(sm.size() > 0, "loss_seg: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < sm.size(); ++i) {
    const double d = sm[i] - spl[i];
    acc += d * d;
  }
  return acc / static_cast<double>(sm.size());
}

namespace {

double ce_mean(const nn::Tensor& logits, const CharSequence& target) {
  const int c = logits.dim(0), K = logits.dim(1);
  require(static_cast<int>(target.codes.size()) == c, "ce_mean: target length mismatch");
  double acc = 0.0;
  for (int i = 0; i < c; ++i) {
    const double* row = logits.data() + static_cast<int64_t>(i) * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    acc -= row[target.codes[static_cast<size_t>(i)]] - mx - std::log(z);
  }
  return acc / c;
}

}  // namespace

double loss_rec(const RecognitionOutput& out, const CharSequence& target, double lambda_v,
                double lambda_l) {
  const int M = static_cast<int>(out.logits_f.size());
  require(M > 0 && out.logits_l.size() == out.logits_f.size(), "loss_rec: missing iterations");
  double loss = lambda_v * ce_mean(out.logits_v, target);
  double sum_l = 0.0, sum_f = 0.0;
  for (int i = 0; i < M; ++i) {
    sum_l += ce_mean(out.logits_l[static_cast<size_t>(i)], target);
    sum_f += ce_mean(out.logits_f[static_cast<size_t>(i)], target);
  }
  return loss + lambda_l / M * sum_l + sum_f / M;
}

// ---------------- network ----------------

LscNet::LscNet(const LscConfig& cfg) : cfg_(cfg) {
  require(cfg_.patch_w % 8 == 0 && cfg_.patch_h % 8 == 0, "LscNet: patch size must divide by 8");
  init_params();
}

void LscNet::init_params() {
  Rng rng(cfg_.seed);
  const int K = cfg_.n_classes();
  const int w3 = cfg_.patch_w / 8;
  auto conv = [&](const std::string& name, int out_ch, int in_ch, int k) {
    params_.declare(name + ".w", nn::he_normal(rng, {out_ch, in_ch, k, k}, in_ch * k * k));
    params_.declare(name + ".b", nn::Tensor({out_ch}));
  };
  auto bn = [&](const std::string& name, int ch) {
    params_.declare(name + ".g", nn::Tensor::full({ch}, 1.0));
    params_.declare(name + ".beta", nn::Tensor({ch}));
    params_.buffer(name + ".mean", nn::Tensor({ch}));
    params_.buffer(name + ".var", nn::Tensor::full({ch}, 1.0));
  };
  auto lin = [&](const std::string& name, int in_f, int out_f) {
    params_.declare(name + ".w", nn::he_normal(rng, {in_f, out_f}, in_f));
    params_.declare(name + ".b", nn::Tensor({out_f}));
  };
  conv("b0", cfg_.e0, 1, 3);
  bn("bn0", cfg_.e0);
  conv("b1", cfg_.e1, cfg_.e0, 3);
  bn("bn1", cfg_.e1);
  conv("b2", cfg_.e2, cfg_.e1, 3);
  bn("bn2", cfg_.e2);
  conv("b3", cfg_.e3, cfg_.e2, 3);
  bn("bn3", cfg_.e3);

  const int h3 = cfg_.patch_h / 8;
  lin("attn.v0", cfg_.e3 * h3, 2 * cfg_.d);
  lin("attn.v", 2 * cfg_.d, cfg_.d);
  lin("len", w3 * cfg_.e3 * h3, cfg_.c - 1);  // word-length head feeding the bands
  params_.declare("attn.eos", nn::normal_init(rng, {1, cfg_.d}, 0.5));
  params_.declare("attn.pad", nn::normal_init(rng, {1, cfg_.d}, 0.5));
  lin("v_cls", cfg_.d, K);

  params_.declare("lang.embed", nn::normal_init(rng, {K, cfg_.d}, 0.1));
  params_.declare("lang.pos", nn::normal_init(rng, {cfg_.c, cfg_.d}, 0.1));
  for (int l = 0; l < 2; ++l) {
    const std::string p = "lang.l" + std::to_string(l);
    lin(p + ".f", cfg_.d, cfg_.d);
    lin(p + ".bwd", cfg_.d, cfg_.d);
    lin(p + ".s", cfg_.d, cfg_.d);
  }
  lin("l_cls", cfg_.d, K);
  lin("fuse.g", 2 * cfg_.d, cfg_.d);
  lin("f_cls", cfg_.d, K);

  conv("phi2", cfg_.e1, cfg_.e2, 3);
  bn("gbn2", cfg_.e1);
  conv("phi1", cfg_.e0, cfg_.e1, 3);
  bn("gbn1", cfg_.e0);
  conv("tau1", cfg_.e0, cfg_.e0, 3);
  conv("tau2", cfg_.e0, cfg_.e0, 3);
  conv("tau3", 1, cfg_.e0, 3);
}

nn::Tensor patch_to_tensor(const img::Image& patch) {
  nn::Tensor x({1, 1, patch.h, patch.w});
  for (int y = 0; y < patch.h; ++y)
    for (int xx = 0; xx < patch.w; ++xx) {
      double v = 0.0;
      for (int ch = 0; ch < patch.c; ++ch) v += patch.at(xx, y, ch);
      x[static_cast<int64_t>(y) * patch.w + xx] = v / patch.c / 255.0 - 0.5;
    }
  return x;
}

nn::Tensor LscNet::band_matrix(int n_len, int w_cols, int sub, int n_sub) const {
  nn::Tensor stack({n_len, cfg_.c * w_cols});
  for (int L = 1; L <= n_len; ++L) {
    const double base_w = 6.0 * L + 1.0;  // rendered word cells incl. margins
    for (int i = 0; i < std::min(L, cfg_.c); ++i) {
      const double cell_a = (1.0 + 6.0 * i) / base_w;
      const double cell_b = (6.0 + 6.0 * i) / base_w;
      const double a = cell_a + (cell_b - cell_a) * sub / n_sub;
      const double b = cell_a + (cell_b - cell_a) * (sub + 1) / n_sub;
      // strided feature columns center on pixel (stride*p), i.e. u = p/w_cols
      for (int p = 0; p < w_cols; ++p) {
        const double lo = (p - 0.5) / w_cols;
        const double hi = (p + 0.5) / w_cols;
        const double overlap = std::max(0.0, std::min(b, hi) - std::max(a, lo));
        if (overlap > 0.0)
          stack[(static_cast<int64_t>(L - 1) * cfg_.c + i) * w_cols + p] = overlap / (b - a);
      }
    }
  }
  return stack;
}

LscNet::GraphOut LscNet::forward(nn::Tape& tape, nn::GraphParams& P, nn::Val x,
                                 bool training) const {
  auto& self = const_cast<LscNet&>(*this);
  auto block = [&](nn::Val in, const std::string& conv, const std::string& bn, int stride) {
    nn::Val y = tape.conv2d(in, P(conv + ".w"), P(conv + ".b"), stride, 1);
    if (training) {
      nn::Tensor mean, var;
      y = tape.batchnorm(y, P(bn + ".g"), P(bn + ".beta"), 1e-5, &mean, &var);
      nn::Tensor& rm = self.params_.buffer(bn + ".mean");
      nn::Tensor& rv = self.params_.buffer(bn + ".var");
      for (int64_t i = 0; i < rm.size(); ++i) {
        rm[i] = 0.9 * rm[i] + 0.1 * mean[i];
        rv[i] = 0.9 * rv[i] + 0.1 * var[i];
      }
    } else {
      y = tape.bn_inference(y, P(bn + ".g"), P(bn + ".beta"), self.params_.buffer(bn + ".mean"),
                            self.params_.buffer(bn + ".var"), 1e-5);
    }
    return tape.relu(y);
  };

  const int N = tape.val(x).dim(0);
  const int K = cfg_.n_classes();
  const int w3 = cfg_.patch_w / 8;

  GraphOut out;
  out.f0 = block(x, "b0", "bn0", 1);
  out.f1 = block(out.f0, "b1", "bn1", 2);
  out.f2 = block(out.f1, "b2", "bn2", 2);
  nn::Val f3 = block(out.f2, "b3", "bn3", 2);

  // sequence features: stack the remaining rows so vertical glyph structure
  // survives into the per-column descriptor
  const int h3 = cfg_.patch_h / 8;
  const int col_f = cfg_.e3 * h3;
  nn::Val seq = tape.stack_h_to_seq(f3);  // [N, w3, e3*h3]
  nn::Val seq_flat = tape.reshape(seq, {N * w3, col_f});
  nn::Val v_hidden = tape.relu(tape.linear(seq_flat, P("attn.v0.w"), P("attn.v0.b")));
  nn::Val v_flat = tape.linear(v_hidden, P("attn.v.w"), P("attn.v.b"));
  nn::Val v3 = tape.reshape(v_flat, {N, w3, cfg_.d});

  // Length-conditioned band attention. Patches are width-normalized crops of
  // whole words, so under a length hypothesis L the i-th character occupies
  // a fixed horizontal band; a small length head supplies the mixture.
  const int n_len = cfg_.c - 1;
  const nn::Tensor band_stack = band_matrix(n_len);        // [n_len, c*w3]
  nn::Tensor eos_sel({n_len, cfg_.c}), pad_sel({n_len, cfg_.c});
  for (int L = 1; L <= n_len; ++L)
    for (int i = 0; i < cfg_.c; ++i) {
      if (i == L) eos_sel[static_cast<int64_t>(L - 1) * cfg_.c + i] = 1.0;
      if (i > L) pad_sel[static_cast<int64_t>(L - 1) * cfg_.c + i] = 1.0;
    }
  nn::Val bands = tape.constant(band_stack);
  nn::Val eos_c = tape.constant(std::move(eos_sel));
  nn::Val pad_c = tape.constant(std::move(pad_sel));

  nn::Val len_in = tape.reshape(seq_flat, {N, w3 * col_f});
  out.len_logits = tape.linear(len_in, P("len.w"), P("len.b"));  // [N, n_len]
  nn::Val len_p = tape.row_softmax(out.len_logits);

  std::vector<nn::Val> vis_parts;
  vis_parts.reserve(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    nn::Val pn = tape.reshape(tape.slice_batch(len_p, n), {1, n_len});
    nn::Val att = tape.reshape(tape.matmul(pn, bands), {cfg_.c, w3});
    nn::Val chars = tape.matmul(att, tape.slice_batch(v3, n));  // [c, d]
    nn::Val w_eos = tape.reshape(tape.matmul(pn, eos_c), {cfg_.c, 1});
    nn::Val w_pad = tape.reshape(tape.matmul(pn, pad_c), {cfg_.c, 1});
    chars = tape.add(chars, tape.matmul(w_eos, P("attn.eos")));
    chars = tape.add(chars, tape.matmul(w_pad, P("attn.pad")));
    vis_parts.push_back(chars);
  }
  out.f_vis_rows = tape.concat_rows(vis_parts);  // [N*c, d]
  out.logits_v = tape.linear(out.f_vis_rows, P("v_cls.w"), P("v_cls.b"));

  std::vector<nn::Val> lang_pos_reps(static_cast<size_t>(N), P("lang.pos"));
  nn::Val lang_pos = tape.concat_rows(lang_pos_reps);  // [N*c, d]

  nn::Val prev = out.logits_v;
  for (int it = 0; it < cfg_.M; ++it) {
    nn::Val probs = tape.row_softmax(prev);
    nn::Val h = tape.add(tape.matmul(probs, P("lang.embed")), lang_pos);
    for (int l = 0; l < 2; ++l) {
      const std::string p = "lang.l" + std::to_string(l);
      nn::Val fwd = tape.matmul(tape.shift_rows(h, 1, cfg_.c), P(p + ".f.w"));
      nn::Val bwd = tape.matmul(tape.shift_rows(h, -1, cfg_.c), P(p + ".bwd.w"));
      nn::Val slf = tape.matmul(h, P(p + ".s.w"));
      h = tape.relu(tape.add_rowvec(tape.add(tape.add(fwd, bwd), slf), P(p + ".s.b")));
    }
    out.logits_l.push_back(tape.linear(h, P("l_cls.w"), P("l_cls.b")));
    nn::Val gate = tape.sigmoid(
        tape.linear(tape.concat_cols(out.f_vis_rows, h), P("fuse.g.w"), P("fuse.g.b")));
    nn::Val inv_gate = tape.add_const(tape.scale(gate, -1.0), 1.0);
    nn::Val fused = tape.add(tape.mul(gate, out.f_vis_rows), tape.mul(inv_gate, h));
    out.logits_f.push_back(tape.linear(fused, P("f_cls.w"), P("f_cls.b")));
    prev = out.logits_f.back();
  }
  require(static_cast<int>(out.logits_f.size()) == cfg_.M, "forward: missing iterations");
  (void)K;
  return out;
}

nn::Val LscNet::glyph_graph(nn::Tape& tape, nn::GraphParams& P, nn::Val f0, nn::Val f1, nn::Val f2,
                            bool training) const {
  auto& self = const_cast<LscNet&>(*this);
  auto bn_apply = [&](nn::Val y, const std::string& bn) {
    if (training) {
      nn::Tensor mean, var;
      nn::Val out = tape.batchnorm(y, P(bn + ".g"), P(bn + ".beta"), 1e-5, &mean, &var);
      nn::Tensor& rm = self.params_.buffer(bn + ".mean");
      nn::Tensor& rv = self.params_.buffer(bn + ".var");
      for (int64_t i = 0; i < rm.size(); ++i) {
        rm[i] = 0.9 * rm[i] + 0.1 * mean[i];
        rv[i] = 0.9 * rv[i] + 0.1 * var[i];
      }
      return out;
    }
    return tape.bn_inference(y, P(bn + ".g"), P(bn + ".beta"), self.params_.buffer(bn + ".mean"),
                             self.params_.buffer(bn + ".var"), 1e-5);
  };
  nn::Val g2 = tape.relu(bn_apply(tape.conv2d(f2, P("phi2.w"), P("phi2.b"), 1, 1), "gbn2"));
  nn::Val g1 = tape.relu(bn_apply(
      tape.conv2d(tape.add(tape.upsample2x(g2), f1), P("phi1.w"), P("phi1.b"), 1, 1), "gbn1"));
  nn::Val t = tape.add(tape.upsample2x(g1), f0);
  t = tape.relu(tape.conv2d(t, P("tau1.w"), P("tau1.b"), 1, 1));
  t = tape.relu(tape.conv2d(t, P("tau2.w"), P("tau2.b"), 1, 1));
  return tape.sigmoid(tape.conv2d(t, P("tau3.w"), P("tau3.b"), 1, 1));
}

RecognitionOutput LscNet::recognize(const img::Image& patch, GlyphFeatures* glyph) const {
  require(patch.w == cfg_.patch_w && patch.h == cfg_.patch_h,
          "recognize: patch size does not match config");
  nn::Tape tape;
  auto& self = const_cast<LscNet&>(*this);
  nn::GraphParams P(tape, self.params_, false);
  nn::Val x = tape.constant(patch_to_tensor(patch));
  GraphOut g = forward(tape, P, x, false);

  RecognitionOutput out;
  const int K = cfg_.n_classes();
  out.logits_v = nn::Tensor({cfg_.c, K}, tape.val(g.logits_v).vec());
  for (int i = 0; i < cfg_.M; ++i) {
    out.logits_l.emplace_back(std::vector<int>{cfg_.c, K}, tape.val(g.logits_l[static_cast<size_t>(i)]).vec());
    out.logits_f.emplace_back(std::vector<int>{cfg_.c, K}, tape.val(g.logits_f[static_cast<size_t>(i)]).vec());
  }
  out.f_vis = nn::Tensor({cfg_.c, cfg_.d}, tape.val(g.f_vis_rows).vec());

  std::vector<int> raw(static_cast<size_t>(cfg_.c));
  const nn::Tensor& fin = out.logits_f.back();
  for (int i = 0; i < cfg_.c; ++i) {
    const double* row = fin.data() + static_cast<int64_t>(i) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    raw[static_cast<size_t>(i)] = best;
  }
  out.decoded = mine::canonicalize_codes(raw, cfg_.c);

  if (glyph) {
    glyph->f0 = tape.val(g.f0);
    glyph->f1 = tape.val(g.f1);
    glyph->f2 = tape.val(g.f2);
  }
  return out;
}

nn::Tensor LscNet::glyph_forward(const GlyphFeatures& feats) const {
  nn::Tape tape;
  auto& self = const_cast<LscNet&>(*this);
  nn::GraphParams P(tape, self.params_, false);
  require(feats.f0.ndim() == 4 && feats.f1.ndim() == 4 && feats.f2.ndim() == 4,
          "glyph_forward: features must be 4-d");
  require(feats.f1.dim(2) * 2 == feats.f0.dim(2) && feats.f2.dim(2) * 2 == feats.f1.dim(2),
          "glyph_forward: feature strides must halve");
  nn::Val f0 = tape.constant(feats.f0);
  nn::Val f1 = tape.constant(feats.f1);
  nn::Val f2 = tape.constant(feats.f2);
  nn::Val sm = glyph_graph(tape, P, f0, f1, f2, false);
  const nn::Tensor& v = tape.val(sm);
  return nn::Tensor({v.dim(2), v.dim(3)}, v.vec());
}

double LscNet::train_step(const Batch& batch, double lr) {
  const int N = static_cast<int>(batch.patches.size());
  require(N > 0, "train_step: empty batch");
  require(batch.targets.size() == batch.patches.size() && batch.positive.size() == batch.patches.size(),
          "train_step: ragged batch");

  nn::Tensor x({N, 1, cfg_.patch_h, cfg_.patch_w});
  const int64_t plane = static_cast<int64_t>(cfg_.patch_h) * cfg_.patch_w;
  for (int b = 0; b < N; ++b) {
    nn::Tensor p = patch_to_tensor(*batch.patches[static_cast<size_t>(b)]);
    std::copy(p.vec().begin(), p.vec().end(), x.vec().begin() + b * plane);
  }

  nn::Tape tape;
  nn::GraphParams P(tape, params_, true);
  nn::Val xin = tape.constant(std::move(x));
  GraphOut g = forward(tape, P, xin, true);

  std::vector<int> targets;
  targets.reserve(static_cast<size_t>(N) * cfg_.c);
  for (int b = 0; b < N; ++b) {
    const CharSequence& t = *batch.targets[static_cast<size_t>(b)];
    require(static_cast<int>(t.codes.size()) == cfg_.c, "train_step: target length mismatch");
    targets.insert(targets.end(), t.codes.begin(), t.codes.end());
  }
  const std::vector<double> ones(targets.size(), 1.0);

  nn::Val rec = tape.scale(tape.ce_rows(g.logits_v, targets, ones), cfg_.lambda_v);
  for (int i = 0; i < cfg_.M; ++i) {
    rec = tape.add(rec, tape.scale(tape.ce_rows(g.logits_l[static_cast<size_t>(i)], targets, ones),
                                   cfg_.lambda_l / cfg_.M));
    rec = tape.add(rec, tape.scale(tape.ce_rows(g.logits_f[static_cast<size_t>(i)], targets, ones),
                                   1.0 / cfg_.M));
  }

  nn::Val total = rec;
  std::vector<int> pos_idx;
  for (int b = 0; b < N; ++b)
    if (batch.positive[static_cast<size_t>(b)]) pos_idx.push_back(b);

  if (cfg_.use_glyph && !pos_idx.empty()) {
    const int M = static_cast<int>(pos_idx.size());
    nn::Val f0p = tape.gather_batch(g.f0, pos_idx);
    nn::Val f1p = tape.gather_batch(g.f1, pos_idx);
    nn::Val f2p = tape.gather_batch(g.f2, pos_idx);
    nn::Val sm = glyph_graph(tape, P, f0p, f1p, f2p, true);

    nn::Tensor labels({M, 1, cfg_.patch_h, cfg_.patch_w});
    for (int m = 0; m < M; ++m) {
      const nn::Tensor* mask = batch.masks[static_cast<size_t>(pos_idx[static_cast<size_t>(m)])];
      require(mask != nullptr, "train_step: positive sample missing pseudo-label");
      require(mask->size() == plane, "train_step: pseudo-label size mismatch");
      std::copy(mask->vec().begin(), mask->vec().end(), labels.vec().begin() + m * plane);
    }

    nn::Val seg;
    if (cfg_.seg_loss == SegLossKind::kMse) {
      seg = tape.mse(sm, tape.constant(std::move(labels)));
    } else {
      // clamped binary cross entropy on probabilities
      const nn::Tensor& smv = tape.val(sm);
      nn::Tensor out = nn::Tensor::scalar(0.0);
      double acc = 0.0;
      for (int64_t i = 0; i < smv.size(); ++i) {
        const double s = std::min(1.0 - 1e-7, std::max(1e-7, smv[i]));
        acc -= labels[i] * std::log(s) + (1.0 - labels[i]) * std::log(1.0 - s);
      }
      out[0] = acc / static_cast<double>(smv.size());
      nn::Tensor labels_c = labels;
      seg = tape.custom({sm}, std::move(out), [labels_c](const nn::CustomCtx& ctx) {
        nn::Tensor* gr = ctx.in_grad(0);
        if (!gr) return;
        const nn::Tensor& s = ctx.in_val(0);
        const double go = ctx.out_grad()[0] / static_cast<double>(s.size());
        for (int64_t i = 0; i < s.size(); ++i) {
          const double sv = std::min(1.0 - 1e-7, std::max(1e-7, s[i]));
          (*gr)[i] += go * (-labels_c[i] / sv + (1.0 - labels_c[i]) / (1.0 - sv));
        }
      });
    }
    total = tape.add(total, seg);
  }

  const double loss = tape.val(total).item();
  tape.backward(total);
  P.apply_adam(lr > 0.0 ? lr : cfg_.lr);
  return loss;
}

// ---------------- persistence ----------------

namespace {

json config_to_json(const LscConfig& c) {
  json j;
  j["patch_w"] = c.patch_w;
  j["patch_h"] = c.patch_h;
  j["c"] = c.c;
  j["d"] = c.d;
  j["e0"] = c.e0;
  j["e1"] = c.e1;
  j["e2"] = c.e2;
  j["e3"] = c.e3;
  j["M"] = c.M;
  j["lambda_v"] = c.lambda_v;
  j["lambda_l"] = c.lambda_l;
  j["seg_loss"] = c.seg_loss == SegLossKind::kMse ? "mse" : "bce";
  j["use_glyph"] = c.use_glyph;
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  return j;
}

LscConfig config_from_json(const json& j) {
  LscConfig c;
  c.patch_w = j.value("patch_w", c.patch_w);
  c.patch_h = j.value("patch_h", c.patch_h);
  c.c = j.value("c", c.c);
  c.d = j.value("d", c.d);
  c.e0 = j.value("e0", c.e0);
  c.e1 = j.value("e1", c.e1);
  c.e2 = j.value("e2", c.e2);
  c.e3 = j.value("e3", c.e3);
  c.M = j.value("M", c.M);
  c.lambda_v = j.value("lambda_v", c.lambda_v);
  c.lambda_l = j.value("lambda_l", c.lambda_l);
  c.seg_loss = j.value("seg_loss", "mse") == std::string("bce") ? SegLossKind::kBce : SegLossKind::kMse;
  c.use_glyph = j.value("use_glyph", c.use_glyph);
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

void LscNet::save(const std::string& path, const std::string& config_hash) const {
  nn::CheckpointHeader h;
  h.module = "lsc";
  h.config_hash = config_hash;
  h.step = params_.step();
  h.extra_json = config_to_json(cfg_).dump();
  nn::save_checkpoint(path, params_, h);
}

LscNet LscNet::load(const std::string& path) {
  nn::ParamStore store;
  nn::CheckpointHeader h = nn::load_checkpoint(path, store);
  require(h.module == "lsc", "load: checkpoint is not an lsc (module=" + h.module + ")");
  LscNet net(config_from_json(json::parse(h.extra_json)));
  nn::load_checkpoint(path, net.params_);
  net.params_.set_step(h.step);
  return net;
}

// ---------------- training drivers ----------------

LscNet train_lsc(const LscConfig& cfg, const std::string& archive_dir,
                 std::vector<double>* loss_curve) {
  mine::CodeDictionary dict;
  dict.len_max = cfg.c;
  std::vector<mine::ArchiveSample> samples = mine::read_archive(archive_dir, dict);
  require(!samples.empty(), "train_lsc: empty archive " + archive_dir);

  std::vector<img::Image> patches;
  std::vector<nn::Tensor> masks;
  patches.reserve(samples.size());
  masks.resize(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    patches.push_back(mine::load_patch(archive_dir, samples[i]));
    if (samples[i].positive) masks[i] = kmeans_pseudolabel(patches.back());
  }

  LscNet net(cfg);
  Rng rng(cfg.seed ^ 0xa11ceULL);
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    LscNet::Batch batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const size_t i = order[cursor++];
      batch.patches.push_back(&patches[i]);
      batch.targets.push_back(&samples[i].target);
      batch.positive.push_back(samples[i].positive ? 1 : 0);
      batch.masks.push_back(samples[i].positive ? &masks[i] : nullptr);
    }
    const double loss = net.train_step(batch, nn::cosine_lr(cfg.lr, step, cfg.steps));
    if (loss_curve) loss_curve->push_back(loss);
  }
  return net;
}

double sequence_accuracy(const LscNet& net, const std::string& archive_dir,
                         const std::vector<mine::ArchiveSample>& samples) {
  int total = 0, correct = 0;
  for (const auto& s : samples) {
    if (!s.positive) continue;
    const img::Image patch = mine::load_patch(archive_dir, s);
    const RecognitionOutput out = net.recognize(patch);
    ++total;
    if (mine::decode_word(out.decoded) == mine::decode_word(s.target)) ++correct;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

LscNet train_glyph_variant(const LscConfig& base, const std::vector<GlyphSample>& train,
                           SegLossKind kind, int steps, double lr, uint64_t seed) {
  require(!train.empty(), "train_glyph_variant: no samples");
  LscConfig cfg = base;
  cfg.seg_loss = kind;
  cfg.use_glyph = true;
  cfg.lr = lr;
  cfg.seed = seed;
  LscNet net(cfg);

  Rng rng(seed ^ 0x91f5ULL);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t cursor = 0;
  const int batch_size = 4;
  const int64_t plane = static_cast<int64_t>(cfg.patch_h) * cfg.patch_w;
  for (int step = 0; step < steps; ++step) {
    std::vector<size_t> idx;
    for (int b = 0; b < batch_size; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const int N = static_cast<int>(idx.size());
    nn::Tensor x({N, 1, cfg.patch_h, cfg.patch_w});
    nn::Tensor labels({N, 1, cfg.patch_h, cfg.patch_w});
    for (int b = 0; b < N; ++b) {
      nn::Tensor p = patch_to_tensor(train[idx[static_cast<size_t>(b)]].patch);
      std::copy(p.vec().begin(), p.vec().end(), x.vec().begin() + b * plane);
      const nn::Tensor& m = train[idx[static_cast<size_t>(b)]].mask;
      std::copy(m.vec().begin(), m.vec().end(), labels.vec().begin() + b * plane);
    }
    nn::Tape tape;
    nn::GraphParams P(tape, net.params(), true);
    nn::Val xin = tape.constant(std::move(x));
    // encoder blocks (training BN) then the glyph decoder
    LscNet::GraphOut g = net.forward(tape, P, xin, true);
    nn::Val sm = net.glyph_graph(tape, P, g.f0, g.f1, g.f2, true);
    nn::Val seg;
    if (kind == SegLossKind::kMse) {
      seg = tape.mse(sm, tape.constant(labels));
    } else {
      const nn::Tensor& smv = tape.val(sm);
      nn::Tensor out = nn::Tensor::scalar(0.0);
      double acc = 0.0;
      for (int64_t i = 0; i < smv.size(); ++i) {
        const double s = std::min(1.0 - 1e-7, std::max(1e-7, smv[i]));
        acc -= labels[i] * std::log(s) + (1.0 - labels[i]) * std::log(1.0 - s);
      }
      out[0] = acc / static_cast<double>(smv.size());
      nn::Tensor labels_c = labels;
      seg = tape.custom({sm}, std::move(out), [labels_c](const nn::CustomCtx& ctx) {
        nn::Tensor* gr = ctx.in_grad(0);
        if (!gr) return;
        const nn::Tensor& s = ctx.in_val(0);
        const double go = ctx.out_grad()[0] / static_cast<double>(s.size());
        for (int64_t i = 0; i < s.size(); ++i) {
          const double sv = std::min(1.0 - 1e-7, std::max(1e-7, s[i]));
          (*gr)[i] += go * (-labels_c[i] / sv + (1.0 - labels_c[i]) / (1.0 - sv));
        }
      });
    }
    tape.backward(seg);
    P.apply_adam(lr);
  }
  return net;
}

double mask_accuracy(const LscNet& net, const std::vector<GlyphSample>& held_out) {
  require(!held_out.empty(), "mask_accuracy: no samples");
  double acc = 0.0;
  for (const auto& s : held_out) {
    GlyphFeatures feats;
    net.recognize(s.patch, &feats);
    const nn::Tensor sm = net.glyph_forward(feats);
    int64_t agree = 0;
    for (int64_t i = 0; i < sm.size(); ++i)
      if ((sm[i] > 0.5) == (s.mask[i] > 0.5)) ++agree;
    acc += static_cast<double>(agree) / static_cast<double>(sm.size());
  }
  return acc / static_cast<double>(held_out.size());
}

}  // namespace logo::lsc
