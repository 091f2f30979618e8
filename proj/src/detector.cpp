#include "logo/detector.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "logo/common.hpp"
#include "logo/synthdata.hpp"

using json = nlohmann::json;

namespace logo::det {

namespace {
constexpr double kPi = 3.14159265358979323846;

double clamp_prob(double p) { return std::min(1.0 - kLogEps, std::max(kLogEps, p)); }
}  // namespace

double loss_vfl(double p, double q, double alpha_f, double gamma_f) {
  p = clamp_prob(p);
  if (q > 0.0) return -q * (q * std::log(p) + (1.0 - q) * std::log(1.0 - p));
  return -alpha_f * std::pow(p, gamma_f) * std::log(1.0 - p);
}

double loss_vfl_grad_p(double p, double q, double alpha_f, double gamma_f) {
  p = clamp_prob(p);
  if (q > 0.0) return -q * (q / p - (1.0 - q) / (1.0 - p));
  return -alpha_f * (gamma_f * std::pow(p, gamma_f - 1.0) * std::log(1.0 - p) -
                     std::pow(p, gamma_f) / (1.0 - p));
}

double angle_bin_center(int i, int n_bins) {
  const double width = kPi / n_bins;
  return -kPi / 2.0 + (i + 0.5) * width;
}

AngleTarget dfl_target(double y, int n_bins) {
  y = geom::wrap_angle(y);
  const double width = kPi / n_bins;
  AngleTarget t;
  const double first = angle_bin_center(0, n_bins);
  const double last = angle_bin_center(n_bins - 1, n_bins);
  if (y <= first) {
    t.left = 0;
    t.wl = 1.0;
    t.wr = 0.0;
    return t;
  }
  if (y >= last) {
    t.left = n_bins - 2;
    t.wl = 0.0;
    t.wr = 1.0;
    return t;
  }
  t.left = static_cast<int>(std::floor((y - first) / width));
  t.left = std::min(t.left, n_bins - 2);
  const double yl = angle_bin_center(t.left, n_bins);
  t.wl = (yl + width - y) / width;
  t.wr = (y - yl) / width;
  return t;
}

double loss_dfl(const std::vector<double>& S, double y, int n_bins) {
  require(static_cast<int>(S.size()) == n_bins, "loss_dfl: distribution size mismatch");
  const AngleTarget t = dfl_target(y, n_bins);
  const double si = std::max(S[static_cast<size_t>(t.left)], kLogEps);
  const double sj = std::max(S[static_cast<size_t>(t.left + 1)], kLogEps);
  return -(t.wl * std::log(si) + t.wr * std::log(sj));
}

std::vector<double> loss_dfl_grad(const std::vector<double>& S, double y, int n_bins) {
  const AngleTarget t = dfl_target(y, n_bins);
  std::vector<double> g(S.size(), 0.0);
  g[static_cast<size_t>(t.left)] = -t.wl / std::max(S[static_cast<size_t>(t.left)], kLogEps);
  g[static_cast<size_t>(t.left + 1)] = -t.wr / std::max(S[static_cast<size_t>(t.left + 1)], kLogEps);
  return g;
}

// ---------------- encode / decode ----------------

geom::OrientedBox decode_cell(const DetectorOutput& out, const DetectorConfig& cfg, int i, int j) {
  const int hc = cfg.grid_h(), wc = cfg.grid_w();
  require(i >= 0 && i < hc && j >= 0 && j < wc, "decode_cell: out of range");
  const int64_t cell = static_cast<int64_t>(i) * wc + j;
  const int64_t plane = static_cast<int64_t>(hc) * wc;
  geom::OrientedBox b;
  b.cx = (j + 0.5 + out.box[cell]) * cfg.stride;
  b.cy = (i + 0.5 + out.box[plane + cell]) * cfg.stride;
  b.w = cfg.stride * std::exp(out.box[2 * plane + cell]);
  b.h = cfg.stride * std::exp(out.box[3 * plane + cell]);
  // expectation of the softmax distribution over bin centers
  double mx = out.ang[cell];
  for (int k = 1; k < cfg.n_bins; ++k) mx = std::max(mx, out.ang[k * plane + cell]);
  double z = 0.0, acc = 0.0;
  for (int k = 0; k < cfg.n_bins; ++k) {
    const double e = std::exp(out.ang[k * plane + cell] - mx);
    z += e;
    acc += e * angle_bin_center(k, cfg.n_bins);
  }
  b.theta = geom::wrap_angle(acc / z);
  return b;
}

std::vector<Detection> nms_rotated(std::vector<Detection> dets, double iou_thresh) {
  std::vector<Detection> kept;
  std::vector<char> removed(dets.size(), 0);
  for (size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (size_t j = i + 1; j < dets.size(); ++j) {
      if (removed[j]) continue;
      if (geom::iou_rotated(dets[i].quad, dets[j].quad) >= iou_thresh) removed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection> decode(const DetectorOutput& out, const DetectorConfig& cfg,
                              double score_thresh, double nms_iou) {
  const int hc = cfg.grid_h(), wc = cfg.grid_w();
  struct Scored {
    Detection det;
    int64_t cell;
  };
  std::vector<Scored> cand;
  for (int i = 0; i < hc; ++i)
    for (int j = 0; j < wc; ++j) {
      const int64_t cell = static_cast<int64_t>(i) * wc + j;
      const double p = out.p[cell];
      if (p < score_thresh) continue;
      cand.push_back({Detection{geom::quad_from_obox(decode_cell(out, cfg, i, j)), p}, cell});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const Scored& a, const Scored& b) {
    if (a.det.score != b.det.score) return a.det.score > b.det.score;
    return a.cell < b.cell;  // permutation-stable tie break
  });
  std::vector<Detection> dets;
  dets.reserve(cand.size());
  for (auto& c : cand) dets.push_back(std::move(c.det));
  return nms_rotated(std::move(dets), nms_iou);
}

namespace {

// cell -> index into ann.instances, or -1; smallest-area instance wins
std::vector<int> assign_cells(const FrameAnnotation& ann, const DetectorConfig& cfg) {
  const int hc = cfg.grid_h(), wc = cfg.grid_w();
  std::vector<int> assign(static_cast<size_t>(hc) * wc, -1);
  for (int i = 0; i < hc; ++i)
    for (int j = 0; j < wc; ++j) {
      const geom::Vec2 center{(j + 0.5) * cfg.stride, (i + 0.5) * cfg.stride};
      double best_area = 0.0;
      int best = -1;
      for (size_t k = 0; k < ann.instances.size(); ++k) {
        const auto& q = ann.instances[k].quad;
        if (!geom::point_in_quad(q, center)) continue;
        const double a = geom::area(q);
        if (best < 0 || a < best_area) {
          best = static_cast<int>(k);
          best_area = a;
        }
      }
      assign[static_cast<size_t>(i) * wc + j] = best;
    }
  return assign;
}

}  // namespace

DetectorOutput encode_targets(const FrameAnnotation& ann, const DetectorConfig& cfg) {
  const int hc = cfg.grid_h(), wc = cfg.grid_w();
  const int64_t plane = static_cast<int64_t>(hc) * wc;
  DetectorOutput out;
  out.p = nn::Tensor({1, hc, wc});
  out.box = nn::Tensor({4, hc, wc});
  out.ang = nn::Tensor::full({cfg.n_bins, hc, wc}, -20.0);
  const auto assign = assign_cells(ann, cfg);
  for (int i = 0; i < hc; ++i)
    for (int j = 0; j < wc; ++j) {
      const int64_t cell = static_cast<int64_t>(i) * wc + j;
      const int k = assign[static_cast<size_t>(cell)];
      if (k < 0) continue;
      const geom::OrientedBox gt = geom::obox_from_quad(ann.instances[static_cast<size_t>(k)].quad);
      out.p[cell] = 1.0;
      out.box[cell] = gt.cx / cfg.stride - j - 0.5;
      out.box[plane + cell] = gt.cy / cfg.stride - i - 0.5;
      out.box[2 * plane + cell] = std::log(std::max(1e-6, gt.w / cfg.stride));
      out.box[3 * plane + cell] = std::log(std::max(1e-6, gt.h / cfg.stride));
      const AngleTarget t = dfl_target(gt.theta, cfg.n_bins);
      out.ang[t.left * plane + cell] = std::log(std::max(t.wl, 1e-9));
      out.ang[(t.left + 1) * plane + cell] = std::log(std::max(t.wr, 1e-9));
    }
  return out;
}

double loss_det(const std::vector<const DetectorOutput*>& preds,
                const std::vector<const FrameAnnotation*>& anns, const DetectorConfig& cfg) {
  require(!preds.empty() && preds.size() == anns.size(), "loss_det: empty or mismatched batch");
  const int hc = cfg.grid_h(), wc = cfg.grid_w();
  const int64_t plane = static_cast<int64_t>(hc) * wc;
  double vfl_sum = 0.0, prob_sum = 0.0, dfl_sum = 0.0;
  int64_t cells = 0;
  int positives = 0;
  for (size_t b = 0; b < preds.size(); ++b) {
    const DetectorOutput& out = *preds[b];
    const auto assign = assign_cells(*anns[b], cfg);
    for (int64_t cell = 0; cell < plane; ++cell) {
      const int k = assign[static_cast<size_t>(cell)];
      const int i = static_cast<int>(cell / wc), j = static_cast<int>(cell % wc);
      double q = 0.0;
      if (k >= 0) {
        const geom::OrientedBox pb = decode_cell(out, cfg, i, j);
        q = geom::iou_rotated(geom::quad_from_obox(pb), anns[b]->instances[static_cast<size_t>(k)].quad);
        const geom::OrientedBox gt =
            geom::obox_from_quad(anns[b]->instances[static_cast<size_t>(k)].quad);
        prob_sum += geom::probiou_loss(pb, gt);
        std::vector<double> S(static_cast<size_t>(cfg.n_bins));
        double mx = out.ang[cell];
        for (int kk = 1; kk < cfg.n_bins; ++kk) mx = std::max(mx, out.ang[kk * plane + cell]);
        double z = 0.0;
        for (int kk = 0; kk < cfg.n_bins; ++kk) {
          S[static_cast<size_t>(kk)] = std::exp(out.ang[kk * plane + cell] - mx);
          z += S[static_cast<size_t>(kk)];
        }
        for (auto& s : S) s /= z;
        dfl_sum += loss_dfl(S, gt.theta, cfg.n_bins);
        ++positives;
      }
      vfl_sum += loss_vfl(out.p[cell], q, cfg.alpha_f, cfg.gamma_f);
      ++cells;
    }
  }
  double loss = cfg.alpha * vfl_sum / static_cast<double>(cells);
  if (positives > 0) {
    loss += cfg.beta * prob_sum / positives;
    loss += cfg.gamma * dfl_sum / positives;
  }
  return loss;
}

// ---------------- network ----------------

DetectorNet::DetectorNet(const DetectorConfig& cfg) : cfg_(cfg) { init_params(); }

void DetectorNet::init_params() {
  Rng rng(cfg_.seed);
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
  conv("c1", cfg_.ch1, 1, 3);
  bn("bn1", cfg_.ch1);
  conv("c2", cfg_.ch2, cfg_.ch1, 3);
  bn("bn2", cfg_.ch2);
  conv("c3", cfg_.ch3, cfg_.ch2, 3);
  bn("bn3", cfg_.ch3);
  conv("trunk", cfg_.trunk_ch, cfg_.ch3, 3);
  bn("bn4", cfg_.trunk_ch);
  conv("head_p", 1, cfg_.trunk_ch, 1);
  conv("head_box", 4, cfg_.trunk_ch, 1);
  conv("head_ang", cfg_.n_bins, cfg_.trunk_ch, 1);
  // bias the score head towards background at start
  params_.get("head_p.b")[0] = -2.0;
}

DetectorNet::Heads DetectorNet::forward(nn::Tape& tape, nn::GraphParams& P, nn::Val x,
                                        bool training) {
  auto block = [&](nn::Val in, const std::string& conv, const std::string& bn, int stride) {
    nn::Val y = tape.conv2d(in, P(conv + ".w"), P(conv + ".b"), stride, 1);
    if (training) {
      nn::Tensor mean, var;
      y = tape.batchnorm(y, P(bn + ".g"), P(bn + ".beta"), 1e-5, &mean, &var);
      nn::Tensor& rm = params_.buffer(bn + ".mean");
      nn::Tensor& rv = params_.buffer(bn + ".var");
      for (int64_t i = 0; i < rm.size(); ++i) {
        rm[i] = 0.9 * rm[i] + 0.1 * mean[i];
        rv[i] = 0.9 * rv[i] + 0.1 * var[i];
      }
    } else {
      y = tape.bn_inference(y, P(bn + ".g"), P(bn + ".beta"), params_.buffer(bn + ".mean"),
                            params_.buffer(bn + ".var"), 1e-5);
    }
    return tape.relu(y);
  };
  nn::Val t1 = block(x, "c1", "bn1", 2);
  nn::Val t2 = block(t1, "c2", "bn2", 2);
  nn::Val t3 = block(t2, "c3", "bn3", 2);
  nn::Val trunk = block(t3, "trunk", "bn4", 1);
  Heads h;
  h.p_logit = tape.conv2d(trunk, P("head_p.w"), P("head_p.b"), 1, 0);
  h.box = tape.conv2d(trunk, P("head_box.w"), P("head_box.b"), 1, 0);
  h.ang = tape.conv2d(trunk, P("head_ang.w"), P("head_ang.b"), 1, 0);
  h.hc = tape.val(h.p_logit).dim(2);
  h.wc = tape.val(h.p_logit).dim(3);
  return h;
}

nn::Tensor frame_to_tensor(const img::Image& frame) {
  nn::Tensor x({1, 1, frame.h, frame.w});
  for (int y = 0; y < frame.h; ++y)
    for (int xx = 0; xx < frame.w; ++xx)
      x[static_cast<int64_t>(y) * frame.w + xx] = frame.at(xx, y) / 255.0 - 0.5;
  return x;
}

namespace {

// decode box params for target q without touching the tape
geom::OrientedBox decode_raw(double dx, double dy, double tw, double th, double theta, int i,
                             int j, int stride) {
  geom::OrientedBox b;
  b.cx = (j + 0.5 + dx) * stride;
  b.cy = (i + 0.5 + dy) * stride;
  b.w = stride * std::exp(tw);
  b.h = stride * std::exp(th);
  b.theta = geom::wrap_angle(theta);
  return b;
}

}  // namespace

double DetectorNet::train_step(const std::vector<const img::Image*>& frames,
                               const std::vector<const FrameAnnotation*>& anns, double lr) {
  require(!frames.empty() && frames.size() == anns.size(), "train_step: empty batch");
  const int B = static_cast<int>(frames.size());
  const int hc = cfg_.grid_h(), wc = cfg_.grid_w();
  const int64_t plane = static_cast<int64_t>(hc) * wc;

  nn::Tensor x({B, 1, cfg_.in_h, cfg_.in_w});
  for (int b = 0; b < B; ++b) {
    require(frames[static_cast<size_t>(b)]->w == cfg_.in_w && frames[static_cast<size_t>(b)]->h == cfg_.in_h,
            "train_step: frame size does not match detector config");
    nn::Tensor f = frame_to_tensor(*frames[static_cast<size_t>(b)]);
    std::copy(f.vec().begin(), f.vec().end(),
              x.vec().begin() + static_cast<int64_t>(b) * cfg_.in_h * cfg_.in_w);
  }

  nn::Tape tape;
  nn::GraphParams P(tape, params_, true);
  nn::Val xin = tape.constant(std::move(x));
  Heads heads = forward(tape, P, xin, true);

  // positives: (batch, cell, gt obox, gt quad)
  struct Pos {
    int b, i, j;
    geom::OrientedBox gt;
    const geom::RotatedQuad* gt_quad;
  };
  std::vector<Pos> positives;
  std::vector<std::vector<int>> assign(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    assign[static_cast<size_t>(b)] = assign_cells(*anns[static_cast<size_t>(b)], cfg_);
    for (int64_t cell = 0; cell < plane; ++cell) {
      const int k = assign[static_cast<size_t>(b)][static_cast<size_t>(cell)];
      if (k < 0) continue;
      const auto& inst = anns[static_cast<size_t>(b)]->instances[static_cast<size_t>(k)];
      positives.push_back({b, static_cast<int>(cell / wc), static_cast<int>(cell % wc),
                           geom::obox_from_quad(inst.quad), &inst.quad});
    }
  }

  // IACS target: q = IoU(currently decoded box, assigned gt); constant per step
  const nn::Tensor& box_val = tape.val(heads.box);
  const nn::Tensor& ang_val = tape.val(heads.ang);
  nn::Tensor q({B, 1, hc, wc});
  const int64_t bplane = plane;
  for (const Pos& pos : positives) {
    const int64_t cell = static_cast<int64_t>(pos.i) * wc + pos.j;
    const int64_t boff = (static_cast<int64_t>(pos.b) * 4) * bplane + cell;
    double mx = ang_val[(static_cast<int64_t>(pos.b) * cfg_.n_bins) * bplane + cell];
    for (int k = 1; k < cfg_.n_bins; ++k)
      mx = std::max(mx, ang_val[(static_cast<int64_t>(pos.b) * cfg_.n_bins + k) * bplane + cell]);
    double z = 0.0, acc = 0.0;
    for (int k = 0; k < cfg_.n_bins; ++k) {
      const double e =
          std::exp(ang_val[(static_cast<int64_t>(pos.b) * cfg_.n_bins + k) * bplane + cell] - mx);
      z += e;
      acc += e * angle_bin_center(k, cfg_.n_bins);
    }
    const geom::OrientedBox pb =
        decode_raw(box_val[boff], box_val[bplane + boff], box_val[2 * bplane + boff],
                   box_val[3 * bplane + boff], acc / z, pos.i, pos.j, cfg_.stride);
    q[static_cast<int64_t>(pos.b) * bplane + cell] =
        geom::iou_rotated(geom::quad_from_obox(pb), *pos.gt_quad);
  }

  // VFL over every cell (fused node over the logit grid)
  const double alpha_f = cfg_.alpha_f, gamma_f = cfg_.gamma_f;
  const nn::Tensor& pl_val = tape.val(heads.p_logit);
  nn::Tensor vfl_out = nn::Tensor::scalar(0.0);
  {
    double acc = 0.0;
    for (int64_t i = 0; i < pl_val.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-pl_val[i]));
      acc += loss_vfl(p, q[i], alpha_f, gamma_f);
    }
    vfl_out[0] = acc / static_cast<double>(pl_val.size());
  }
  nn::Tensor q_copy = q;
  nn::Val vfl = tape.custom(
      {heads.p_logit}, std::move(vfl_out),
      [q_copy, alpha_f, gamma_f](const nn::CustomCtx& ctx) {
        nn::Tensor* g = ctx.in_grad(0);
        if (!g) return;
        const nn::Tensor& pl = ctx.in_val(0);
        const double go = ctx.out_grad()[0] / static_cast<double>(pl.size());
        for (int64_t i = 0; i < pl.size(); ++i) {
          const double p = clamp_prob(1.0 / (1.0 + std::exp(-pl[i])));
          const double qv = q_copy[i];
          double dz;
          if (qv > 0.0)
            dz = -qv * (qv - p);
          else
            dz = -alpha_f * (gamma_f * std::pow(p, gamma_f) * (1.0 - p) * std::log(1.0 - p) -
                             std::pow(p, gamma_f + 1.0));
          (*g)[i] += go * dz;
        }
      });

  nn::Val total = tape.scale(vfl, cfg_.alpha);

  if (!positives.empty()) {
    const int M = static_cast<int>(positives.size());
    // gather per-positive box rows [M,4] and angle rows [M,n_bins]
    std::vector<int64_t> box_src, ang_src;
    for (const Pos& pos : positives) {
      const int64_t cell = static_cast<int64_t>(pos.i) * wc + pos.j;
      box_src.push_back((static_cast<int64_t>(pos.b) * 4) * bplane + cell);
      ang_src.push_back((static_cast<int64_t>(pos.b) * cfg_.n_bins) * bplane + cell);
    }
    auto gather_rows = [&](nn::Val src, const std::vector<int64_t>& base, int ch) {
      nn::Tensor out({M, ch});
      const nn::Tensor& sv = tape.val(src);
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < ch; ++k)
          out[static_cast<int64_t>(m) * ch + k] = sv[base[static_cast<size_t>(m)] + k * bplane];
      std::vector<int64_t> base_c = base;
      return tape.custom({src}, std::move(out), [base_c, ch, bplane, M](const nn::CustomCtx& ctx) {
        nn::Tensor* g = ctx.in_grad(0);
        if (!g) return;
        const nn::Tensor& go = ctx.out_grad();
        for (int m = 0; m < M; ++m)
          for (int k = 0; k < ch; ++k)
            (*g)[base_c[static_cast<size_t>(m)] + k * bplane] += go[static_cast<int64_t>(m) * ch + k];
      });
    };
    nn::Val box_rows = gather_rows(heads.box, box_src, 4);
    nn::Val ang_rows = gather_rows(heads.ang, ang_src, cfg_.n_bins);

    // decoded angle = expectation of softmax over bin centers, [M,1]
    const int nb = cfg_.n_bins;
    std::vector<double> centers(static_cast<size_t>(nb));
    for (int k = 0; k < nb; ++k) centers[static_cast<size_t>(k)] = angle_bin_center(k, nb);
    {
      const nn::Tensor& ar = tape.val(ang_rows);
      nn::Tensor theta({M, 1});
      for (int m = 0; m < M; ++m) {
        const double* row = ar.data() + static_cast<int64_t>(m) * nb;
        double mx = row[0];
        for (int k = 1; k < nb; ++k) mx = std::max(mx, row[k]);
        double z = 0.0, acc = 0.0;
        for (int k = 0; k < nb; ++k) {
          const double e = std::exp(row[k] - mx);
          z += e;
          acc += e * centers[static_cast<size_t>(k)];
        }
        theta[m] = acc / z;
      }
      nn::Val theta_rows = tape.custom(
          {ang_rows}, std::move(theta), [centers, nb, M](const nn::CustomCtx& ctx) {
            nn::Tensor* g = ctx.in_grad(0);
            if (!g) return;
            const nn::Tensor& ar2 = ctx.in_val(0);
            const nn::Tensor& go = ctx.out_grad();
            for (int m = 0; m < M; ++m) {
              const double* row = ar2.data() + static_cast<int64_t>(m) * nb;
              double mx = row[0];
              for (int k = 1; k < nb; ++k) mx = std::max(mx, row[k]);
              double z = 0.0, acc = 0.0;
              std::vector<double> e(static_cast<size_t>(nb));
              for (int k = 0; k < nb; ++k) {
                e[static_cast<size_t>(k)] = std::exp(row[k] - mx);
                z += e[static_cast<size_t>(k)];
                acc += e[static_cast<size_t>(k)] * centers[static_cast<size_t>(k)];
              }
              const double expv = acc / z;
              const double gm = go[m];
              double* grow = g->data() + static_cast<int64_t>(m) * nb;
              for (int k = 0; k < nb; ++k)
                grow[k] += gm * (e[static_cast<size_t>(k)] / z) * (centers[static_cast<size_t>(k)] - expv);
            }
          });

      // ProbIoU over positives: decode chain handled inside the node
      std::vector<geom::OrientedBox> gts;
      std::vector<std::pair<int, int>> cells;
      for (const Pos& pos : positives) {
        gts.push_back(pos.gt);
        cells.emplace_back(pos.i, pos.j);
      }
      const int stride = cfg_.stride;
      {
        const nn::Tensor& br = tape.val(box_rows);
        const nn::Tensor& tr = tape.val(theta_rows);
        nn::Tensor out = nn::Tensor::scalar(0.0);
        double acc = 0.0;
        for (int m = 0; m < M; ++m) {
          const geom::OrientedBox pb = decode_raw(
              br[static_cast<int64_t>(m) * 4], br[static_cast<int64_t>(m) * 4 + 1],
              br[static_cast<int64_t>(m) * 4 + 2], br[static_cast<int64_t>(m) * 4 + 3], tr[m],
              cells[static_cast<size_t>(m)].first, cells[static_cast<size_t>(m)].second, stride);
          acc += geom::probiou_loss(pb, gts[static_cast<size_t>(m)]);
        }
        out[0] = acc / M;
        nn::Val prob = tape.custom(
            {box_rows, theta_rows}, std::move(out),
            [gts, cells, stride, M](const nn::CustomCtx& ctx) {
              nn::Tensor* gb = ctx.in_grad(0);
              nn::Tensor* gt = ctx.in_grad(1);
              const nn::Tensor& br2 = ctx.in_val(0);
              const nn::Tensor& tr2 = ctx.in_val(1);
              const double go = ctx.out_grad()[0] / M;
              for (int m = 0; m < M; ++m) {
                const double dx = br2[static_cast<int64_t>(m) * 4];
                const double dy = br2[static_cast<int64_t>(m) * 4 + 1];
                const double tw = br2[static_cast<int64_t>(m) * 4 + 2];
                const double th = br2[static_cast<int64_t>(m) * 4 + 3];
                const geom::OrientedBox pb =
                    decode_raw(dx, dy, tw, th, tr2[m], cells[static_cast<size_t>(m)].first,
                               cells[static_cast<size_t>(m)].second, stride);
                const auto g10 = geom::probiou_grad(pb, gts[static_cast<size_t>(m)]);
                if (gb) {
                  (*gb)[static_cast<int64_t>(m) * 4] += go * g10[0] * stride;       // cx
                  (*gb)[static_cast<int64_t>(m) * 4 + 1] += go * g10[1] * stride;   // cy
                  (*gb)[static_cast<int64_t>(m) * 4 + 2] += go * g10[2] * pb.w;     // w = s e^tw
                  (*gb)[static_cast<int64_t>(m) * 4 + 3] += go * g10[3] * pb.h;
                }
                if (gt) (*gt)[m] += go * g10[4];
              }
            });
        total = tape.add(total, tape.scale(prob, cfg_.beta));
      }

      // DFL over positives (softmax inside the node)
      {
        std::vector<double> targets;
        for (const Pos& pos : positives) targets.push_back(pos.gt.theta);
        const nn::Tensor& ar = tape.val(ang_rows);
        nn::Tensor out = nn::Tensor::scalar(0.0);
        double acc = 0.0;
        std::vector<std::vector<double>> probs(static_cast<size_t>(M));
        for (int m = 0; m < M; ++m) {
          const double* row = ar.data() + static_cast<int64_t>(m) * nb;
          double mx = row[0];
          for (int k = 1; k < nb; ++k) mx = std::max(mx, row[k]);
          std::vector<double> S(static_cast<size_t>(nb));
          double z = 0.0;
          for (int k = 0; k < nb; ++k) {
            S[static_cast<size_t>(k)] = std::exp(row[k] - mx);
            z += S[static_cast<size_t>(k)];
          }
          for (auto& s : S) s /= z;
          acc += loss_dfl(S, targets[static_cast<size_t>(m)], nb);
          probs[static_cast<size_t>(m)] = std::move(S);
        }
        out[0] = acc / M;
        nn::Val dfl = tape.custom(
            {ang_rows}, std::move(out), [probs, targets, nb, M](const nn::CustomCtx& ctx) {
              nn::Tensor* g = ctx.in_grad(0);
              if (!g) return;
              const double go = ctx.out_grad()[0] / M;
              for (int m = 0; m < M; ++m) {
                const AngleTarget t = dfl_target(targets[static_cast<size_t>(m)], nb);
                const auto& S = probs[static_cast<size_t>(m)];
                double* grow = g->data() + static_cast<int64_t>(m) * nb;
                // d(-wl log S_i - wr log S_j)/dz_k = (wl+wr) S_k - wl d_ik - wr d_jk
                for (int k = 0; k < nb; ++k)
                  grow[k] += go * (t.wl + t.wr) * S[static_cast<size_t>(k)];
                grow[t.left] -= go * t.wl;
                grow[t.left + 1] -= go * t.wr;
              }
            });
        total = tape.add(total, tape.scale(dfl, cfg_.gamma));
      }
    }
  }

  const double loss = tape.val(total).item();
  tape.backward(total);
  P.apply_adam(lr > 0.0 ? lr : cfg_.lr);
  return loss;
}

DetectorOutput DetectorNet::forward_raw(const img::Image& frame) const {
  require(frame.w == cfg_.in_w && frame.h == cfg_.in_h,
          "detect: frame size does not match detector config");
  nn::Tape tape;
  auto& self = const_cast<DetectorNet&>(*this);
  nn::GraphParams P(tape, self.params_, false);
  nn::Val x = tape.constant(frame_to_tensor(frame));
  Heads heads = self.forward(tape, P, x, false);
  const int hc = heads.hc, wc = heads.wc;
  DetectorOutput out;
  out.p = nn::Tensor({1, hc, wc});
  out.box = nn::Tensor({4, hc, wc});
  out.ang = nn::Tensor({cfg_.n_bins, hc, wc});
  const nn::Tensor& pl = tape.val(heads.p_logit);
  for (int64_t i = 0; i < out.p.size(); ++i) out.p[i] = 1.0 / (1.0 + std::exp(-pl[i]));
  out.box.vec() = tape.val(heads.box).vec();
  out.ang.vec() = tape.val(heads.ang).vec();
  return out;
}

std::vector<Detection> DetectorNet::detect(const img::Image& frame) const {
  return detect(frame, cfg_.score_thresh, cfg_.nms_iou);
}

std::vector<Detection> DetectorNet::detect(const img::Image& frame, double score_thresh,
                                           double nms_iou) const {
  return decode(forward_raw(frame), cfg_, score_thresh, nms_iou);
}

namespace {

json config_to_json(const DetectorConfig& c) {
  json j;
  j["in_h"] = c.in_h;
  j["in_w"] = c.in_w;
  j["stride"] = c.stride;
  j["ch1"] = c.ch1;
  j["ch2"] = c.ch2;
  j["ch3"] = c.ch3;
  j["trunk_ch"] = c.trunk_ch;
  j["n_bins"] = c.n_bins;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["alpha_f"] = c.alpha_f;
  j["gamma_f"] = c.gamma_f;
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  j["score_thresh"] = c.score_thresh;
  j["nms_iou"] = c.nms_iou;
  return j;
}

DetectorConfig config_from_json(const json& j) {
  DetectorConfig c;
  c.in_h = j.value("in_h", c.in_h);
  c.in_w = j.value("in_w", c.in_w);
  c.stride = j.value("stride", c.stride);
  c.ch1 = j.value("ch1", c.ch1);
  c.ch2 = j.value("ch2", c.ch2);
  c.ch3 = j.value("ch3", c.ch3);
  c.trunk_ch = j.value("trunk_ch", c.trunk_ch);
  c.n_bins = j.value("n_bins", c.n_bins);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.gamma = j.value("gamma", c.gamma);
  c.alpha_f = j.value("alpha_f", c.alpha_f);
  c.gamma_f = j.value("gamma_f", c.gamma_f);
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.score_thresh = j.value("score_thresh", c.score_thresh);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  return c;
}

}  // namespace

void DetectorNet::save(const std::string& path, const std::string& config_hash) const {
  nn::CheckpointHeader h;
  h.module = "detector";
  h.config_hash = config_hash;
  h.step = params_.step();
  h.extra_json = config_to_json(cfg_).dump();
  nn::save_checkpoint(path, params_, h);
}

DetectorNet DetectorNet::load(const std::string& path) {
  nn::ParamStore store;
  nn::CheckpointHeader h = nn::load_checkpoint(path, store);
  require(h.module == "detector", "load: checkpoint is not a detector (module=" + h.module + ")");
  DetectorNet net(config_from_json(json::parse(h.extra_json)));
  nn::load_checkpoint(path, net.params_);  // overwrite initialized values
  net.params_.set_step(h.step);
  return net;
}

DetectorNet train_detector(const DetectorConfig& cfg, const std::string& data_dir,
                           std::vector<double>* loss_curve) {
  DetectorNet net(cfg);
  std::vector<synth::Dataset> sets;
  for (const auto& dir : synth::list_sequences(data_dir)) sets.push_back(synth::read_dataset(dir));

  // flat index of (sequence, frame)
  std::vector<std::pair<int, int>> pool;
  for (size_t s = 0; s < sets.size(); ++s)
    for (int t = 0; t < sets[s].frames; ++t) pool.emplace_back(static_cast<int>(s), t);
  require(!pool.empty(), "train_detector: no frames in " + data_dir);

  // frames are small; cache them decoded
  std::vector<std::vector<img::Image>> cache(sets.size());
  for (size_t s = 0; s < sets.size(); ++s) {
    cache[s].reserve(static_cast<size_t>(sets[s].frames));
    for (int t = 0; t < sets[s].frames; ++t) cache[s].push_back(sets[s].frame(t));
  }

  Rng rng(cfg.seed ^ 0x5eedULL);
  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const img::Image*> frames;
    std::vector<const FrameAnnotation*> anns;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const auto [s, t] = pool[order[cursor++]];
      frames.push_back(&cache[static_cast<size_t>(s)][static_cast<size_t>(t)]);
      anns.push_back(&sets[static_cast<size_t>(s)].annotations[static_cast<size_t>(t)]);
    }
    const double loss = net.train_step(frames, anns, nn::cosine_lr(cfg.lr, step, cfg.steps));
    if (loss_curve) loss_curve->push_back(loss);
  }
  return net;
}

}  // namespace logo::det
