#include "logo/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace logo {

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

uint64_t fnv1a(const void* data, size_t n, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace logo

namespace logo::nn {

using json = nlohmann::json;

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative tensor dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  d_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), d_(std::move(data)) {
  require(shape_size(shape_) == static_cast<int64_t>(d_.size()), "tensor shape/data mismatch");
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.d_) x = v;
  return t;
}

double Tensor::item() const {
  require(size() == 1, "item() on non-scalar tensor");
  return d_[0];
}

// ---------------- tape ----------------

const Tensor& CustomCtx::in_val(int i) const {
  return tape->nodes_[static_cast<size_t>(inputs[static_cast<size_t>(i)])].val;
}

Tensor* CustomCtx::in_grad(int i) const {
  auto& n = tape->nodes_[static_cast<size_t>(inputs[static_cast<size_t>(i)])];
  return n.req ? &n.grad : nullptr;
}

const Tensor& CustomCtx::out_grad() const {
  return tape->nodes_[static_cast<size_t>(out)].grad;
}

Val Tape::push(Tensor v, bool req, std::function<void()> back) {
  Node n;
  n.val = std::move(v);
  n.req = req;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

Val Tape::leaf(Tensor v, bool requires_grad) { return push(std::move(v), requires_grad, nullptr); }

const Tensor& Tape::val(Val v) const { return node(v).val; }

Tensor& Tape::grad(Val v) { return node(v).grad; }

bool Tape::requires_grad(Val v) const { return node(v).req; }

void Tape::backward(Val root) {
  require(node(root).val.size() == 1, "backward root must be scalar");
  for (auto& n : nodes_) n.grad = Tensor(n.val.shape());
  node(root).grad[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.req && n.back) n.back();
  }
}

// helper: accumulate src into dst elementwise
static void axpy(Tensor& dst, const Tensor& src, double c = 1.0) {
  double* d = dst.data();
  const double* s = src.data();
  const int64_t n = dst.size();
  for (int64_t i = 0; i < n; ++i) d[i] += c * s[i];
}

Val Tape::add(Val a, Val b) {
  require(node(a).val.same_shape(node(b).val), "add: shape mismatch");
  Tensor out = node(a).val;
  axpy(out, node(b).val);
  bool req = node(a).req || node(b).req;
  int ai = a.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, bi, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    if (nodes_[static_cast<size_t>(ai)].req) axpy(nodes_[static_cast<size_t>(ai)].grad, g);
    if (nodes_[static_cast<size_t>(bi)].req) axpy(nodes_[static_cast<size_t>(bi)].grad, g);
  });
}

Val Tape::sub(Val a, Val b) {
  require(node(a).val.same_shape(node(b).val), "sub: shape mismatch");
  Tensor out = node(a).val;
  axpy(out, node(b).val, -1.0);
  bool req = node(a).req || node(b).req;
  int ai = a.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, bi, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    if (nodes_[static_cast<size_t>(ai)].req) axpy(nodes_[static_cast<size_t>(ai)].grad, g);
    if (nodes_[static_cast<size_t>(bi)].req) axpy(nodes_[static_cast<size_t>(bi)].grad, g, -1.0);
  });
}

Val Tape::mul(Val a, Val b) {
  require(node(a).val.same_shape(node(b).val), "mul: shape mismatch");
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  Tensor out(av.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  bool req = node(a).req || node(b).req;
  int ai = a.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, bi, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& av2 = nodes_[static_cast<size_t>(ai)].val;
    const Tensor& bv2 = nodes_[static_cast<size_t>(bi)].val;
    if (nodes_[static_cast<size_t>(ai)].req) {
      Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (nodes_[static_cast<size_t>(bi)].req) {
      Tensor& gb = nodes_[static_cast<size_t>(bi)].grad;
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

Val Tape::scale(Val a, double c) {
  Tensor out = node(a).val;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= c;
  bool req = node(a).req;
  int ai = a.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, c, self]() {
    if (nodes_[static_cast<size_t>(ai)].req)
      axpy(nodes_[static_cast<size_t>(ai)].grad, nodes_[static_cast<size_t>(self.idx)].grad, c);
  });
}

Val Tape::add_const(Val a, double c) {
  Tensor out = node(a).val;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
  bool req = node(a).req;
  int ai = a.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, self]() {
    if (nodes_[static_cast<size_t>(ai)].req)
      axpy(nodes_[static_cast<size_t>(ai)].grad, nodes_[static_cast<size_t>(self.idx)].grad);
  });
}

Val Tape::relu(Val a) {
  Tensor out = node(a).val;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  bool req = node(a).req;
  int ai = a.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, self]() {
    if (!nodes_[static_cast<size_t>(ai)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& y = nodes_[static_cast<size_t>(self.idx)].val;
    Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
    for (int64_t i = 0; i < g.size(); ++i)
      if (y[i] > 0.0) ga[i] += g[i];
  });
}

Val Tape::sigmoid(Val a) {
  Tensor out = node(a).val;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  bool req = node(a).req;
  int ai = a.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, self]() {
    if (!nodes_[static_cast<size_t>(ai)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& y = nodes_[static_cast<size_t>(self.idx)].val;
    Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Val Tape::logv(Val a) {
  Tensor out = node(a).val;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  bool req = node(a).req;
  int ai = a.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, self]() {
    if (!nodes_[static_cast<size_t>(ai)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& x = nodes_[static_cast<size_t>(ai)].val;
    Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

Val Tape::expv(Val a) {
  Tensor out = node(a).val;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  bool req = node(a).req;
  int ai = a.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, self]() {
    if (!nodes_[static_cast<size_t>(ai)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& y = nodes_[static_cast<size_t>(self.idx)].val;
    Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

// C = op(A) * op(B), all row-major
static void mm_kernel(const double* a, const double* b, double* c, int m, int n, int k, bool ta,
                      bool tb, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = tb ? nullptr : b + static_cast<size_t>(p) * n;
      double* crow = c + static_cast<size_t>(i) * n;
      if (!tb) {
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<size_t>(j) * k + p];
      }
    }
  }
}

Val Tape::matmul(Val a, Val b, bool ta, bool tb) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.ndim() == 2 && bv.ndim() == 2, "matmul: need 2-d tensors");
  int m = ta ? av.dim(1) : av.dim(0);
  int ka = ta ? av.dim(0) : av.dim(1);
  int kb = tb ? bv.dim(1) : bv.dim(0);
  int n = tb ? bv.dim(0) : bv.dim(1);
  require(ka == kb, "matmul: inner dimension mismatch");
  Tensor out({m, n});
  mm_kernel(av.data(), bv.data(), out.data(), m, n, ka, ta, tb, false);
  bool req = node(a).req || node(b).req;
  int ai = a.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, bi, ta, tb, m, n, ka, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& A = nodes_[static_cast<size_t>(ai)].val;
    const Tensor& B = nodes_[static_cast<size_t>(bi)].val;
    if (nodes_[static_cast<size_t>(ai)].req) {
      Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
      // dA = dC * B^T (or transposed variants)
      if (!ta)
        mm_kernel(g.data(), B.data(), ga.data(), m, ka, n, false, !tb, true);
      else
        mm_kernel(B.data(), g.data(), ga.data(), ka, m, n, tb, true, true);
    }
    if (nodes_[static_cast<size_t>(bi)].req) {
      Tensor& gb = nodes_[static_cast<size_t>(bi)].grad;
      if (!tb)
        mm_kernel(A.data(), g.data(), gb.data(), ka, n, m, !ta, false, true);
      else
        mm_kernel(g.data(), A.data(), gb.data(), n, ka, m, true, ta, true);
    }
  });
}

Val Tape::add_rowvec(Val x, Val b) {
  const Tensor& xv = node(x).val;
  const Tensor& bv = node(b).val;
  require(xv.ndim() == 2 && bv.ndim() == 1 && xv.dim(1) == bv.dim(0),
          "add_rowvec: shape mismatch");
  Tensor out = xv;
  int N = xv.dim(0), F = xv.dim(1);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < F; ++j) out[static_cast<int64_t>(i) * F + j] += bv[j];
  bool req = node(x).req || node(b).req;
  int xi = x.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, bi, N, F, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    if (nodes_[static_cast<size_t>(xi)].req) axpy(nodes_[static_cast<size_t>(xi)].grad, g);
    if (nodes_[static_cast<size_t>(bi)].req) {
      Tensor& gb = nodes_[static_cast<size_t>(bi)].grad;
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < F; ++j) gb[j] += g[static_cast<int64_t>(i) * F + j];
    }
  });
}

Val Tape::conv2d(Val x, Val w, Val b, int stride, int pad) {
  const Tensor& xv = node(x).val;
  const Tensor& wv = node(w).val;
  const Tensor& bv = node(b).val;
  require(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: need 4-d input/weight");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int O = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(1) == C, "conv2d: channel mismatch");
  require(bv.ndim() == 1 && bv.dim(0) == O, "conv2d: bias mismatch");
  int OH = (H + 2 * pad - kh) / stride + 1;
  int OW = (W + 2 * pad - kw) / stride + 1;
  require(OH > 0 && OW > 0, "conv2d: output collapsed");
  Tensor out({N, O, OH, OW});
  const double* xp = xv.data();
  const double* wp = wv.data();
  double* op = out.data();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double* obase = op + ((static_cast<int64_t>(n) * O + o) * OH) * OW;
      const double bias = bv[o];
      for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) obase[i] = bias;
      for (int c = 0; c < C; ++c) {
        const double* xbase = xp + ((static_cast<int64_t>(n) * C + c) * H) * W;
        const double* wbase = wp + ((static_cast<int64_t>(o) * C + c) * kh) * kw;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const double wval = wbase[ky * kw + kx];
            if (wval == 0.0) continue;
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = xbase + static_cast<int64_t>(iy) * W;
              double* orow = obase + static_cast<int64_t>(oy) * OW;
              for (int ox = 0; ox < OW; ++ox) {
                int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                orow[ox] += wval * xrow[ix];
              }
            }
          }
      }
    }
  bool req = node(x).req || node(w).req || node(b).req;
  int xi = x.idx, wi = w.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, wi, bi, stride, pad, N, C, H, W, O, kh, kw, OH, OW,
                                    self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& X = nodes_[static_cast<size_t>(xi)].val;
    const Tensor& Wt = nodes_[static_cast<size_t>(wi)].val;
    const bool need_x = nodes_[static_cast<size_t>(xi)].req;
    const bool need_w = nodes_[static_cast<size_t>(wi)].req;
    const bool need_b = nodes_[static_cast<size_t>(bi)].req;
    Tensor* gx = need_x ? &nodes_[static_cast<size_t>(xi)].grad : nullptr;
    Tensor* gw = need_w ? &nodes_[static_cast<size_t>(wi)].grad : nullptr;
    Tensor* gb = need_b ? &nodes_[static_cast<size_t>(bi)].grad : nullptr;
    const double* gp = g.data();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) {
        const double* gbase = gp + ((static_cast<int64_t>(n) * O + o) * OH) * OW;
        if (gb) {
          double acc = 0.0;
          for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) acc += gbase[i];
          (*gb)[o] += acc;
        }
        if (!need_x && !need_w) continue;
        for (int c = 0; c < C; ++c) {
          const double* xbase = X.data() + ((static_cast<int64_t>(n) * C + c) * H) * W;
          const double* wbase = Wt.data() + ((static_cast<int64_t>(o) * C + c) * kh) * kw;
          double* gxbase = gx ? gx->data() + ((static_cast<int64_t>(n) * C + c) * H) * W : nullptr;
          double* gwbase = gw ? gw->data() + ((static_cast<int64_t>(o) * C + c) * kh) * kw : nullptr;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const double wval = wbase[ky * kw + kx];
              double wacc = 0.0;
              for (int oy = 0; oy < OH; ++oy) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                const double* grow = gbase + static_cast<int64_t>(oy) * OW;
                const double* xrow = xbase + static_cast<int64_t>(iy) * W;
                double* gxrow = gxbase ? gxbase + static_cast<int64_t>(iy) * W : nullptr;
                for (int ox = 0; ox < OW; ++ox) {
                  int ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= W) continue;
                  const double gval = grow[ox];
                  if (gxrow) gxrow[ix] += wval * gval;
                  if (gwbase) wacc += xrow[ix] * gval;
                }
              }
              if (gwbase) gwbase[ky * kw + kx] += wacc;
            }
        }
      }
  });
}

Val Tape::batchnorm(Val x, Val gamma, Val beta, double eps, Tensor* out_mean, Tensor* out_var) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 4, "batchnorm: need 4-d input");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  require(node(gamma).val.size() == C && node(beta).val.size() == C, "batchnorm: affine mismatch");
  const int64_t m = static_cast<int64_t>(N) * H * W;
  require(m > 0, "batchnorm: empty batch");
  Tensor mean({C}), var({C});
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* p = xv.data() + ((static_cast<int64_t>(n) * C + c) * plane);
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
    }
    mean[c] = acc / static_cast<double>(m);
    double vacc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* p = xv.data() + ((static_cast<int64_t>(n) * C + c) * plane);
      for (int64_t i = 0; i < plane; ++i) {
        double d = p[i] - mean[c];
        vacc += d * d;
      }
    }
    var[c] = vacc / static_cast<double>(m);
  }
  if (out_mean) *out_mean = mean;
  if (out_var) *out_var = var;
  Tensor out(xv.shape());
  const Tensor& gv = node(gamma).val;
  const Tensor& bv = node(beta).val;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double inv = 1.0 / std::sqrt(var[c] + eps);
      const double* p = xv.data() + ((static_cast<int64_t>(n) * C + c) * plane);
      double* q = out.data() + ((static_cast<int64_t>(n) * C + c) * plane);
      for (int64_t i = 0; i < plane; ++i) q[i] = gv[c] * (p[i] - mean[c]) * inv + bv[c];
    }
  bool req = node(x).req || node(gamma).req || node(beta).req;
  int xi = x.idx, gi = gamma.idx, bi = beta.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  Tensor mean_c = mean, var_c = var;
  return push(std::move(out), req, [this, xi, gi, bi, eps, N, C, plane, m, mean_c, var_c, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& X = nodes_[static_cast<size_t>(xi)].val;
    const Tensor& gv = nodes_[static_cast<size_t>(gi)].val;
    const bool need_x = nodes_[static_cast<size_t>(xi)].req;
    for (int c = 0; c < C; ++c) {
      const double inv = 1.0 / std::sqrt(var_c[c] + eps);
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* gp = g.data() + ((static_cast<int64_t>(n) * C + c) * plane);
        const double* xp = X.data() + ((static_cast<int64_t>(n) * C + c) * plane);
        for (int64_t i = 0; i < plane; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * (xp[i] - mean_c[c]) * inv;
        }
      }
      if (nodes_[static_cast<size_t>(gi)].req) nodes_[static_cast<size_t>(gi)].grad[c] += sum_gx;
      if (nodes_[static_cast<size_t>(bi)].req) nodes_[static_cast<size_t>(bi)].grad[c] += sum_g;
      if (need_x) {
        Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
        const double gam = gv[c];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int n = 0; n < N; ++n) {
          const double* gp = g.data() + ((static_cast<int64_t>(n) * C + c) * plane);
          const double* xp = X.data() + ((static_cast<int64_t>(n) * C + c) * plane);
          double* gxp = gx.data() + ((static_cast<int64_t>(n) * C + c) * plane);
          for (int64_t i = 0; i < plane; ++i) {
            const double xhat = (xp[i] - mean_c[c]) * inv;
            gxp[i] += gam * inv * (gp[i] - inv_m * sum_g - inv_m * xhat * sum_gx);
          }
        }
      }
    }
  });
}

Val Tape::bn_inference(Val x, Val gamma, Val beta, const Tensor& mean, const Tensor& var,
                       double eps) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 4, "bn_inference: need 4-d input");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor out(xv.shape());
  const Tensor& gv = node(gamma).val;
  const Tensor& bv = node(beta).val;
  std::vector<double> scale(static_cast<size_t>(C)), shift(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    scale[static_cast<size_t>(c)] = gv[c] / std::sqrt(var[c] + eps);
    shift[static_cast<size_t>(c)] = bv[c] - mean[c] * scale[static_cast<size_t>(c)];
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = xv.data() + ((static_cast<int64_t>(n) * C + c) * plane);
      double* q = out.data() + ((static_cast<int64_t>(n) * C + c) * plane);
      for (int64_t i = 0; i < plane; ++i)
        q[i] = scale[static_cast<size_t>(c)] * p[i] + shift[static_cast<size_t>(c)];
    }
  bool req = node(x).req || node(gamma).req || node(beta).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  std::vector<double> scale_c = scale;
  return push(std::move(out), req, [this, xi, N, C, plane, scale_c, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double* gp = g.data() + ((static_cast<int64_t>(n) * C + c) * plane);
        double* gxp = gx.data() + ((static_cast<int64_t>(n) * C + c) * plane);
        for (int64_t i = 0; i < plane; ++i) gxp[i] += scale_c[static_cast<size_t>(c)] * gp[i];
      }
  });
}

Val Tape::upsample2x(Val x) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 4, "upsample2x: need 4-d input");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, H * 2, W * 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = xv.data() + ((static_cast<int64_t>(n) * C + c) * H) * W;
      double* q = out.data() + ((static_cast<int64_t>(n) * C + c) * H * 2) * (W * 2);
      for (int y = 0; y < H * 2; ++y)
        for (int x2 = 0; x2 < W * 2; ++x2)
          q[static_cast<int64_t>(y) * (W * 2) + x2] = p[static_cast<int64_t>(y / 2) * W + x2 / 2];
    }
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, N, C, H, W, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double* gp = g.data() + ((static_cast<int64_t>(n) * C + c) * H * 2) * (W * 2);
        double* gxp = gx.data() + ((static_cast<int64_t>(n) * C + c) * H) * W;
        for (int y = 0; y < H * 2; ++y)
          for (int x2 = 0; x2 < W * 2; ++x2)
            gxp[static_cast<int64_t>(y / 2) * W + x2 / 2] +=
                gp[static_cast<int64_t>(y) * (W * 2) + x2];
      }
  });
}

Val Tape::reshape(Val x, std::vector<int> shape) {
  const Tensor& xv = node(x).val;
  require(shape_size(shape) == xv.size(), "reshape: element count mismatch");
  Tensor out(std::move(shape), xv.vec());
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Val Tape::concat_cols(Val a, Val b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(0) == bv.dim(0), "concat_cols: shape");
  int N = av.dim(0), F1 = av.dim(1), F2 = bv.dim(1);
  Tensor out({N, F1 + F2});
  for (int i = 0; i < N; ++i) {
    std::memcpy(out.data() + static_cast<int64_t>(i) * (F1 + F2), av.data() + static_cast<int64_t>(i) * F1,
                sizeof(double) * static_cast<size_t>(F1));
    std::memcpy(out.data() + static_cast<int64_t>(i) * (F1 + F2) + F1,
                bv.data() + static_cast<int64_t>(i) * F2, sizeof(double) * static_cast<size_t>(F2));
  }
  bool req = node(a).req || node(b).req;
  int ai = a.idx, bi = b.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, ai, bi, N, F1, F2, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    if (nodes_[static_cast<size_t>(ai)].req) {
      Tensor& ga = nodes_[static_cast<size_t>(ai)].grad;
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < F1; ++j)
          ga[static_cast<int64_t>(i) * F1 + j] += g[static_cast<int64_t>(i) * (F1 + F2) + j];
    }
    if (nodes_[static_cast<size_t>(bi)].req) {
      Tensor& gb = nodes_[static_cast<size_t>(bi)].grad;
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < F2; ++j)
          gb[static_cast<int64_t>(i) * F2 + j] += g[static_cast<int64_t>(i) * (F1 + F2) + F1 + j];
    }
  });
}

Val Tape::concat_rows(const std::vector<Val>& xs) {
  require(!xs.empty(), "concat_rows: empty list");
  int F = node(xs[0]).val.dim(1);
  int total = 0;
  bool req = false;
  for (Val v : xs) {
    require(node(v).val.ndim() == 2 && node(v).val.dim(1) == F, "concat_rows: width mismatch");
    total += node(v).val.dim(0);
    req = req || node(v).req;
  }
  Tensor out({total, F});
  int64_t off = 0;
  for (Val v : xs) {
    const Tensor& t = node(v).val;
    std::memcpy(out.data() + off, t.data(), sizeof(double) * static_cast<size_t>(t.size()));
    off += t.size();
  }
  std::vector<int> idx;
  for (Val v : xs) idx.push_back(v.idx);
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, idx, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    int64_t off2 = 0;
    for (int id : idx) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.req) {
        for (int64_t i = 0; i < n.val.size(); ++i) n.grad[i] += g[off2 + i];
      }
      off2 += n.val.size();
    }
  });
}

Val Tape::slice_batch(Val x, int nsel) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() >= 2, "slice_batch: need batch dim");
  require(nsel >= 0 && nsel < xv.dim(0), "slice_batch: index out of range");
  std::vector<int> shape(xv.shape().begin() + 1, xv.shape().end());
  int64_t stride = shape_size(shape);
  Tensor out(shape);
  std::memcpy(out.data(), xv.data() + static_cast<int64_t>(nsel) * stride,
              sizeof(double) * static_cast<size_t>(stride));
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, nsel, stride, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int64_t i = 0; i < stride; ++i) gx[static_cast<int64_t>(nsel) * stride + i] += g[i];
  });
}

Val Tape::gather_batch(Val x, std::vector<int> idx) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() >= 2, "gather_batch: need batch dim");
  std::vector<int> shape = xv.shape();
  shape[0] = static_cast<int>(idx.size());
  std::vector<int> inner(xv.shape().begin() + 1, xv.shape().end());
  int64_t stride = shape_size(inner);
  Tensor out(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < xv.dim(0), "gather_batch: index out of range");
    std::memcpy(out.data() + static_cast<int64_t>(i) * stride,
                xv.data() + static_cast<int64_t>(idx[i]) * stride,
                sizeof(double) * static_cast<size_t>(stride));
  }
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, idx, stride, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t j = 0; j < stride; ++j)
        gx[static_cast<int64_t>(idx[i]) * stride + j] += g[static_cast<int64_t>(i) * stride + j];
  });
}

Val Tape::mean_h_to_seq(Val x) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 4, "mean_h_to_seq: need 4-d input");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, W, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int w = 0; w < W; ++w) {
        double acc = 0.0;
        for (int h = 0; h < H; ++h)
          acc += xv[(((static_cast<int64_t>(n) * C + c) * H + h) * W) + w];
        out[(static_cast<int64_t>(n) * W + w) * C + c] = acc / H;
      }
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, N, C, H, W, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    const double inv = 1.0 / H;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int w = 0; w < W; ++w) {
          const double gv = g[(static_cast<int64_t>(n) * W + w) * C + c] * inv;
          for (int h = 0; h < H; ++h)
            gx[(((static_cast<int64_t>(n) * C + c) * H + h) * W) + w] += gv;
        }
  });
}

Val Tape::stack_h_to_seq(Val x) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 4, "stack_h_to_seq: need 4-d input");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, W, C * H});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          out[(static_cast<int64_t>(n) * W + w) * (C * H) + c * H + h] =
              xv[(((static_cast<int64_t>(n) * C + c) * H + h) * W) + w];
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, N, C, H, W, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            gx[(((static_cast<int64_t>(n) * C + c) * H + h) * W) + w] +=
                g[(static_cast<int64_t>(n) * W + w) * (C * H) + c * H + h];
  });
}

Val Tape::shift_rows(Val x, int delta, int block) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 2, "shift_rows: need 2-d input");
  require(delta == 1 || delta == -1, "shift_rows: delta must be +-1");
  int N = xv.dim(0), F = xv.dim(1);
  if (block <= 0) block = N;
  require(block > 0 && N % block == 0, "shift_rows: rows must divide into blocks");
  auto src_of = [delta, block, N](int i) {
    int src = i - delta;
    if (src < 0 || src >= N || src / block != i / block) return -1;
    return src;
  };
  Tensor out({N, F});
  for (int i = 0; i < N; ++i) {
    const int src = src_of(i);
    if (src < 0) continue;
    std::memcpy(out.data() + static_cast<int64_t>(i) * F, xv.data() + static_cast<int64_t>(src) * F,
                sizeof(double) * static_cast<size_t>(F));
  }
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, src_of, N, F, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int i = 0; i < N; ++i) {
      const int src = src_of(i);
      if (src < 0) continue;
      for (int j = 0; j < F; ++j)
        gx[static_cast<int64_t>(src) * F + j] += g[static_cast<int64_t>(i) * F + j];
    }
  });
}

Val Tape::row_softmax(Val x) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 2, "row_softmax: need 2-d input");
  int N = xv.dim(0), K = xv.dim(1);
  Tensor out({N, K});
  for (int i = 0; i < N; ++i) {
    const double* p = xv.data() + static_cast<int64_t>(i) * K;
    double* q = out.data() + static_cast<int64_t>(i) * K;
    double mx = p[0];
    for (int j = 1; j < K; ++j) mx = std::max(mx, p[j]);
    double z = 0.0;
    for (int j = 0; j < K; ++j) {
      q[j] = std::exp(p[j] - mx);
      z += q[j];
    }
    for (int j = 0; j < K; ++j) q[j] /= z;
  }
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, N, K, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    const Tensor& y = nodes_[static_cast<size_t>(self.idx)].val;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int i = 0; i < N; ++i) {
      const double* gp = g.data() + static_cast<int64_t>(i) * K;
      const double* yp = y.data() + static_cast<int64_t>(i) * K;
      double dot = 0.0;
      for (int j = 0; j < K; ++j) dot += gp[j] * yp[j];
      double* gxp = gx.data() + static_cast<int64_t>(i) * K;
      for (int j = 0; j < K; ++j) gxp[j] += yp[j] * (gp[j] - dot);
    }
  });
}

Val Tape::mean_all(Val x) {
  const Tensor& xv = node(x).val;
  require(xv.size() > 0, "mean_all: empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(xv.size()));
  bool req = node(x).req;
  int xi = x.idx;
  int64_t n = xv.size();
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, n, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const double gv = nodes_[static_cast<size_t>(self.idx)].grad[0] / static_cast<double>(n);
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int64_t i = 0; i < n; ++i) gx[i] += gv;
  });
}

Val Tape::sum_all(Val x) {
  const Tensor& xv = node(x).val;
  double acc = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
  Tensor out = Tensor::scalar(acc);
  bool req = node(x).req;
  int xi = x.idx;
  int64_t n = xv.size();
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, n, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const double gv = nodes_[static_cast<size_t>(self.idx)].grad[0];
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int64_t i = 0; i < n; ++i) gx[i] += gv;
  });
}

Val Tape::ce_rows(Val logits, const std::vector<int>& target, const std::vector<double>& weight) {
  const Tensor& lv = node(logits).val;
  require(lv.ndim() == 2, "ce_rows: need 2-d logits");
  int N = lv.dim(0), K = lv.dim(1);
  require(static_cast<int>(target.size()) == N && static_cast<int>(weight.size()) == N,
          "ce_rows: target/weight size mismatch");
  double wsum = 0.0;
  for (double w : weight) wsum += w;
  require(wsum > 0.0, "ce_rows: zero total weight");
  // cache softmax rows for backward
  Tensor probs({N, K});
  double loss = 0.0;
  for (int i = 0; i < N; ++i) {
    const double* p = lv.data() + static_cast<int64_t>(i) * K;
    double* q = probs.data() + static_cast<int64_t>(i) * K;
    double mx = p[0];
    for (int j = 1; j < K; ++j) mx = std::max(mx, p[j]);
    double z = 0.0;
    for (int j = 0; j < K; ++j) {
      q[j] = std::exp(p[j] - mx);
      z += q[j];
    }
    for (int j = 0; j < K; ++j) q[j] /= z;
    require(target[static_cast<size_t>(i)] >= 0 && target[static_cast<size_t>(i)] < K,
            "ce_rows: target out of range");
    loss -= weight[static_cast<size_t>(i)] * std::log(std::max(q[target[static_cast<size_t>(i)]], 1e-300));
  }
  Tensor out = Tensor::scalar(loss / wsum);
  bool req = node(logits).req;
  int li = logits.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  Tensor probs_c = std::move(probs);
  std::vector<int> tgt = target;
  std::vector<double> wgt = weight;
  return push(std::move(out), req, [this, li, N, K, probs_c, tgt, wgt, wsum, self]() {
    if (!nodes_[static_cast<size_t>(li)].req) return;
    const double gv = nodes_[static_cast<size_t>(self.idx)].grad[0] / wsum;
    Tensor& gl = nodes_[static_cast<size_t>(li)].grad;
    for (int i = 0; i < N; ++i) {
      const double w = wgt[static_cast<size_t>(i)] * gv;
      if (w == 0.0) continue;
      const double* q = probs_c.data() + static_cast<int64_t>(i) * K;
      double* gp = gl.data() + static_cast<int64_t>(i) * K;
      for (int j = 0; j < K; ++j) gp[j] += w * q[j];
      gp[tgt[static_cast<size_t>(i)]] -= w;
    }
  });
}

Val Tape::append_col(Val x, Val bias_scalar) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 2, "append_col: need 2-d input");
  require(node(bias_scalar).val.size() == 1, "append_col: bias must be scalar");
  int N = xv.dim(0), M = xv.dim(1);
  Tensor out({N, M + 1});
  const double b = node(bias_scalar).val[0];
  for (int i = 0; i < N; ++i) {
    std::memcpy(out.data() + static_cast<int64_t>(i) * (M + 1), xv.data() + static_cast<int64_t>(i) * M,
                sizeof(double) * static_cast<size_t>(M));
    out[static_cast<int64_t>(i) * (M + 1) + M] = b;
  }
  bool req = node(x).req || node(bias_scalar).req;
  int xi = x.idx, bi = bias_scalar.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, bi, N, M, self]() {
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    if (nodes_[static_cast<size_t>(xi)].req) {
      Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
          gx[static_cast<int64_t>(i) * M + j] += g[static_cast<int64_t>(i) * (M + 1) + j];
    }
    if (nodes_[static_cast<size_t>(bi)].req) {
      double acc = 0.0;
      for (int i = 0; i < N; ++i) acc += g[static_cast<int64_t>(i) * (M + 1) + M];
      nodes_[static_cast<size_t>(bi)].grad[0] += acc;
    }
  });
}

Val Tape::segment_colmax(Val x, const std::vector<std::pair<int, int>>& segs) {
  const Tensor& xv = node(x).val;
  require(xv.ndim() == 2, "segment_colmax: need 2-d input");
  int N = xv.dim(0), M = xv.dim(1);
  int T = static_cast<int>(segs.size());
  Tensor out({N, T});
  std::vector<int> arg(static_cast<size_t>(N) * T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      auto [b, e] = segs[static_cast<size_t>(t)];
      require(b >= 0 && b < e && e <= M, "segment_colmax: bad segment");
      const double* p = xv.data() + static_cast<int64_t>(i) * M;
      int best = b;
      for (int j = b + 1; j < e; ++j)
        if (p[j] > p[best]) best = j;  // first max wins ties
      out[static_cast<int64_t>(i) * T + t] = p[best];
      arg[static_cast<size_t>(i) * T + t] = best;
    }
  bool req = node(x).req;
  int xi = x.idx;
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, xi, N, M, T, arg, self]() {
    if (!nodes_[static_cast<size_t>(xi)].req) return;
    const Tensor& g = nodes_[static_cast<size_t>(self.idx)].grad;
    Tensor& gx = nodes_[static_cast<size_t>(xi)].grad;
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t)
        gx[static_cast<int64_t>(i) * M + arg[static_cast<size_t>(i) * T + t]] +=
            g[static_cast<int64_t>(i) * T + t];
  });
}

Val Tape::custom(const std::vector<Val>& inputs, Tensor out, CustomBack back) {
  bool req = false;
  std::vector<int> idx;
  for (Val v : inputs) {
    req = req || node(v).req;
    idx.push_back(v.idx);
  }
  auto self = Val{static_cast<int>(nodes_.size())};
  return push(std::move(out), req, [this, idx, back, self]() {
    CustomCtx ctx;
    ctx.tape = this;
    ctx.inputs = idx;
    ctx.out = self.idx;
    back(ctx);
  });
}

// ---------------- parameters ----------------

Tensor& ParamStore::declare(const std::string& name, Tensor init) {
  auto it = params_.find(name);
  if (it != params_.end()) return it->second.value;
  ParamState st;
  st.m = Tensor(init.shape());
  st.v = Tensor(init.shape());
  st.value = std::move(init);
  return params_.emplace(name, std::move(st)).first->second.value;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter: " + name);
  return it->second.value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "unknown parameter: " + name);
  return it->second.value;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

Tensor& ParamStore::buffer(const std::string& name, Tensor init) {
  auto it = buffers_.find(name);
  if (it != buffers_.end()) return it->second;
  return buffers_.emplace(name, std::move(init)).first->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  require(it != buffers_.end(), "unknown buffer: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::buffer_names() const {
  std::vector<std::string> out;
  out.reserve(buffers_.size());
  for (const auto& [k, _] : buffers_) out.push_back(k);
  return out;
}

void ParamStore::adam_step(const std::map<std::string, Tensor>& grads, double lr, double beta1,
                           double beta2, double eps) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (const auto& [name, g] : grads) {
    auto it = params_.find(name);
    require(it != params_.end(), "adam_step: unknown parameter " + name);
    ParamState& st = it->second;
    require(g.same_shape(st.value), "adam_step: grad shape mismatch for " + name);
    for (int64_t i = 0; i < g.size(); ++i) {
      st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
      st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mh = st.m[i] / bc1;
      const double vh = st.v[i] / bc2;
      st.value[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

Val GraphParams::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Val v = tape_->leaf(store_->get(name), train_);
  bound_.emplace(name, v);
  return v;
}

void GraphParams::apply_adam(double lr, double beta1, double beta2, double eps) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, v] : bound_) grads.emplace(name, tape_->grad(v));
  store_->adam_step(grads, lr, beta1, beta2, eps);
}

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std;
  return t;
}

Tensor normal_init(Rng& rng, std::vector<int> shape, double std) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std;
  return t;
}

double cosine_lr(double base, int step, int total) {
  if (total <= 1) return base;
  const double x = static_cast<double>(step) / static_cast<double>(total - 1);
  return base * (0.05 + 0.475 * (1.0 + std::cos(3.14159265358979323846 * x)));
}

// ---------------- checkpoint io ----------------

static void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

static uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(static_cast<bool>(is), "checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static const char kMagic[4] = {'L', 'G', 'C', 'K'};

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointHeader& header) {
  json h;
  h["module"] = header.module;
  h["config_hash"] = header.config_hash;
  h["step"] = header.step;
  if (!header.extra_json.empty()) h["extra"] = json::parse(header.extra_json);
  json tensors = json::array();
  ParamStore& st = const_cast<ParamStore&>(store);
  for (const auto& name : store.names()) {
    json t;
    t["name"] = name;
    t["kind"] = "param";
    t["shape"] = st.get(name).shape();
    tensors.push_back(t);
  }
  for (const auto& name : store.buffer_names()) {
    json t;
    t["name"] = name;
    t["kind"] = "buffer";
    t["shape"] = st.buffer(name).shape();
    tensors.push_back(t);
  }
  h["tensors"] = tensors;
  std::string htxt = h.dump();
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "checkpoint: cannot open for write: " + path);
  os.write(kMagic, 4);
  write_u32(os, static_cast<uint32_t>(htxt.size()));
  os.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));
  auto dump = [&os](const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
  };
  for (const auto& name : store.names()) dump(st.get(name));
  for (const auto& name : store.buffer_names()) dump(st.buffer(name));
  require(static_cast<bool>(os), "checkpoint: write failed: " + path);
}

CheckpointHeader load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
          "checkpoint: bad magic in " + path);
  uint32_t hlen = read_u32(is);
  std::string htxt(hlen, '\0');
  is.read(htxt.data(), hlen);
  require(static_cast<bool>(is), "checkpoint: truncated header in " + path);
  json h = json::parse(htxt);
  CheckpointHeader out;
  out.module = h.value("module", "");
  out.config_hash = h.value("config_hash", "");
  out.step = h.value("step", static_cast<int64_t>(0));
  if (h.contains("extra")) out.extra_json = h["extra"].dump();
  for (const auto& t : h["tensors"]) {
    std::vector<int> shape = t["shape"].get<std::vector<int>>();
    Tensor tensor(shape);
    is.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(tensor.size())));
    require(static_cast<bool>(is), "checkpoint: truncated tensor data in " + path);
    const std::string name = t["name"].get<std::string>();
    if (t["kind"] == "param") {
      if (store.has(name))
        store.get(name) = std::move(tensor);
      else
        store.declare(name, std::move(tensor));
    } else {
      if (store.has_buffer(name))
        store.buffer(name) = std::move(tensor);
      else
        store.buffer(name, std::move(tensor));
    }
  }
  return out;
}

CheckpointHeader peek_checkpoint(const std::string& path) {
  ParamStore tmp;
  return load_checkpoint(path, tmp);
}

}  // namespace logo::nn
