#include "logo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "logo/common.hpp"

namespace logo::geom {

namespace {
constexpr double kDegenerateArea = 1e-9;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

double signed_area(const RotatedQuad& q) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = q.v[static_cast<size_t>(i)];
    const Vec2& b = q.v[static_cast<size_t>((i + 1) % 4)];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

double area(const RotatedQuad& q) { return std::abs(signed_area(q)); }

bool point_in_quad(const RotatedQuad& q, Vec2 p) {
  // convex test; accepts either stored orientation
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = q.v[static_cast<size_t>(i)];
    const Vec2 b = q.v[static_cast<size_t>((i + 1) % 4)];
    const double c = cross(b - a, p - a);
    if (std::abs(c) < 1e-12) continue;
    const int s = c > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

double wrap_angle(double theta) {
  while (theta >= kPi / 2) theta -= kPi;
  while (theta < -kPi / 2) theta += kPi;
  return theta;
}

RotatedQuad quad_from_obox(const OrientedBox& b) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double hw = b.w / 2, hh = b.h / 2;
  auto corner = [&](double lx, double ly) {
    return Vec2{b.cx + lx * c - ly * s, b.cy + lx * s + ly * c};
  };
  return RotatedQuad{{corner(-hw, -hh), corner(hw, -hh), corner(hw, hh), corner(-hw, hh)}};
}

OrientedBox obox_from_quad(const RotatedQuad& q) {
  OrientedBox b;
  b.cx = (q.v[0].x + q.v[1].x + q.v[2].x + q.v[3].x) / 4;
  b.cy = (q.v[0].y + q.v[1].y + q.v[2].y + q.v[3].y) / 4;
  const Vec2 e01 = q.v[1] - q.v[0];
  const Vec2 e32 = q.v[2] - q.v[3];
  const Vec2 e03 = q.v[3] - q.v[0];
  const Vec2 e12 = q.v[2] - q.v[1];
  b.w = (norm(e01) + norm(e32)) / 2;
  b.h = (norm(e03) + norm(e12)) / 2;
  const Vec2 wdir = e01 + e32;
  b.theta = wrap_angle(std::atan2(wdir.y, wdir.x));
  return b;
}

RotatedQuad translate(const RotatedQuad& q, Vec2 d) {
  RotatedQuad out = q;
  for (auto& p : out.v) p = p + d;
  return out;
}

RotatedQuad rotate_about(const RotatedQuad& q, Vec2 center, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  RotatedQuad out = q;
  for (auto& p : out.v) {
    const Vec2 r = p - center;
    p = {center.x + r.x * c - r.y * s, center.y + r.x * s + r.y * c};
  }
  return out;
}

namespace {

// Sutherland-Hodgman: clip polygon `poly` against the half-plane left of the
// directed edge a->b under positive-shoelace orientation.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& poly, Vec2 a, Vec2 b) {
  std::vector<Vec2> out;
  const size_t n = poly.size();
  if (n == 0) return out;
  const Vec2 e = b - a;
  auto side = [&](Vec2 p) { return cross(e, p - a); };
  for (size_t i = 0; i < n; ++i) {
    const Vec2 cur = poly[i];
    const Vec2 nxt = poly[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0) out.push_back(cur);
    if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
      const double t = sc / (sc - sn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

double poly_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(s);
}

std::vector<Vec2> oriented(const RotatedQuad& q) {
  std::vector<Vec2> p(q.v.begin(), q.v.end());
  if (signed_area(q) < 0) std::reverse(p.begin(), p.end());
  return p;
}

}  // namespace

double iou_rotated(const RotatedQuad& a, const RotatedQuad& b) {
  const double aa = area(a), ab = area(b);
  if (aa < kDegenerateArea || ab < kDegenerateArea) return 0.0;
  std::vector<Vec2> subject = oriented(a);
  const std::vector<Vec2> clip = oriented(b);
  for (size_t i = 0; i < clip.size() && !subject.empty(); ++i)
    subject = clip_edge(subject, clip[i], clip[(i + 1) % clip.size()]);
  const double inter = poly_area(subject);
  const double uni = aa + ab - inter;
  if (uni <= 0.0) return 0.0;
  return std::min(1.0, std::max(0.0, inter / uni));
}

GaussianBox gaussian_from_obox(const OrientedBox& b) {
  require(b.w > 0 && b.h > 0, "gaussian_from_obox: zero-size box");
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double a = b.w * b.w / 12.0, d = b.h * b.h / 12.0;
  GaussianBox g;
  g.mean = {b.cx, b.cy};
  g.cxx = a * c * c + d * s * s;
  g.cyy = a * s * s + d * c * c;
  g.cxy = (a - d) * s * c;
  return g;
}

namespace {

void check_spd(const GaussianBox& g) {
  const double det = g.cxx * g.cyy - g.cxy * g.cxy;
  require(g.cxx > 0 && g.cyy > 0 && det > 0, "covariance must be symmetric positive-definite");
}

double bhattacharyya_distance(const GaussianBox& a, const GaussianBox& b) {
  const double sxx = 0.5 * (a.cxx + b.cxx);
  const double sxy = 0.5 * (a.cxy + b.cxy);
  const double syy = 0.5 * (a.cyy + b.cyy);
  const double det = sxx * syy - sxy * sxy;
  const double deta = a.cxx * a.cyy - a.cxy * a.cxy;
  const double detb = b.cxx * b.cyy - b.cxy * b.cxy;
  const double dx = b.mean.x - a.mean.x;
  const double dy = b.mean.y - a.mean.y;
  // d^T S^-1 d with S the mixed covariance
  const double quad = (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det;
  return quad / 8.0 + 0.5 * std::log(det / std::sqrt(deta * detb));
}

}  // namespace

double bhattacharyya_coefficient(const GaussianBox& a, const GaussianBox& b) {
  check_spd(a);
  check_spd(b);
  return std::exp(-bhattacharyya_distance(a, b));
}

double probiou_loss(const OrientedBox& pred, const OrientedBox& gt) {
  const double bc = bhattacharyya_coefficient(gaussian_from_obox(pred), gaussian_from_obox(gt));
  return std::sqrt(std::max(0.0, 1.0 - bc));
}

std::array<double, 10> probiou_grad(const OrientedBox& pred, const OrientedBox& gt) {
  const GaussianBox ga = gaussian_from_obox(pred);
  const GaussianBox gb = gaussian_from_obox(gt);
  check_spd(ga);
  check_spd(gb);

  const double sxx = 0.5 * (ga.cxx + gb.cxx);
  const double sxy = 0.5 * (ga.cxy + gb.cxy);
  const double syy = 0.5 * (ga.cyy + gb.cyy);
  const double det = sxx * syy - sxy * sxy;
  const double dx = gb.mean.x - ga.mean.x;
  const double dy = gb.mean.y - ga.mean.y;

  // u = S^-1 d
  const double ux = (syy * dx - sxy * dy) / det;
  const double uy = (-sxy * dx + sxx * dy) / det;

  const double bd = bhattacharyya_distance(ga, gb);
  const double bc = std::exp(-bd);
  const double one_minus = std::max(1.0 - bc, 1e-12);
  // dL/dBd with L = sqrt(1 - exp(-Bd))
  const double dL_dBd = bc / (2.0 * std::sqrt(one_minus));

  // dBd/dmean (a side): quad term only
  const double dBd_dax = -ux / 4.0;
  const double dBd_day = -uy / 4.0;

  // dBd/dS entries (full-matrix convention, S symmetric stored as xx,xy,yy;
  // the xy slot carries both off-diagonal contributions)
  const double ixx = syy / det, ixy = -sxy / det, iyy = sxx / det;  // S^-1
  // d(quad)/dS = -u u^T ; d(ln det S)/dS = S^-1
  const double dq_dxx = -ux * ux, dq_dxy = -2.0 * ux * uy, dq_dyy = -uy * uy;
  const double dBd_dSxx = dq_dxx / 8.0 + 0.5 * ixx;
  const double dBd_dSxy = dq_dxy / 8.0 + 0.5 * (2.0 * ixy);
  const double dBd_dSyy = dq_dyy / 8.0 + 0.5 * iyy;

  auto cov_grads = [&](const GaussianBox& g, const OrientedBox& box, double sign_mean,
                       std::array<double, 5>& out) {
    // dBd/dSigma_side = 0.5 * dBd/dS - 0.25 * Sigma^-1 (ln det of that side)
    const double dg = g.cxx * g.cyy - g.cxy * g.cxy;
    const double gxx = 0.5 * dBd_dSxx - 0.25 * (g.cyy / dg);
    const double gxy = 0.5 * dBd_dSxy - 0.25 * (2.0 * (-g.cxy / dg));
    const double gyy = 0.5 * dBd_dSyy - 0.25 * (g.cxx / dg);
    const double c = std::cos(box.theta), s = std::sin(box.theta);
    const double a = box.w * box.w / 12.0, d = box.h * box.h / 12.0;
    // dSigma/dw: da/dw = w/6
    const double dadw = box.w / 6.0;
    const double dSxx_dw = dadw * c * c, dSyy_dw = dadw * s * s, dSxy_dw = dadw * s * c;
    const double dddh = box.h / 6.0;
    const double dSxx_dh = dddh * s * s, dSyy_dh = dddh * c * c, dSxy_dh = -dddh * s * c;
    const double dSxx_dt = 2.0 * s * c * (d - a);
    const double dSyy_dt = 2.0 * s * c * (a - d);
    const double dSxy_dt = (a - d) * (c * c - s * s);
    out[0] = sign_mean * dBd_dax;  // cx
    out[1] = sign_mean * dBd_day;  // cy
    out[2] = gxx * dSxx_dw + gxy * dSxy_dw + gyy * dSyy_dw;
    out[3] = gxx * dSxx_dh + gxy * dSxy_dh + gyy * dSyy_dh;
    out[4] = gxx * dSxx_dt + gxy * dSxy_dt + gyy * dSyy_dt;
  };

  std::array<double, 5> gp{}, gg{};
  cov_grads(ga, pred, 1.0, gp);
  cov_grads(gb, gt, -1.0, gg);

  std::array<double, 10> out{};
  for (int i = 0; i < 5; ++i) {
    out[static_cast<size_t>(i)] = dL_dBd * gp[static_cast<size_t>(i)];
    out[static_cast<size_t>(i + 5)] = dL_dBd * gg[static_cast<size_t>(i)];
  }
  return out;
}

img::Image roi_rotate(const img::Image& image, const RotatedQuad& quad, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "roi_rotate: bad output size");
  require(area(quad) >= kDegenerateArea, "roi_rotate: degenerate quad");
  double minx = quad.v[0].x, maxx = quad.v[0].x, miny = quad.v[0].y, maxy = quad.v[0].y;
  for (const auto& p : quad.v) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  require(maxx > 0 && minx < image.w && maxy > 0 && miny < image.h,
          "roi_rotate: quad fully outside image");
  img::Image out(out_w, out_h, image.c);
  for (int r = 0; r < out_h; ++r) {
    const double v = (r + 0.5) / out_h;
    for (int col = 0; col < out_w; ++col) {
      const double u = (col + 0.5) / out_w;
      // bilinear corner interpolation; exact affine map for parallelograms
      const Vec2 top = quad.v[0] + u * (quad.v[1] - quad.v[0]);
      const Vec2 bot = quad.v[3] + u * (quad.v[2] - quad.v[3]);
      const Vec2 p = top + v * (bot - top);
      for (int ch = 0; ch < image.c; ++ch) {
        const double s = img::sample_bilinear(image, p.x, p.y, ch);
        out.at(col, r, ch) = static_cast<uint8_t>(std::lround(std::min(255.0, std::max(0.0, s))));
      }
    }
  }
  return out;
}

Centerline centerline(const RotatedQuad& quad, int c) {
  require(c >= 2, "centerline: need at least 2 samples");
  require(area(quad) >= kDegenerateArea, "centerline: degenerate quad");
  struct Edge {
    Vec2 a, b;
    double len;
    int idx;
  };
  std::array<Edge, 4> edges;
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = quad.v[static_cast<size_t>(i)];
    const Vec2 b = quad.v[static_cast<size_t>((i + 1) % 4)];
    edges[static_cast<size_t>(i)] = {a, b, norm(b - a), i};
  }
  std::array<Edge, 4> sorted = edges;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Edge& x, const Edge& y) { return x.len > y.len; });
  Edge tb = sorted[0], lb = sorted[1];
  if (tb.idx > lb.idx) std::swap(tb, lb);

  auto sample = [&](const Edge& e, bool reversed) {
    std::vector<Vec2> pts(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
      const double t = c == 1 ? 0.0 : static_cast<double>(i) / (c - 1);
      const double tt = reversed ? 1.0 - t : t;
      pts[static_cast<size_t>(i)] = e.a + tt * (e.b - e.a);
    }
    return pts;
  };

  const std::vector<Vec2> top = sample(tb, false);
  const std::vector<Vec2> bot_fwd = sample(lb, false);
  const std::vector<Vec2> bot_rev = sample(lb, true);
  double dist_fwd = 0.0, dist_rev = 0.0;
  for (int i = 0; i < c; ++i) {
    dist_fwd += norm(top[static_cast<size_t>(i)] - bot_fwd[static_cast<size_t>(i)]);
    dist_rev += norm(top[static_cast<size_t>(i)] - bot_rev[static_cast<size_t>(i)]);
  }
  const std::vector<Vec2>& bot = dist_fwd <= dist_rev ? bot_fwd : bot_rev;

  Centerline out;
  out.points.resize(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i)
    out.points[static_cast<size_t>(i)] = 0.5 * (top[static_cast<size_t>(i)] + bot[static_cast<size_t>(i)]);
  return out;
}

std::vector<Vec2> normalize_centerline(const Centerline& cl, double w_t, double h_t) {
  require(w_t > 0 && h_t > 0, "normalize_centerline: frame size must be positive");
  std::vector<Vec2> out(cl.points.size());
  for (size_t i = 0; i < cl.points.size(); ++i)
    out[i] = {cl.points[i].x / w_t, cl.points[i].y / h_t};
  return out;
}

}  // namespace logo::geom
