#include <doctest.h>

#include <cmath>

#include "logo/geometry.hpp"
#include "logo/rng.hpp"
#include "logo/synthdata.hpp"
#include "oracles.hpp"

using namespace logo;
using namespace logo::geom;

namespace {

OrientedBox random_obox(Rng& rng) {
  OrientedBox b;
  b.cx = rng.uniform(200, 800);
  b.cy = rng.uniform(200, 800);
  b.w = rng.uniform(60, 320);
  b.h = rng.uniform(40, 240);
  b.theta = rng.uniform(-1.5, 1.5);
  b.theta = wrap_angle(b.theta);
  return b;
}

RotatedQuad random_convex_quad(Rng& rng) {
  // jittered rectangle kept convex
  OrientedBox b = random_obox(rng);
  RotatedQuad q = quad_from_obox(b);
  for (auto& v : q.v) {
    v.x += rng.uniform(-b.w * 0.08, b.w * 0.08);
    v.y += rng.uniform(-b.h * 0.08, b.h * 0.08);
  }
  return q;
}

}  // namespace

TEST_CASE("iou_rotated identity and disjoint cases") {
  const RotatedQuad unit = oracles::box(0, 0, 1, 1);
  CHECK(iou_rotated(unit, unit) == doctest::Approx(1.0));
  const RotatedQuad far = oracles::box(10, 0, 1, 1);
  CHECK(iou_rotated(unit, far) == doctest::Approx(0.0));
}

TEST_CASE("iou_rotated degenerate quads yield zero") {
  const RotatedQuad line{{Vec2{0, 0}, {5, 0}, {5, 0}, {0, 0}}};
  CHECK(iou_rotated(line, oracles::box(0, 0, 4, 4)) == 0.0);
}

TEST_CASE("iou_rotated matches the rasterization oracle on random pairs") {
  Rng rng(101);
  for (int i = 0; i < 40; ++i) {
    OrientedBox a = random_obox(rng);
    OrientedBox b = a;
    b.cx += rng.uniform(-200, 200);
    b.cy += rng.uniform(-200, 200);
    b.w = rng.uniform(60, 320);
    b.h = rng.uniform(40, 240);
    b.theta = wrap_angle(rng.uniform(-1.5, 1.5));
    const RotatedQuad qa = quad_from_obox(a);
    const RotatedQuad qb = quad_from_obox(b);
    const double fast = iou_rotated(qa, qb);
    const double slow = oracles::iou_raster(qa, qb, 500);
    CHECK(std::abs(fast - slow) < 0.02);
    CHECK(fast == doctest::Approx(iou_rotated(qb, qa)));  // symmetry
    CHECK(fast >= 0.0);
    CHECK(fast <= 1.0);
  }
}

TEST_CASE("oriented box round trip is the identity") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const OrientedBox b = random_obox(rng);
    const OrientedBox back = obox_from_quad(quad_from_obox(b));
    CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-9));
    CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-9));
    CHECK(back.w == doctest::Approx(b.w).epsilon(1e-9));
    CHECK(back.h == doctest::Approx(b.h).epsilon(1e-9));
    CHECK(std::abs(wrap_angle(back.theta - b.theta)) < 1e-6);
  }
}

TEST_CASE("bhattacharyya coefficient basics") {
  const GaussianBox g = gaussian_from_obox({50, 50, 10, 4, 0.3});
  CHECK(bhattacharyya_coefficient(g, g) == doctest::Approx(1.0));

  // strictly decreasing along a growing offset
  double prev = 1.0;
  for (int k = 1; k <= 5; ++k) {
    GaussianBox shifted = g;
    shifted.mean.x += k * 2.0;
    const double bc = bhattacharyya_coefficient(g, shifted);
    CHECK(bc < prev);
    prev = bc;
  }

  // axis-aligned 10x4 vs the same box rotated 90 degrees, against quadrature
  const GaussianBox a = gaussian_from_obox({0, 0, 10, 4, 0.0});
  const GaussianBox b = gaussian_from_obox({0, 0, 10, 4, 1.5707963267948966});
  const double bc = bhattacharyya_coefficient(a, b);
  CHECK(std::abs(bc - oracles::bhattacharyya_quadrature(a, b)) < 1e-3);
}

TEST_CASE("bhattacharyya rejects non-spd covariance") {
  GaussianBox bad;
  bad.mean = {0, 0};
  bad.cxx = 1.0;
  bad.cyy = 1.0;
  bad.cxy = 2.0;  // det < 0
  const GaussianBox ok = gaussian_from_obox({0, 0, 4, 4, 0});
  CHECK_THROWS(bhattacharyya_coefficient(bad, ok));
}

TEST_CASE("bhattacharyya is invariant under a rigid transform of both boxes") {
  Rng rng(53);
  for (int i = 0; i < 20; ++i) {
    OrientedBox a = random_obox(rng), b = random_obox(rng);
    const double before = bhattacharyya_coefficient(gaussian_from_obox(a), gaussian_from_obox(b));
    const double rot = rng.uniform(-1.0, 1.0);
    const double tx = rng.uniform(-50, 50), ty = rng.uniform(-50, 50);
    auto rigid = [&](OrientedBox bx) {
      const double c = std::cos(rot), s = std::sin(rot);
      OrientedBox out = bx;
      out.cx = bx.cx * c - bx.cy * s + tx;
      out.cy = bx.cx * s + bx.cy * c + ty;
      out.theta = wrap_angle(bx.theta + rot);
      return out;
    };
    const double after =
        bhattacharyya_coefficient(gaussian_from_obox(rigid(a)), gaussian_from_obox(rigid(b)));
    CHECK(before == doctest::Approx(after).epsilon(1e-9));
  }
}

TEST_CASE("probiou loss is zero at identity and monotone in center offset") {
  const OrientedBox b{100, 100, 40, 12, 0.4};
  CHECK(probiou_loss(b, b) == doctest::Approx(0.0).epsilon(1e-12));
  double prev = 0.0;
  for (int k = 1; k <= 6; ++k) {
    OrientedBox moved = b;
    moved.cx += 4.0 * k;
    const double l = probiou_loss(moved, b);
    CHECK(l > prev);
    prev = l;
  }
  OrientedBox degenerate = b;
  degenerate.w = 0.0;
  CHECK_THROWS(probiou_loss(degenerate, b));
}

TEST_CASE("probiou gradient matches central finite differences") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    OrientedBox p = random_obox(rng), g = random_obox(rng);
    // keep the pair near enough that the loss is not saturated at 1
    g.cx = p.cx + rng.uniform(-p.w, p.w);
    g.cy = p.cy + rng.uniform(-p.h, p.h);
    const auto grad = probiou_grad(p, g);
    double* slots[10] = {&p.cx, &p.cy, &p.w, &p.h, &p.theta, &g.cx, &g.cy, &g.w, &g.h, &g.theta};
    auto f = [&]() { return probiou_loss(p, g); };
    for (int i = 0; i < 10; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(*slots[i]));
      const double fd = oracles::central_diff(f, slots[i], h);
      CHECK(oracles::rel_err(grad[static_cast<size_t>(i)], fd) < 1e-4);
    }
  }
}

TEST_CASE("roi_rotate identity crop is pixel exact") {
  Rng rng(71);
  img::Image im(40, 30, 1);
  for (auto& p : im.px) p = static_cast<uint8_t>(rng.uniform_int(256));
  const RotatedQuad q = oracles::box(5, 7, 20, 12);
  const img::Image patch = geom::roi_rotate(im, q, 12, 20);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 20; ++x) CHECK(patch.at(x, y) == im.at(5 + x, 7 + y));
}

TEST_CASE("roi_rotate of a rotated render matches the upright render") {
  const synth::WordPatch upright = synth::render_word_patch("go", 64, 32);
  // paint the upright patch rotated by 90 degrees into a bigger canvas
  img::Image canvas(120, 120, 1);
  for (auto& p : canvas.px) p = 40;
  const double cx = 60, cy = 60;
  for (int y = 0; y < canvas.h; ++y)
    for (int x = 0; x < canvas.w; ++x) {
      // inverse rotate by -90 deg: patch coords
      const double rx = (y + 0.5) - cy + 32.0;   // patch x
      const double ry = cx - (x + 0.5) + 16.0;   // patch y
      const double v = img::sample_bilinear(upright.patch, rx, ry);
      if (rx >= 0 && rx < 64 && ry >= 0 && ry < 32)
        canvas.at(x, y) = static_cast<uint8_t>(std::lround(v));
    }
  // quad of the rotated patch: the reading direction points down after the
  // +90 degree rotation, so v0->v1 runs down the right edge
  const RotatedQuad quad{{Vec2{cx + 16, cy - 32}, Vec2{cx + 16, cy + 32}, Vec2{cx - 16, cy + 32},
                          Vec2{cx - 16, cy - 32}}};
  const img::Image recovered = geom::roi_rotate(canvas, quad, 32, 64);
  double diff = 0.0;
  for (int64_t i = 0; i < static_cast<int64_t>(recovered.px.size()); ++i)
    diff += std::abs(static_cast<double>(recovered.px[static_cast<size_t>(i)]) -
                     static_cast<double>(upright.patch.px[static_cast<size_t>(i)]));
  diff /= static_cast<double>(recovered.px.size());
  CHECK(diff < 2.0);  // within bilinear tolerance of 2/255
}

TEST_CASE("roi_rotate is translation equivariant and rejects outside quads") {
  Rng rng(73);
  img::Image im(64, 48, 1);
  for (auto& p : im.px) p = static_cast<uint8_t>(rng.uniform_int(256));
  img::Image shifted(64, 48, 1);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 56; ++x) shifted.at(x + 8, y + 8) = im.at(x, y);
  const OrientedBox b{24, 18, 20, 10, 0.35};
  const img::Image p1 = geom::roi_rotate(im, quad_from_obox(b), 16, 32);
  OrientedBox b2 = b;
  b2.cx += 8;
  b2.cy += 8;
  const img::Image p2 = geom::roi_rotate(shifted, quad_from_obox(b2), 16, 32);
  CHECK(p1.px == p2.px);

  OrientedBox outside{500, 500, 10, 10, 0.0};
  CHECK_THROWS(geom::roi_rotate(im, quad_from_obox(outside), 8, 8));
}

TEST_CASE("centerline of the reference rectangle") {
  const RotatedQuad q = oracles::box(0, 0, 4, 2);
  const Centerline cl = centerline(q, 3);
  REQUIRE(cl.points.size() == 3);
  CHECK(cl.points[0].x == doctest::Approx(0.0));
  CHECK(cl.points[0].y == doctest::Approx(1.0));
  CHECK(cl.points[1].x == doctest::Approx(2.0));
  CHECK(cl.points[1].y == doctest::Approx(1.0));
  CHECK(cl.points[2].x == doctest::Approx(4.0));
  CHECK(cl.points[2].y == doctest::Approx(1.0));
  CHECK_THROWS(centerline(q, 1));
}

TEST_CASE("centerline is rotation equivariant") {
  const RotatedQuad q = oracles::box(0, 0, 4, 2);
  const Centerline base = centerline(q, 5);
  const Vec2 center{2, 1};
  for (double theta : {0.3, -0.9, 1.2}) {
    const Centerline rotated = centerline(rotate_about(q, center, theta), 5);
    for (size_t i = 0; i < 5; ++i) {
      const Vec2 r = base.points[i] - center;
      const Vec2 expect{center.x + r.x * std::cos(theta) - r.y * std::sin(theta),
                        center.y + r.x * std::sin(theta) + r.y * std::cos(theta)};
      CHECK(rotated.points[i].x == doctest::Approx(expect.x).epsilon(1e-9));
      CHECK(rotated.points[i].y == doctest::Approx(expect.y).epsilon(1e-9));
    }
  }
}

TEST_CASE("centerline points are midpoints of matched boundary samples") {
  Rng rng(83);
  for (int trial = 0; trial < 30; ++trial) {
    const RotatedQuad q = random_convex_quad(rng);
    const int c = 2 + rng.uniform_int(6);
    const Centerline cl = centerline(q, c);
    REQUIRE(static_cast<int>(cl.points.size()) == c);

    // independent re-derivation: find the two longest edges by brute force
    double best1 = -1, best2 = -1;
    int i1 = -1, i2 = -1;
    for (int e = 0; e < 4; ++e) {
      const double len = norm(q.v[static_cast<size_t>((e + 1) % 4)] - q.v[static_cast<size_t>(e)]);
      if (len > best1) {
        best2 = best1;
        i2 = i1;
        best1 = len;
        i1 = e;
      } else if (len > best2) {
        best2 = len;
        i2 = e;
      }
    }
    if (i1 > i2) std::swap(i1, i2);
    auto edge_point = [&](int e, double t) {
      const Vec2 a = q.v[static_cast<size_t>(e)];
      const Vec2 b = q.v[static_cast<size_t>((e + 1) % 4)];
      return a + t * (b - a);
    };
    // try both pairings, keep the closer one
    double fwd = 0, rev = 0;
    for (int i = 0; i < c; ++i) {
      const double t = static_cast<double>(i) / (c - 1);
      fwd += norm(edge_point(i1, t) - edge_point(i2, t));
      rev += norm(edge_point(i1, t) - edge_point(i2, 1.0 - t));
    }
    for (int i = 0; i < c; ++i) {
      const double t = static_cast<double>(i) / (c - 1);
      const Vec2 top = edge_point(i1, t);
      const Vec2 bot = edge_point(i2, fwd <= rev ? t : 1.0 - t);
      const Vec2 mid = 0.5 * (top + bot);
      CHECK(cl.points[static_cast<size_t>(i)].x == doctest::Approx(mid.x).epsilon(1e-9));
      CHECK(cl.points[static_cast<size_t>(i)].y == doctest::Approx(mid.y).epsilon(1e-9));
    }
  }
}

TEST_CASE("normalize_centerline follows the normalization equation") {
  Centerline cl;
  cl.points = {{4, 1}};
  const auto out = normalize_centerline(cl, 8, 2);
  CHECK(out[0].x == doctest::Approx(0.5));
  CHECK(out[0].y == doctest::Approx(0.5));

  const auto ident = normalize_centerline(cl, 1, 1);
  CHECK(ident[0].x == doctest::Approx(4.0));
  CHECK(ident[0].y == doctest::Approx(1.0));

  // uniform scaling of frame + points leaves the output unchanged
  Centerline scaled;
  scaled.points = {{12, 3}};
  const auto a = normalize_centerline(cl, 8, 2);
  const auto b = normalize_centerline(scaled, 24, 6);
  CHECK(a[0].x == doctest::Approx(b[0].x));
  CHECK(a[0].y == doctest::Approx(b[0].y));

  CHECK_THROWS(normalize_centerline(cl, 0, 2));
}
