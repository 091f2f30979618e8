#pragma once

// Rotated-box geometry: areas, rotated IoU via convex clipping, Gaussian box
// models with the Bhattacharyya coefficient, the probabilistic IoU loss and
// its closed-form gradient, oriented patch extraction and centerlines.
//
// Coordinates are image pixels (x right, y down). Quads are stored clockwise
// on screen, which makes the shoelace sum positive under this axis convention.

#include <array>
#include <cstdint>

#include "logo/raster.hpp"

namespace logo::geom {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double c, Vec2 a) { return {c * a.x, c * a.y}; }
double dot(Vec2 a, Vec2 b);
double cross(Vec2 a, Vec2 b);
double norm(Vec2 a);

struct RotatedQuad {
  std::array<Vec2, 4> v;
};

// cx,cy center; w along the first edge direction, h across; theta in
// [-pi/2, pi/2) measured from the +x axis.
struct OrientedBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0, theta = 0.0;
};

// 2-d Gaussian with symmetric covariance (xx, xy, yy).
struct GaussianBox {
  Vec2 mean;
  double cxx = 0.0, cxy = 0.0, cyy = 0.0;
};

struct Centerline {
  std::vector<Vec2> points;
};

double signed_area(const RotatedQuad& q);
double area(const RotatedQuad& q);
bool point_in_quad(const RotatedQuad& q, Vec2 p);

RotatedQuad quad_from_obox(const OrientedBox& b);
OrientedBox obox_from_quad(const RotatedQuad& q);
double wrap_angle(double theta);  // into [-pi/2, pi/2)

RotatedQuad translate(const RotatedQuad& q, Vec2 d);
RotatedQuad rotate_about(const RotatedQuad& q, Vec2 center, double theta);

// |A ∩ B| / |A ∪ B| via Sutherland-Hodgman clipping; quads must be convex.
// Degenerate quads (area < 1e-9 px^2) yield 0 so that sample mining stays
// robust; losses reject them instead.
double iou_rotated(const RotatedQuad& a, const RotatedQuad& b);

// Uniform-rectangle second moments: cov = R diag(w^2/12, h^2/12) R^T.
GaussianBox gaussian_from_obox(const OrientedBox& b);

// exp(-B_d) with the closed-form Gaussian Bhattacharyya distance.
double bhattacharyya_coefficient(const GaussianBox& a, const GaussianBox& b);

// sqrt(1 - B_c) between the Gaussian models of the two boxes.
double probiou_loss(const OrientedBox& pred, const OrientedBox& gt);

// d(loss)/d(pred params, gt params), order (cx,cy,w,h,theta) twice.
std::array<double, 10> probiou_grad(const OrientedBox& pred, const OrientedBox& gt);

// Maps the quad interior onto an out_h x out_w grid (v0->v1 along the top
// edge, v0->v3 down) with bilinear sampling; out-of-image samples are 0.
img::Image roi_rotate(const img::Image& image, const RotatedQuad& quad, int out_h, int out_w);

// c midpoints between matched samples of the two longest edges; endpoint
// inclusive, pairing order chosen to minimize total pair distance.
Centerline centerline(const RotatedQuad& quad, int c);

// (x,y) -> (x/w_t, y/h_t) per point.
std::vector<Vec2> normalize_centerline(const Centerline& cl, double w_t, double h_t);

}  // namespace logo::geom
