#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <variant>
#include <vector>

namespace balign {

// Normalized coordinates: [-1, 1]^2, (-1, -1) is the center of the top-left
// pixel and (1, 1) the center of the bottom-right one. y grows downwards.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

class LandmarkSet {
 public:
  LandmarkSet() = default;
  /// Throws std::invalid_argument unless |points| >= 3, eyes are distinct and
  /// in range and every coordinate is finite.
  LandmarkSet(std::vector<Point2> points, std::pair<std::size_t, std::size_t> eye_indices);

  const std::vector<Point2>& points() const { return points_; }
  std::pair<std::size_t, std::size_t> eye_indices() const { return eyes_; }
  std::size_t size() const { return points_.size(); }
  const Point2& operator[](std::size_t i) const { return points_[i]; }
  double inter_pupil_distance() const { return distance(points_[eyes_.first], points_[eyes_.second]); }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

 private:
  std::vector<Point2> points_;
  std::pair<std::size_t, std::size_t> eyes_{0, 1};
};

/// 2x3 row-major [a b tx; c d ty] acting on (x, y, 1).
struct AffineTransform {
  std::array<double, 6> coefficients{1, 0, 0, 0, 1, 0};

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }

  Point2 apply(Point2 p) const {
    const auto& m = coefficients;
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }
  double determinant() const { return coefficients[0] * coefficients[4] - coefficients[1] * coefficients[3]; }
  /// Throws SingularFitError when the linear block is singular.
  AffineTransform inverse() const;
  /// Returns this ∘ inner, i.e. p -> this(inner(p)).
  AffineTransform compose(const AffineTransform& inner) const;
};

/// 3x3 row-major homography with h[8] == 1.
struct ProjectiveTransform {
  std::array<double, 9> coefficients{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static ProjectiveTransform identity() { return {}; }
  Point2 apply(Point2 p) const {
    const auto& h = coefficients;
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
  }
};

/// Thin-plate spline f(p) = A·(1, p) + Σ_k w_k U(|p - c_k|), U(r) = r² log r².
struct TpsTransform {
  std::vector<Point2> source_points;
  /// One (wx, wy) pair per source point.
  std::vector<Point2> nonlinear_weights;
  /// 2x3 row-major acting on (1, x, y); identity is [0 1 0; 0 0 1].
  std::array<double, 6> affine_part{0, 1, 0, 0, 0, 1};
  double regularization = 0.0;

  Point2 apply(Point2 p) const;
};

/// TPS radial basis expressed in the squared distance: q log q, 0 at q = 0.
inline double tps_kernel_sq(double q) { return q > 0.0 ? q * std::log(q) : 0.0; }

using Transform = std::variant<AffineTransform, ProjectiveTransform, TpsTransform>;

Point2 apply_transform(const Transform& t, Point2 p);

/// Normalized coordinate of pixel `index` among `count` pixel centers,
/// optionally over the wider square [-extent, extent].
inline double pixel_center(int index, int count, double extent = 1.0) {
  if (count <= 1) return 0.0;
  return extent * (-1.0 + 2.0 * index / static_cast<double>(count - 1));
}

/// Backward-mapping grid: coords[r * width + c] is the input coordinate the
/// output pixel (r, c) samples. The output lattice covers [-extent, extent]^2.
struct WarpGrid {
  int height = 0;
  int width = 0;
  double extent = 1.0;
  std::vector<Point2> coords;

  const Point2& at(int r, int c) const { return coords[static_cast<std::size_t>(r) * width + c]; }
  /// Bilinear interpolation of the stored coordinates at output position u.
  Point2 map(Point2 u) const;
};

/// Row-major lattice of output pixel centers.
std::vector<Point2> pixel_lattice(int height, int width, double extent = 1.0);
/// Row-major grid_size x grid_size lattice of cross points spanning [-1, 1]^2.
std::vector<Point2> regular_lattice(int grid_size);

AffineTransform fit_affine(std::span<const Point2> src, std::span<const Point2> dst);
AffineTransform fit_affine(const LandmarkSet& src, const LandmarkSet& dst);

/// Normalized DLT; exact for four correspondences.
ProjectiveTransform fit_projective(std::span<const Point2> src, std::span<const Point2> dst);
ProjectiveTransform fit_projective(const LandmarkSet& src, const LandmarkSet& dst);

TpsTransform tps_solve(std::span<const Point2> source, std::span<const Point2> target, double regularization);
std::vector<Point2> tps_eval(const TpsTransform& t, std::span<const Point2> points);

WarpGrid make_grid(const Transform& transform, int height, int width, double extent = 1.0);

/// Regularization applied to LocNet-predicted control points.
inline constexpr double kStnTpsRegularization = 1e-6;

/// TPS whose domain is the fixed regular lattice (output space) and whose
/// range is the predicted source points (input space).
TpsTransform tps_from_stn_params(std::span<const Point2> predicted_source, int grid_size,
                                 double regularization = kStnTpsRegularization);

/// Output coordinate u with grid.map(u) == point. Throws NotInvertibleError.
Point2 invert_warp(const WarpGrid& grid, Point2 point);

}  // namespace balign
