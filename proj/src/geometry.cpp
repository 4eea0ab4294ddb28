#include "balign/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "balign/errors.hpp"
#include "balign/linalg.hpp"

namespace balign {

LandmarkSet::LandmarkSet(std::vector<Point2> points, std::pair<std::size_t, std::size_t> eye_indices)
    : points_(std::move(points)), eyes_(eye_indices) {
  if (points_.size() < 3) throw std::invalid_argument("LandmarkSet: need at least 3 points");
  if (eyes_.first == eyes_.second || eyes_.first >= points_.size() || eyes_.second >= points_.size())
    throw std::invalid_argument("LandmarkSet: eye indices must be distinct and in range");
  for (const auto& p : points_)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("LandmarkSet: non-finite point");
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  const auto& m = coefficients;
  const double scale = std::max({std::abs(m[0]), std::abs(m[1]), std::abs(m[3]), std::abs(m[4])});
  if (scale == 0.0 || std::abs(det) <= 1e-14 * scale * scale) throw SingularFitError("affine transform is not invertible");
  const double a = m[4] / det, b = -m[1] / det, c = -m[3] / det, d = m[0] / det;
  return {{a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])}};
}

AffineTransform AffineTransform::compose(const AffineTransform& inner) const {
  const auto& o = coefficients;
  const auto& i = inner.coefficients;
  return {{o[0] * i[0] + o[1] * i[3], o[0] * i[1] + o[1] * i[4], o[0] * i[2] + o[1] * i[5] + o[2],
           o[3] * i[0] + o[4] * i[3], o[3] * i[1] + o[4] * i[4], o[3] * i[2] + o[4] * i[5] + o[5]}};
}

Point2 TpsTransform::apply(Point2 p) const {
  const auto& a = affine_part;
  double fx = a[0] + a[1] * p.x + a[2] * p.y;
  double fy = a[3] + a[4] * p.x + a[5] * p.y;
  for (std::size_t k = 0; k < source_points.size(); ++k) {
    const double dx = p.x - source_points[k].x;
    const double dy = p.y - source_points[k].y;
    const double u = tps_kernel_sq(dx * dx + dy * dy);
    fx += nonlinear_weights[k].x * u;
    fy += nonlinear_weights[k].y * u;
  }
  return {fx, fy};
}

Point2 apply_transform(const Transform& t, Point2 p) {
  return std::visit([p](const auto& tr) { return tr.apply(p); }, t);
}

Point2 WarpGrid::map(Point2 u) const {
  if (height < 2 || width < 2) throw std::invalid_argument("WarpGrid::map: grid must be at least 2x2");
  const double fc = (u.x / extent + 1.0) * 0.5 * (width - 1);
  const double fr = (u.y / extent + 1.0) * 0.5 * (height - 1);
  const int c0 = std::clamp(static_cast<int>(std::floor(fc)), 0, width - 2);
  const int r0 = std::clamp(static_cast<int>(std::floor(fr)), 0, height - 2);
  const double s = fc - c0, t = fr - r0;
  const Point2 p00 = at(r0, c0), p01 = at(r0, c0 + 1), p10 = at(r0 + 1, c0), p11 = at(r0 + 1, c0 + 1);
  return (1 - t) * ((1 - s) * p00 + s * p01) + t * ((1 - s) * p10 + s * p11);
}

std::vector<Point2> pixel_lattice(int height, int width, double extent) {
  std::vector<Point2> out;
  out.reserve(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) out.push_back({pixel_center(c, width, extent), pixel_center(r, height, extent)});
  return out;
}

std::vector<Point2> regular_lattice(int grid_size) {
  if (grid_size < 2) throw std::invalid_argument("regular_lattice: grid_size must be >= 2");
  return pixel_lattice(grid_size, grid_size);
}

namespace {

void check_pairs(std::span<const Point2> src, std::span<const Point2> dst, std::size_t min_count, const char* who) {
  if (src.size() != dst.size())
    throw std::invalid_argument(std::string(who) + ": source/target size mismatch");
  if (src.size() < min_count)
    throw std::invalid_argument(std::string(who) + ": need at least " + std::to_string(min_count) + " points");
}

struct Normalizer {
  double cx = 0, cy = 0, s = 1;
  Point2 apply(Point2 p) const { return {s * (p.x - cx), s * (p.y - cy)}; }
};

Normalizer hartley(std::span<const Point2> pts) {
  Normalizer n;
  for (const auto& p : pts) {
    n.cx += p.x;
    n.cy += p.y;
  }
  n.cx /= pts.size();
  n.cy /= pts.size();
  double mean_dist = 0;
  for (const auto& p : pts) mean_dist += std::hypot(p.x - n.cx, p.y - n.cy);
  mean_dist /= pts.size();
  if (mean_dist <= 0) throw SingularFitError("fit_projective: all points coincide");
  n.s = std::sqrt(2.0) / mean_dist;
  return n;
}

bool collinear(Point2 a, Point2 b, Point2 c) {
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  const double scale = std::max({distance(a, b), distance(a, c), distance(b, c)});
  return std::abs(cross) <= 1e-12 * scale * scale;
}

}  // namespace

AffineTransform fit_affine(std::span<const Point2> src, std::span<const Point2> dst) {
  check_pairs(src, dst, 3, "fit_affine");
  const double n = static_cast<double>(src.size());
  Point2 ms, md;
  for (std::size_t k = 0; k < src.size(); ++k) {
    ms = ms + src[k];
    md = md + dst[k];
  }
  ms = (1.0 / n) * ms;
  md = (1.0 / n) * md;
  // Centered normal equations: [sxx sxy; sxy syy] [a; b] = [sxu; syu].
  double sxx = 0, sxy = 0, syy = 0, sxu = 0, syu = 0, sxv = 0, syv = 0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Point2 p = src[k] - ms;
    const Point2 q = dst[k] - md;
    sxx += p.x * p.x;
    sxy += p.x * p.y;
    syy += p.y * p.y;
    sxu += p.x * q.x;
    syu += p.y * q.x;
    sxv += p.x * q.y;
    syv += p.y * q.y;
  }
  const double det = sxx * syy - sxy * sxy;
  const double tr = sxx + syy;
  if (tr <= 0 || det <= 1e-12 * tr * tr) throw SingularFitError("fit_affine: source points are collinear");
  const double a = (syy * sxu - sxy * syu) / det;
  const double b = (sxx * syu - sxy * sxu) / det;
  const double c = (syy * sxv - sxy * syv) / det;
  const double d = (sxx * syv - sxy * sxv) / det;
  return {{a, b, md.x - a * ms.x - b * ms.y, c, d, md.y - c * ms.x - d * ms.y}};
}

AffineTransform fit_affine(const LandmarkSet& src, const LandmarkSet& dst) {
  return fit_affine(std::span(src.points()), std::span(dst.points()));
}

ProjectiveTransform fit_projective(std::span<const Point2> src, std::span<const Point2> dst) {
  check_pairs(src, dst, 4, "fit_projective");
  if (src.size() == 4) {
    for (int skip = 0; skip < 4; ++skip) {
      std::array<Point2, 3> s3, d3;
      for (int k = 0, j = 0; k < 4; ++k)
        if (k != skip) {
          s3[j] = src[k];
          d3[j++] = dst[k];
        }
      if (collinear(s3[0], s3[1], s3[2]) || collinear(d3[0], d3[1], d3[2]))
        throw SingularFitError("fit_projective: three of four points are collinear");
    }
  }
  const Normalizer ns = hartley(src);
  const Normalizer nd = hartley(dst);
  const Eigen::Index rows = static_cast<Eigen::Index>(2 * src.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(rows, 9), 9);
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Point2 p = ns.apply(src[k]);
    const Point2 q = nd.apply(dst[k]);
    const Eigen::Index r = static_cast<Eigen::Index>(2 * k);
    a.row(r) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    a.row(r + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) <= 1e-10 * sv(0)) throw SingularFitError("fit_projective: degenerate configuration");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d ts, td_inv;
  ts << ns.s, 0, -ns.s * ns.cx, 0, ns.s, -ns.s * ns.cy, 0, 0, 1;
  td_inv << 1 / nd.s, 0, nd.cx, 0, 1 / nd.s, nd.cy, 0, 0, 1;
  const Eigen::Matrix3d full = td_inv * hn * ts;
  if (std::abs(full(2, 2)) <= 1e-12 * full.cwiseAbs().maxCoeff())
    throw SingularFitError("fit_projective: homography maps origin to infinity");
  ProjectiveTransform out;
  for (int i = 0; i < 9; ++i) out.coefficients[i] = full(i / 3, i % 3) / full(2, 2);
  out.coefficients[8] = 1.0;
  return out;
}

ProjectiveTransform fit_projective(const LandmarkSet& src, const LandmarkSet& dst) {
  return fit_projective(std::span(src.points()), std::span(dst.points()));
}

TpsTransform tps_solve(std::span<const Point2> source, std::span<const Point2> target, double regularization) {
  check_pairs(source, target, 3, "tps_solve");
  if (!(regularization >= 0.0)) throw std::invalid_argument("tps_solve: regularization must be >= 0");
  const std::size_t n = source.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (distance(source[i], source[j]) <= 1e-12)
        throw SingularFitError("tps_solve: duplicate source points " + std::to_string(i) + " and " + std::to_string(j));

  const std::size_t m = n + 3;
  std::vector<double> sys(m * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = source[i].x - source[j].x, dy = source[i].y - source[j].y;
      sys[i * m + j] = tps_kernel_sq(dx * dx + dy * dy);
    }
    sys[i * m + i] += regularization;
    const double prow[3] = {1.0, source[i].x, source[i].y};
    for (std::size_t k = 0; k < 3; ++k) {
      sys[i * m + n + k] = prow[k];
      sys[(n + k) * m + i] = prow[k];
    }
  }
  const linalg::LuDecomposition lu(std::move(sys), m, 1e-14);
  std::vector<double> bx(m, 0.0), by(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    bx[i] = target[i].x;
    by[i] = target[i].y;
  }
  lu.solve_in_place(bx);
  lu.solve_in_place(by);

  TpsTransform t;
  t.source_points.assign(source.begin(), source.end());
  t.nonlinear_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.nonlinear_weights[i] = {bx[i], by[i]};
  t.affine_part = {bx[n], bx[n + 1], bx[n + 2], by[n], by[n + 1], by[n + 2]};
  t.regularization = regularization;
  return t;
}

std::vector<Point2> tps_eval(const TpsTransform& t, std::span<const Point2> points) {
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

WarpGrid make_grid(const Transform& transform, int height, int width, double extent) {
  if (height < 1 || width < 1) throw std::invalid_argument("make_grid: height and width must be >= 1");
  WarpGrid g{height, width, extent, pixel_lattice(height, width, extent)};
  for (auto& p : g.coords) p = apply_transform(transform, p);
  return g;
}

TpsTransform tps_from_stn_params(std::span<const Point2> predicted_source, int grid_size, double regularization) {
  if (grid_size < 2) throw std::invalid_argument("tps_from_stn_params: grid_size must be >= 2");
  if (predicted_source.size() != static_cast<std::size_t>(grid_size) * grid_size)
    throw std::invalid_argument("tps_from_stn_params: expected grid_size^2 predicted points");
  // Solved on displacements so zero offsets give the identity map exactly.
  const auto lattice = regular_lattice(grid_size);
  std::vector<Point2> offsets(lattice.size());
  for (std::size_t k = 0; k < lattice.size(); ++k) offsets[k] = predicted_source[k] - lattice[k];
  TpsTransform t = tps_solve(lattice, offsets, regularization);
  t.affine_part[1] += 1.0;
  t.affine_part[5] += 1.0;
  return t;
}

namespace {

// Bilinear patch of cell (r0, c0) evaluated at fractional grid index (fr, fc),
// with its Jacobian with respect to (fc, fr).
struct PatchEval {
  Point2 value;
  double j00, j01, j10, j11;  // d(x,y)/d(fc,fr)
};

PatchEval eval_patch(const WarpGrid& g, double fr, double fc) {
  const int c0 = std::clamp(static_cast<int>(std::floor(fc)), 0, g.width - 2);
  const int r0 = std::clamp(static_cast<int>(std::floor(fr)), 0, g.height - 2);
  const double s = fc - c0, t = fr - r0;
  const Point2 p00 = g.at(r0, c0), p01 = g.at(r0, c0 + 1), p10 = g.at(r0 + 1, c0), p11 = g.at(r0 + 1, c0 + 1);
  PatchEval e;
  e.value = (1 - t) * ((1 - s) * p00 + s * p01) + t * ((1 - s) * p10 + s * p11);
  const Point2 ds = (1 - t) * (p01 - p00) + t * (p11 - p10);
  const Point2 dt = (1 - s) * (p10 - p00) + s * (p11 - p01);
  e.j00 = ds.x;
  e.j01 = dt.x;
  e.j10 = ds.y;
  e.j11 = dt.y;
  return e;
}

bool point_in_quad(Point2 p, const std::array<Point2, 4>& q) {
  // Winding-agnostic: inside if all edge cross products share a sign.
  int pos = 0, neg = 0;
  for (int i = 0; i < 4; ++i) {
    const Point2 a = q[i], b = q[(i + 1) % 4];
    const double cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cr > 0) ++pos;
    if (cr < 0) ++neg;
  }
  return pos == 0 || neg == 0;
}

}  // namespace

Point2 invert_warp(const WarpGrid& grid, Point2 point) {
  if (grid.height < 2 || grid.width < 2) throw NotInvertibleError("invert_warp: grid must be at least 2x2");
  if (!std::isfinite(point.x) || !std::isfinite(point.y)) throw NotInvertibleError("invert_warp: non-finite point");

  struct Candidate {
    double score;
    int r, c;
  };
  std::vector<Candidate> cands;
  cands.reserve(static_cast<std::size_t>(grid.height - 1) * (grid.width - 1));
  for (int r = 0; r + 1 < grid.height; ++r) {
    for (int c = 0; c + 1 < grid.width; ++c) {
      const std::array<Point2, 4> quad = {grid.at(r, c), grid.at(r, c + 1), grid.at(r + 1, c + 1), grid.at(r + 1, c)};
      const Point2 center = 0.25 * (quad[0] + quad[1] + quad[2] + quad[3]);
      // Cells containing the point are tried first.
      const double score = distance(center, point) - (point_in_quad(point, quad) ? 1e6 : 0.0);
      cands.push_back({score, r, c});
    }
  }
  const std::size_t tries = std::min<std::size_t>(8, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + tries, cands.end(),
                    [](const Candidate& a, const Candidate& b) { return a.score < b.score; });

  const double slack = 1e-9;
  for (std::size_t k = 0; k < tries; ++k) {
    double fr = cands[k].r + 0.5, fc = cands[k].c + 0.5;
    bool ok = false;
    for (int it = 0; it < 20; ++it) {
      const PatchEval e = eval_patch(grid, fr, fc);
      const double rx = point.x - e.value.x, ry = point.y - e.value.y;
      if (std::hypot(rx, ry) < 1e-12) {
        ok = true;
        break;
      }
      const double det = e.j00 * e.j11 - e.j01 * e.j10;
      if (std::abs(det) < 1e-300) break;
      const double dc = (e.j11 * rx - e.j01 * ry) / det;
      const double dr = (-e.j10 * rx + e.j00 * ry) / det;
      fc += dc;
      fr += dr;
      if (std::hypot(dc, dr) < 1e-13) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      const PatchEval e = eval_patch(grid, fr, fc);
      ok = distance(e.value, point) < 1e-7;
    }
    if (!ok) continue;
    if (fc < -slack || fc > grid.width - 1 + slack || fr < -slack || fr > grid.height - 1 + slack) continue;
    if (distance(eval_patch(grid, fr, fc).value, point) > 1e-7) continue;
    const double x = grid.extent * (-1.0 + 2.0 * fc / (grid.width - 1));
    const double y = grid.extent * (-1.0 + 2.0 * fr / (grid.height - 1));
    return {x, y};
  }
  throw NotInvertibleError("invert_warp: point (" + std::to_string(point.x) + ", " + std::to_string(point.y) +
                           ") is outside the grid's image or the refinement did not converge");
}

}  // namespace balign
