#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "balign/errors.hpp"
#include "balign/geometry.hpp"
#include "balign/linalg.hpp"
#include "unit/test_util.hpp"

using namespace balign;

namespace {

AffineTransform random_affine(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  return {{1 + u(rng), u(rng), u(rng), u(rng), 1 + u(rng), u(rng)}};
}

double max_err(const std::vector<Point2>& a, const std::vector<Point2>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, distance(a[i], b[i]));
  return m;
}

}  // namespace

TEST(LandmarkSet, RejectsBadInput) {
  EXPECT_THROW(LandmarkSet({{0, 0}, {1, 0}}, {0, 1}), std::invalid_argument);
  EXPECT_THROW(LandmarkSet({{0, 0}, {1, 0}, {0, 1}}, {1, 1}), std::invalid_argument);
  EXPECT_THROW(LandmarkSet({{0, 0}, {1, 0}, {0, 1}}, {0, 3}), std::invalid_argument);
  EXPECT_THROW(LandmarkSet({{0, 0}, {NAN, 0}, {0, 1}}, {0, 1}), std::invalid_argument);
  const LandmarkSet s({{-0.3, 0}, {0.3, 0}, {0, 0.4}}, {0, 1});
  EXPECT_DOUBLE_EQ(s.inter_pupil_distance(), 0.6);
}

TEST(PixelCenter, CornersAreAtPlusMinusOne) {
  EXPECT_EQ(pixel_center(0, 32), -1.0);
  EXPECT_EQ(pixel_center(31, 32), 1.0);
  EXPECT_EQ(pixel_center(0, 1), 0.0);
  const auto lat = regular_lattice(4);
  ASSERT_EQ(lat.size(), 16u);
  EXPECT_NEAR(lat[1].x, -1.0 / 3.0, 1e-15);
  EXPECT_EQ(lat[1].y, -1.0);
  EXPECT_THROW(regular_lattice(1), std::invalid_argument);
}

TEST(Affine, InverseAndCompose) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_affine(rng);
    const auto id = a.compose(a.inverse());
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(id.coefficients[i], AffineTransform::identity().coefficients[i], 1e-12);
  }
  EXPECT_THROW((AffineTransform{{1, 2, 0, 2, 4, 0}}.inverse()), SingularFitError);
}

TEST(FitAffine, RecoversExactTransform) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_affine(rng);
    const auto src = test_util::random_points(rng, 3 + t % 10);
    std::vector<Point2> dst;
    for (const auto& p : src) dst.push_back(a.apply(p));
    const auto fit = fit_affine(src, dst);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(fit.coefficients[i], a.coefficients[i], 1e-10);
  }
}

TEST(FitAffine, LeastSquaresResidualIsOrthogonal) {
  // Normal equations: residuals are orthogonal to 1, x and y of the sources.
  std::mt19937_64 rng(3);
  const auto src = test_util::random_points(rng, 12);
  const auto dst = test_util::random_points(rng, 12);
  const auto fit = fit_affine(src, dst);
  double s1 = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Point2 r = fit.apply(src[i]) - dst[i];
    s1 += r.x + r.y;
    sx += r.x * src[i].x + r.y * src[i].x;
    sy += r.x * src[i].y + r.y * src[i].y;
  }
  EXPECT_NEAR(s1, 0, 1e-12);
  EXPECT_NEAR(sx, 0, 1e-12);
  EXPECT_NEAR(sy, 0, 1e-12);
}

TEST(FitAffine, RejectsDegenerateInput) {
  const std::vector<Point2> line{{0, 0}, {0.1, 0.1}, {0.2, 0.2}, {0.5, 0.5}};
  EXPECT_THROW(fit_affine(line, line), SingularFitError);
  const std::vector<Point2> two{{0, 0}, {1, 0}};
  EXPECT_THROW(fit_affine(two, two), std::invalid_argument);
  const std::vector<Point2> three{{0, 0}, {1, 0}, {0, 1}};
  EXPECT_THROW(fit_affine(three, two), std::invalid_argument);
}

TEST(FitProjective, ExactForFourPoints) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int t = 0; t < 50; ++t) {
    ProjectiveTransform h{{1 + u(rng), u(rng), u(rng), u(rng), 1 + u(rng), u(rng), 0.3 * u(rng), 0.3 * u(rng), 1}};
    const std::vector<Point2> src{{-0.8, -0.7}, {0.7, -0.8}, {0.8, 0.75}, {-0.75, 0.8}};
    std::vector<Point2> dst;
    for (const auto& p : src) dst.push_back(h.apply(p));
    const auto fit = fit_projective(src, dst);
    EXPECT_EQ(fit.coefficients[8], 1.0);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(fit.coefficients[i], h.coefficients[i], 1e-9);
  }
}

TEST(FitProjective, RejectsCollinearTriples) {
  const std::vector<Point2> src{{0, 0}, {0.5, 0}, {1, 0}, {0, 1}};
  EXPECT_THROW(fit_projective(src, src), SingularFitError);
}

TEST(Tps, InterpolatesAndSatisfiesSideConditions) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + t % 23;
    const auto src = test_util::spread_points(rng, n, 0.05);
    const auto dst = test_util::random_points(rng, n);
    const auto tps = tps_solve(src, dst, 0.0);
    EXPECT_LT(max_err(tps_eval(tps, src), dst), 1e-9);
    double w = 0, wx = 0, wy = 0;
    for (std::size_t k = 0; k < n; ++k) {
      w += tps.nonlinear_weights[k].x + tps.nonlinear_weights[k].y;
      wx += tps.nonlinear_weights[k].x * src[k].x + tps.nonlinear_weights[k].y * src[k].x;
      wy += tps.nonlinear_weights[k].x * src[k].y + tps.nonlinear_weights[k].y * src[k].y;
    }
    EXPECT_LT(std::abs(w) + std::abs(wx) + std::abs(wy), 1e-8);
  }
}

TEST(Tps, ReproducesAffineMapsExactly) {
  std::mt19937_64 rng(6);
  const auto a = random_affine(rng);
  const auto src = test_util::spread_points(rng, 9);
  std::vector<Point2> dst;
  for (const auto& p : src) dst.push_back(a.apply(p));
  const auto tps = tps_solve(src, dst, 0.0);
  for (const auto& w : tps.nonlinear_weights) EXPECT_LT(norm(w), 1e-10);
  const auto probe = test_util::random_points(rng, 20);
  for (const auto& p : probe) EXPECT_LT(distance(tps.apply(p), a.apply(p)), 1e-10);
}

TEST(Tps, DuplicateSourcesAreSingular) {
  const std::vector<Point2> src{{0, 0}, {0.5, 0}, {0, 0.5}, {0, 0}};
  EXPECT_THROW(tps_solve(src, src, 0.0), SingularFitError);
  EXPECT_THROW(tps_solve(src, src, -1.0), std::invalid_argument);
  const std::vector<Point2> line{{0, 0}, {0.5, 0}, {1, 0}};
  EXPECT_THROW(tps_solve(line, line, 0.0), SingularFitError);
}

TEST(Tps, RegularizationSmoothsWithoutBreakingAffine) {
  std::mt19937_64 rng(7);
  const auto src = test_util::spread_points(rng, 12);
  const auto dst = test_util::random_points(rng, 12);
  const auto exact = tps_solve(src, dst, 0.0);
  const auto smooth = tps_solve(src, dst, 10.0);
  EXPECT_LT(max_err(tps_eval(exact, src), dst), 1e-9);
  EXPECT_GT(max_err(tps_eval(smooth, src), dst), 1e-3);
}

TEST(StnParams, ScaledLatticeEqualsAffineGrid) {
  const int g = 2;
  auto lat = regular_lattice(g);
  for (auto& p : lat) p = 0.5 * p;
  const auto tps = tps_from_stn_params(lat, g, 0.0);
  const auto grid = make_grid(tps, 9, 9);
  const auto ref = make_grid(AffineTransform{{0.5, 0, 0, 0, 0.5, 0}}, 9, 9);
  EXPECT_LT(max_err(grid.coords, ref.coords), 1e-9);
}

TEST(StnParams, SinglePerturbationPeaksAtItsLatticePoint) {
  const int g = 4;
  auto src = regular_lattice(g);
  src[5] = src[5] + Point2{0.1, -0.05};
  const auto tps = tps_from_stn_params(src, g, 0.0);
  const auto lat = regular_lattice(g);
  double best = 0;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < lat.size(); ++k) {
    const double d = distance(tps.apply(lat[k]), lat[k]);
    if (d > best) {
      best = d;
      arg = k;
    }
  }
  EXPECT_EQ(arg, 5u);
  EXPECT_NEAR(best, norm(Point2{0.1, -0.05}), 1e-9);
  EXPECT_THROW(tps_from_stn_params(src, 3), std::invalid_argument);
}

TEST(MakeGrid, IdentityTransformGivesLattice) {
  for (const Transform t : {Transform{AffineTransform::identity()}, Transform{ProjectiveTransform::identity()},
                            Transform{tps_from_stn_params(regular_lattice(4), 4)}}) {
    const auto g = make_grid(t, 8, 8);
    const auto lat = pixel_lattice(8, 8);
    EXPECT_LT(max_err(g.coords, lat), 1e-12);
  }
  EXPECT_EQ(make_grid(AffineTransform::identity(), 8, 8).coords, pixel_lattice(8, 8));
  EXPECT_EQ(make_grid(tps_from_stn_params(regular_lattice(4), 4), 8, 8).coords, pixel_lattice(8, 8));
}

TEST(InvertWarp, RoundTripsSmoothWarps) {
  std::mt19937_64 rng(8);
  auto src = regular_lattice(4);
  std::normal_distribution<double> n(0.0, 0.03);
  for (auto& p : src) p = p + Point2{n(rng), n(rng)};
  const auto tps = tps_from_stn_params(src, 4);
  const auto grid = make_grid(tps, 32, 32, 1.5);
  for (const auto& u : test_util::random_points(rng, 50, -0.9, 0.9)) {
    const Point2 x = grid.map(u);
    EXPECT_LT(distance(invert_warp(grid, x), u), 1e-9);
  }
  EXPECT_THROW(invert_warp(grid, {50.0, 50.0}), NotInvertibleError);
  EXPECT_THROW(invert_warp(grid, {NAN, 0.0}), NotInvertibleError);
}

TEST(LuDecomposition, SolvesAndInverts) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t n = 7;
  std::vector<double> a(n * n);
  for (auto& v : a) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 3.0;
  const linalg::LuDecomposition lu(a, n);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  std::vector<double> b(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) b[i] += a[i * n + j] * x[j];
  const auto sol = lu.solve(b);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(sol[i], x[i], 1e-12);
  const auto inv = lu.inverse();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += a[i * n + k] * inv[k * n + j];
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12);
    }
  EXPECT_THROW(linalg::LuDecomposition({1, 2, 2, 4}, 2), SingularFitError);
}
