#pragma once

#include <random>
#include <vector>

#include "balign/geometry.hpp"

namespace balign::test_util {

inline std::vector<Point2> random_points(std::mt19937_64& rng, std::size_t n, double lo = -0.9, double hi = 0.9) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Point2> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng)};
  return pts;
}

/// Points with pairwise distance >= min_dist, so TPS systems stay well posed.
inline std::vector<Point2> spread_points(std::mt19937_64& rng, std::size_t n, double min_dist = 0.15) {
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::vector<Point2> pts;
  while (pts.size() < n) {
    const Point2 p{u(rng), u(rng)};
    bool ok = true;
    for (const auto& q : pts) ok = ok && distance(p, q) >= min_dist;
    if (ok) pts.push_back(p);
  }
  return pts;
}

}  // namespace balign::test_util
