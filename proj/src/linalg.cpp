#include "balign/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "balign/errors.hpp"

namespace balign::linalg {

LuDecomposition::LuDecomposition(std::vector<double> matrix, std::size_t n, double rel_tol)
    : lu_(std::move(matrix)), perm_(n), n_(n) {
  if (lu_.size() != n * n) throw std::invalid_argument("LU: matrix size mismatch");
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  double scale = 0.0;
  for (double v : lu_) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) throw SingularFitError("LU: zero matrix");
  const double tol = rel_tol * scale;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu_[k * n + k]);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double v = std::abs(lu_[r * n + k]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best <= tol) throw SingularFitError("LU: singular system (pivot " + std::to_string(best) + ")");
    if (pivot != k) {
      std::swap_ranges(lu_.begin() + k * n, lu_.begin() + (k + 1) * n, lu_.begin() + pivot * n);
      std::swap(perm_[k], perm_[pivot]);
    }
    const double inv = 1.0 / lu_[k * n + k];
    for (std::size_t r = k + 1; r < n; ++r) {
      double& f = lu_[r * n + k];
      f *= inv;
      if (f == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) lu_[r * n + c] -= f * lu_[k * n + c];
    }
  }
}

void LuDecomposition::solve_in_place(std::span<double> b) const {
  if (b.size() != n_) throw std::invalid_argument("LU: rhs size mismatch");
  std::vector<double> x(n_);
  for (std::size_t i = 0; i < n_; ++i) x[i] = b[perm_[i]];
  for (std::size_t i = 0; i < n_; ++i) {
    double s = x[i];
    for (std::size_t j = 0; j < i; ++j) s -= lu_[i * n_ + j] * x[j];
    x[i] = s;
  }
  for (std::size_t i = n_; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n_; ++j) s -= lu_[i * n_ + j] * x[j];
    x[i] = s / lu_[i * n_ + i];
  }
  std::copy(x.begin(), x.end(), b.begin());
}

std::vector<double> LuDecomposition::solve(std::span<const double> b) const {
  std::vector<double> x(b.begin(), b.end());
  solve_in_place(x);
  return x;
}

std::vector<double> LuDecomposition::inverse() const {
  std::vector<double> inv(n_ * n_);
  std::vector<double> col(n_);
  for (std::size_t c = 0; c < n_; ++c) {
    std::fill(col.begin(), col.end(), 0.0);
    col[c] = 1.0;
    solve_in_place(col);
    for (std::size_t r = 0; r < n_; ++r) inv[r * n_ + c] = col[r];
  }
  return inv;
}

}  // namespace balign::linalg
