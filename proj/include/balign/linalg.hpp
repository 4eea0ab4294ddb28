#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace balign::linalg {

/// Dense row-major square matrix factorised as P·A = L·U with partial pivoting.
class LuDecomposition {
 public:
  /// Throws SingularFitError when a pivot falls below `rel_tol` times the
  /// largest absolute entry of the input.
  LuDecomposition(std::vector<double> matrix, std::size_t n, double rel_tol = 1e-13);

  std::size_t size() const { return n_; }

  /// Solves A·x = b in place.
  void solve_in_place(std::span<double> b) const;
  std::vector<double> solve(std::span<const double> b) const;

  /// Explicit inverse, row-major.
  std::vector<double> inverse() const;

 private:
  std::vector<double> lu_;
  std::vector<std::size_t> perm_;
  std::size_t n_;
};

}  // namespace balign::linalg
