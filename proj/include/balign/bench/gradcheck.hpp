#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace balign::bench {

struct GradCheckComponent {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t entries = 0;  // partial derivatives compared

  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckComponent> components;

  bool passed() const;
  /// One line per component: name, max relative error, tolerance, PASS/FAIL.
  void print(std::ostream& os) const;
};

/// Central finite differences (h = 1e-5) against analytic gradients for the
/// sampler, TPS and projective warps, landmark losses, AM-Softmax and the
/// miniature end-to-end pipeline (16x16 images, grid 2, embedding 8, 3 classes).
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport run_grad_check(std::uint64_t seed);

}  // namespace balign::bench
