#pragma once

#include <stdexcept>
#include <string>

namespace balign {

/// Least-squares or interpolation system has no unique solution.
class SingularFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point could not be pulled back through a warp grid.
class NotInvertibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that make a metric or loss undefined (zero norms, empty selections).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong state (e.g. optimizer step without gradients).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace balign
