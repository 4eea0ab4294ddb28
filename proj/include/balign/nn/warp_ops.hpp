#pragma once

#include <memory>
#include <vector>

#include "balign/geometry.hpp"
#include "balign/nn/tensor.hpp"

namespace balign::nn {

/// Differentiable TPS grid generator for a fixed regular lattice of
/// grid_size x grid_size control points in output space. Because the
/// lattice is fixed, the warp is linear in the predicted source points:
/// f(q) = q + b(q) · offsets with b(q) a row of the inverted TPS system.
class TpsGridGenerator {
 public:
  TpsGridGenerator(int grid_size, int out_height, int out_width, double regularization = kStnTpsRegularization);

  int grid_size() const { return grid_size_; }
  int control_count() const { return grid_size_ * grid_size_; }
  int out_height() const { return out_h_; }
  int out_width() const { return out_w_; }
  const std::vector<Point2>& lattice() const { return lattice_; }

  /// offsets: [N, G*G, 2] (predicted source = lattice + offsets) -> [N, H, W, 2].
  Tensor grid(const Tensor& offsets) const;

  /// W(T; offsets) at template points T: [S, 2] -> [N, S, 2]; differentiable in
  /// both offsets and the template.
  Tensor points(const Tensor& offsets, const Tensor& template_points) const;

  /// Basis row b(q) (length G*G) and its derivatives with respect to q.
  void basis(Point2 q, double* row, double* d_row_dx, double* d_row_dy) const;

 private:
  int grid_size_;
  int out_h_, out_w_;
  std::vector<Point2> lattice_;
  std::vector<double> inverse_cols_;  // (G*G + 3) x (G*G), row-major
  std::shared_ptr<std::vector<double>> grid_basis_;  // (H*W) x (G*G), row-major
  std::vector<Point2> base_grid_;
};

/// Homography offsets from identity, [N, 8] (h22 fixed to 1) -> [N, H, W, 2].
Tensor projective_grid(const Tensor& params, int out_height, int out_width);
/// Homography applied to template points [S, 2] -> [N, S, 2].
Tensor projective_points(const Tensor& params, const Tensor& template_points);

/// Backward-mapping bilinear sampler: x [N, C, H, W], grid [N, Ho, Wo, 2].
Tensor grid_sample(const Tensor& x, const Tensor& grid);

/// (1 / (N |S|)) Σ_i Σ_s sigmoid(raw_s) · sqrt(|pred - gt|² + eps²).
/// pred: [N, S, 2], gt: N * S * 2 constants, raw_weights: [S].
Tensor landmark_loss(const Tensor& pred, const std::vector<double>& gt, const Tensor& raw_weights,
                     double eps = 1e-8);

/// Σ_s (1 - sigmoid(raw_s))².
Tensor weight_regularizer(const Tensor& raw_weights);

/// Converts a [H, W, 2] slice of a grid tensor into a WarpGrid.
WarpGrid to_warp_grid(const Tensor& grid, int index);

}  // namespace balign::nn
