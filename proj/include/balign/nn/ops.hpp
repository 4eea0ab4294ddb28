#pragma once

#include <vector>

#include "balign/nn/tensor.hpp"

namespace balign::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// x: [N, D], weight: [O, D], bias: [O] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x: [N, C, H, W], weight: [O, C, k, k]; zero padding `pad`.
Tensor conv2d(const Tensor& x, const Tensor& weight, int stride, int pad);

/// [N, C, H, W] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

/// Per-channel normalisation of [N, C] or [N, C, H, W]. In training mode
/// uses biased batch statistics and updates the running estimates
/// (running = momentum * running + (1 - momentum) * batch).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training);

}  // namespace balign::nn
