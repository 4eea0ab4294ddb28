#pragma once

#include <vector>

#include "balign/nn/networks.hpp"

namespace balign::nn {

struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter, created on first step
};

/// v <- momentum·v + grad + weight_decay·param (decay only where enabled);
/// param <- param − lr·v; gradients are cleared. Throws StateError when a
/// parameter has no gradient and std::invalid_argument on bad hyperparameters
/// or a parameter list that changed shape between steps.
/// Scales all gradients so their joint L2 norm is at most max_norm; returns
/// the norm before scaling.
double clip_grad_norm(std::vector<NamedParam>& params, double max_norm);

void sgd_step(std::vector<NamedParam>& params, OptimizerState& state);

/// Base rate divided by 10 at 55%, 75% and 95% of the epoch budget
/// (epoch is 0-based).
double scheduled_learning_rate(double base, int epoch, int total_epochs);

}  // namespace balign::nn
