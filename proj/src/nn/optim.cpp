#include "balign/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "balign/errors.hpp"

namespace balign::nn {

double clip_grad_norm(std::vector<NamedParam>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.tensor.grad()) g *= f;
  }
  return norm;
}

void sgd_step(std::vector<NamedParam>& params, OptimizerState& state) {
  if (state.learning_rate < 0 || state.momentum < 0 || state.weight_decay < 0)
    throw std::invalid_argument("sgd_step: hyperparameters must be non-negative");
  for (const auto& p : params)
    if (!p.tensor.has_grad()) throw StateError("sgd_step: parameter '" + p.name + "' has no gradient");
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw std::invalid_argument("sgd_step: parameter list changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    auto& v = state.velocity[i];
    if (v.size() != t.numel()) throw std::invalid_argument("sgd_step: velocity shape mismatch for " + params[i].name);
    auto val = t.values();
    const auto g = t.grad();
    const double wd = params[i].decay ? state.weight_decay : 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j] + wd * val[j];
      val[j] -= state.learning_rate * v[j];
    }
    t.clear_grad();
  }
}

double scheduled_learning_rate(double base, int epoch, int total_epochs) {
  double lr = base;
  for (double frac : {0.55, 0.75, 0.95})
    if (epoch >= static_cast<int>(std::floor(frac * total_epochs))) lr *= 0.1;
  return lr;
}

}  // namespace balign::nn
