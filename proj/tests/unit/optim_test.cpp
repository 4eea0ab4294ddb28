#include <gtest/gtest.h>

#include <cmath>

#include "balign/errors.hpp"
#include "balign/nn/ops.hpp"
#include "balign/nn/optim.hpp"

using namespace balign;
using namespace balign::nn;

TEST(Sgd, MomentumAndDecayUpdate) {
  std::vector<NamedParam> params{{"w", Tensor({2}, {1.0, -2.0}, true)}, {"b", Tensor({1}, {0.5}, true), false}};
  OptimizerState st{0.1, 0.9, 0.01, {}};
  for (auto& p : params) {
    for (auto& g : p.tensor.node()->grad_buffer()) g = 1.0;
  }
  sgd_step(params, st);
  // v = g + wd·w; w -= lr·v.
  EXPECT_NEAR(params[0].tensor.values()[0], 1.0 - 0.1 * (1.0 + 0.01), 1e-15);
  EXPECT_NEAR(params[0].tensor.values()[1], -2.0 - 0.1 * (1.0 - 0.02), 1e-15);
  EXPECT_NEAR(params[1].tensor.values()[0], 0.5 - 0.1, 1e-15);
  EXPECT_FALSE(params[0].tensor.has_grad());

  const double w1 = params[1].tensor.values()[0];
  params[1].tensor.node()->grad_buffer()[0] = 1.0;
  params[0].tensor.node()->grad_buffer();
  sgd_step(params, st);
  EXPECT_NEAR(params[1].tensor.values()[0], w1 - 0.1 * (0.9 * 1.0 + 1.0), 1e-15);
}

TEST(Sgd, MissingGradientIsStateError) {
  std::vector<NamedParam> params{{"w", Tensor({1}, {1.0}, true)}};
  OptimizerState st;
  EXPECT_THROW(sgd_step(params, st), StateError);
}

TEST(Sgd, RejectsBadHyperparameters) {
  std::vector<NamedParam> params{{"w", Tensor({1}, {1.0}, true)}};
  params[0].tensor.node()->grad_buffer();
  OptimizerState st{-1.0, 0.9, 0.0, {}};
  EXPECT_THROW(sgd_step(params, st), std::invalid_argument);
}

TEST(Sgd, MinimisesQuadratic) {
  std::vector<NamedParam> params{{"w", Tensor({3}, {3.0, -1.0, 2.0}, true), false}};
  OptimizerState st{0.05, 0.9, 0.0, {}};
  for (int i = 0; i < 300; ++i) {
    backward(sum(mul(params[0].tensor, params[0].tensor)));
    sgd_step(params, st);
  }
  for (double v : params[0].tensor.values()) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(ClipGradNorm, ScalesOnlyAboveCap) {
  std::vector<NamedParam> params{{"a", Tensor({2}, {0, 0}, true)}, {"b", Tensor({1}, {0}, true)}};
  for (auto& p : params) p.tensor.node()->grad_buffer();
  params[0].tensor.grad()[0] = 3.0;
  params[1].tensor.grad()[0] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
  EXPECT_EQ(params[0].tensor.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(params[0].tensor.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(params[1].tensor.grad()[0], 0.8, 1e-15);
  EXPECT_THROW(clip_grad_norm(params, 0.0), std::invalid_argument);
}

TEST(Schedule, StepsAtFractionsOfBudget) {
  EXPECT_EQ(scheduled_learning_rate(0.1, 0, 20), 0.1);
  EXPECT_EQ(scheduled_learning_rate(0.1, 10, 20), 0.1);
  EXPECT_NEAR(scheduled_learning_rate(0.1, 11, 20), 0.01, 1e-15);
  EXPECT_NEAR(scheduled_learning_rate(0.1, 15, 20), 0.001, 1e-15);
  EXPECT_NEAR(scheduled_learning_rate(0.1, 19, 20), 0.0001, 1e-15);
  for (int e = 1; e < 20; ++e) EXPECT_LE(scheduled_learning_rate(0.1, e, 20), scheduled_learning_rate(0.1, e - 1, 20));
}
