#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "balign/errors.hpp"
#include "balign/nn/am_softmax.hpp"
#include "balign/nn/ops.hpp"

using namespace balign;
using namespace balign::nn;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool grad = true) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

/// Direct evaluation of the additive-margin softmax loss.
double reference_loss(const Tensor& e, const Tensor& w, const std::vector<int>& labels, double m, double s) {
  const int b = e.dim(0), d = e.dim(1), k = w.dim(0);
  double total = 0;
  for (int i = 0; i < b; ++i) {
    std::vector<double> logits(k);
    double ne = 0;
    for (int t = 0; t < d; ++t) ne += e.values()[i * d + t] * e.values()[i * d + t];
    for (int j = 0; j < k; ++j) {
      double dot = 0, nw = 0;
      for (int t = 0; t < d; ++t) {
        dot += e.values()[i * d + t] * w.values()[j * d + t];
        nw += w.values()[j * d + t] * w.values()[j * d + t];
      }
      logits[j] = s * (dot / std::sqrt(ne * nw) - (j == labels[i] ? m : 0.0));
    }
    double z = 0;
    for (double l : logits) z += std::exp(l);
    total += std::log(z) - logits[labels[i]];
  }
  return total / b;
}

}  // namespace

TEST(AmSoftmax, MatchesReference) {
  std::mt19937_64 rng(1);
  const Tensor e = random_tensor(rng, {5, 4}), w = random_tensor(rng, {3, 4});
  const std::vector<int> labels{0, 2, 1, 1, 0};
  for (double s : {1.0, 16.0, 64.0}) {
    AmSoftmaxConfig cfg{0.35, s, 3};
    EXPECT_NEAR(am_softmax_loss(e, w, labels, cfg).item(), reference_loss(e, w, labels, 0.35, s), 1e-10);
  }
}

TEST(AmSoftmax, ZeroMarginUnitScaleIsPlainSoftmaxOnCosines) {
  std::mt19937_64 rng(2);
  const Tensor e = random_tensor(rng, {3, 2}), w = random_tensor(rng, {4, 2});
  const std::vector<int> labels{3, 0, 1};
  EXPECT_NEAR(am_softmax_loss(e, w, labels, {0.0, 1.0, 4}).item(), reference_loss(e, w, labels, 0.0, 1.0), 1e-12);
}

TEST(AmSoftmax, MarginRaisesLoss) {
  std::mt19937_64 rng(3);
  const Tensor e = random_tensor(rng, {6, 5}), w = random_tensor(rng, {4, 5});
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  const double a = am_softmax_loss(e, w, labels, {0.0, 16.0, 4}).item();
  const double b = am_softmax_loss(e, w, labels, {0.35, 16.0, 4}).item();
  EXPECT_GT(b, a);
}

TEST(AmSoftmax, InvariantToEmbeddingScale) {
  std::mt19937_64 rng(4);
  Tensor e = random_tensor(rng, {3, 4}), w = random_tensor(rng, {2, 4});
  const std::vector<int> labels{0, 1, 1};
  const double a = am_softmax_loss(e, w, labels, {0.35, 16.0, 2}).item();
  const double b = am_softmax_loss(scale(e, 7.5), w, labels, {0.35, 16.0, 2}).item();
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(AmSoftmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor e = random_tensor(rng, {4, 3}), w = random_tensor(rng, {3, 3});
  const std::vector<int> labels{2, 0, 1, 2};
  const AmSoftmaxConfig cfg{0.35, 16.0, 3};
  backward(am_softmax_loss(e, w, labels, cfg));
  const double h = 1e-5;
  for (Tensor* t : {&e, &w})
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double keep = t->values()[i];
      t->values()[i] = keep + h;
      const double fp = reference_loss(e, w, labels, 0.35, 16.0);
      t->values()[i] = keep - h;
      const double fm = reference_loss(e, w, labels, 0.35, 16.0);
      t->values()[i] = keep;
      const double num = (fp - fm) / (2 * h), ana = t->grad()[i];
      EXPECT_LT(std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6}), 1e-5);
    }
}

TEST(AmSoftmax, RejectsBadInput) {
  std::mt19937_64 rng(6);
  const Tensor e = random_tensor(rng, {2, 3}), w = random_tensor(rng, {2, 3});
  const std::vector<int> ok{0, 1};
  EXPECT_THROW(am_softmax_loss(e, w, ok, {1.0, 16.0, 2}), std::invalid_argument);
  EXPECT_THROW(am_softmax_loss(e, w, ok, {0.35, 0.0, 2}), std::invalid_argument);
  const std::vector<int> bad{0, 2};
  EXPECT_THROW(am_softmax_loss(e, w, bad, {0.35, 16.0, 2}), std::invalid_argument);
  const Tensor zero = Tensor::zeros({2, 3});
  EXPECT_THROW(am_softmax_loss(zero, w, ok, {0.35, 16.0, 2}), DegenerateInputError);
}
