#pragma once

#include <span>

#include "balign/nn/tensor.hpp"

namespace balign::nn {

/// Additive-margin softmax: logits s·(cos θ_j − m·[j == y]) over
/// unit-normalised embeddings and class weights.
struct AmSoftmaxConfig {
  double margin = 0.35;
  double scale = 64.0;
  int class_count = 0;

  /// Throws std::invalid_argument unless 0 <= margin < 1 and scale > 0.
  void validate() const;
};

/// embeddings [B, D], class_weights [K, D]. Returns the batch-mean loss.
/// Throws DegenerateInputError for zero-norm rows.
Tensor am_softmax_loss(const Tensor& embeddings, const Tensor& class_weights, std::span<const int> labels,
                       const AmSoftmaxConfig& cfg);

}  // namespace balign::nn
