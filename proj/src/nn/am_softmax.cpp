#include "balign/nn/am_softmax.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "balign/errors.hpp"

namespace balign::nn {

void AmSoftmaxConfig::validate() const {
  if (!(margin >= 0.0 && margin < 1.0)) throw std::invalid_argument("AM-Softmax margin must lie in [0, 1)");
  if (!(scale > 0.0)) throw std::invalid_argument("AM-Softmax scale must be positive");
}

namespace {

std::vector<double> row_norms(std::span<const double> m, int rows, int cols, const char* what) {
  std::vector<double> n(rows);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += m[static_cast<std::size_t>(r) * cols + c] * m[static_cast<std::size_t>(r) * cols + c];
    n[r] = std::sqrt(s);
    if (!(n[r] > 1e-12)) throw DegenerateInputError(std::string("am_softmax_loss: zero-norm ") + what + " row " + std::to_string(r));
  }
  return n;
}

}  // namespace

Tensor am_softmax_loss(const Tensor& embeddings, const Tensor& class_weights, std::span<const int> labels,
                       const AmSoftmaxConfig& cfg) {
  cfg.validate();
  if (embeddings.rank() != 2 || class_weights.rank() != 2 || embeddings.dim(1) != class_weights.dim(1))
    throw std::invalid_argument("am_softmax_loss: shapes " + shape_str(embeddings.shape()) + " and " +
                                shape_str(class_weights.shape()));
  const int b = embeddings.dim(0), d = embeddings.dim(1), k = class_weights.dim(0);
  if (labels.size() != static_cast<std::size_t>(b)) throw std::invalid_argument("am_softmax_loss: label count");
  for (int y : labels)
    if (y < 0 || y >= k) throw std::invalid_argument("am_softmax_loss: label out of range");

  const auto ev = embeddings.values();
  const auto wv = class_weights.values();
  const auto en = row_norms(ev, b, d, "embedding");
  const auto wn = row_norms(wv, k, d, "class weight");

  auto cosines = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * k);
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * k);
  double total = 0.0;
  std::vector<double> logits(k);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < k; ++j) {
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += ev[static_cast<std::size_t>(i) * d + c] * wv[static_cast<std::size_t>(j) * d + c];
      const double cs = dot / (en[i] * wn[j]);
      (*cosines)[static_cast<std::size_t>(i) * k + j] = cs;
      logits[j] = cfg.scale * (cs - (j == labels[i] ? cfg.margin : 0.0));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(logits[j] - mx);
    for (int j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(i) * k + j] = std::exp(logits[j] - mx) / z;
    total += mx + std::log(z) - logits[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::make_result(
      {}, {total / b}, {embeddings, class_weights},
      [=, lab = std::move(lab)](Node& self) {
        const auto& e = self.inputs[0]->value;
        const auto& w = self.inputs[1]->value;
        double* ge = grad_target(self.inputs[0]);
        double* gw = grad_target(self.inputs[1]);
        // dL/dcos_ij = s (p_ij - [j == y_i]) / B
        std::vector<double> dcos(static_cast<std::size_t>(b) * k);
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < k; ++j)
            dcos[static_cast<std::size_t>(i) * k + j] =
                self.grad[0] * cfg.scale * ((*probs)[static_cast<std::size_t>(i) * k + j] - (j == lab[i] ? 1.0 : 0.0)) / b;
        // cos = <e, w> / (|e||w|): d cos / d e = w / (|e||w|) - cos e / |e|^2
        if (ge)
          for (int i = 0; i < b; ++i)
            for (int j = 0; j < k; ++j) {
              const double g = dcos[static_cast<std::size_t>(i) * k + j];
              if (g == 0.0) continue;
              const double cs = (*cosines)[static_cast<std::size_t>(i) * k + j];
              const double a = g / (en[i] * wn[j]);
              const double c2 = g * cs / (en[i] * en[i]);
              for (int c = 0; c < d; ++c)
                ge[static_cast<std::size_t>(i) * d + c] +=
                    a * w[static_cast<std::size_t>(j) * d + c] - c2 * e[static_cast<std::size_t>(i) * d + c];
            }
        if (gw)
          for (int i = 0; i < b; ++i)
            for (int j = 0; j < k; ++j) {
              const double g = dcos[static_cast<std::size_t>(i) * k + j];
              if (g == 0.0) continue;
              const double cs = (*cosines)[static_cast<std::size_t>(i) * k + j];
              const double a = g / (en[i] * wn[j]);
              const double c2 = g * cs / (wn[j] * wn[j]);
              for (int c = 0; c < d; ++c)
                gw[static_cast<std::size_t>(j) * d + c] +=
                    a * e[static_cast<std::size_t>(i) * d + c] - c2 * w[static_cast<std::size_t>(j) * d + c];
            }
      });
}

}  // namespace balign::nn
