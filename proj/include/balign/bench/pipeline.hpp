#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "balign/align.hpp"
#include "balign/bench/config.hpp"
#include "balign/nn/checkpoint.hpp"
#include "balign/nn/networks.hpp"
#include "balign/nn/warp_ops.hpp"

namespace balign::bench {

/// LocNet (STN methods only), RecNet, AM-Softmax class weights, landmark
/// weights α and template T, wired for one alignment method and apply-at mode.
class Model {
 public:
  Model(const ExperimentConfig& cfg, int class_count, int landmark_count, int image_size, const Template& init_template);

  struct Output {
    nn::Tensor embeddings;        // [B, D]
    nn::Tensor theta;             // LocNet output, STN methods only
    nn::Tensor warped_template;   // [B, S, 2], STN methods only
  };

  /// images [B, 1, H, W]; fixed_grid [B, H, W, 2] is required for the
  /// landmark-driven methods and ignored otherwise.
  Output forward(const nn::Tensor& images, const nn::Tensor& fixed_grid, bool training, bool want_template);

  /// Backward map predicted for sample `index` of a forward pass.
  Transform predicted_transform(const nn::Tensor& theta, int index) const;
  /// Backward map the LocNet predicts for one single-channel image (eval mode).
  Transform predict(const Image& image);

  const ExperimentConfig& config() const { return cfg_; }
  int image_size() const { return image_size_; }

  /// Parameters handed to the optimizer. Landmark weights and template join
  /// only when the alignment loss is active and they are learnable.
  std::vector<nn::NamedParam> recognition_parameters();
  std::vector<nn::NamedParam> locnet_parameters();
  std::vector<nn::NamedParam> alignment_parameters();

  nn::Tensor& class_weights() { return class_weights_; }
  nn::Tensor& alpha_raw() { return alpha_raw_; }
  nn::Tensor& template_points() { return template_; }
  Template current_template() const;
  AlignWeights current_weights() const;
  void clamp_template();

  std::size_t parameter_count();

  nn::Checkpoint to_checkpoint(const nlohmann::json& config);
  /// Throws std::runtime_error when names or shapes disagree.
  void load_checkpoint(const nn::Checkpoint& ck);

 private:
  std::vector<std::pair<std::string, nn::BatchNormState*>> batch_norm_states();

  ExperimentConfig cfg_;
  int image_size_;
  nn::Network recnet_;
  std::optional<nn::Network> locnet_;
  std::unique_ptr<nn::TpsGridGenerator> tps_;
  nn::Tensor class_weights_;
  nn::Tensor alpha_raw_;
  nn::Tensor template_;
};

/// Rebuilds the model a checkpoint was written from, using the config stored
/// in it. Throws std::runtime_error on missing or mis-shaped tensors.
Model model_from_checkpoint(const nn::Checkpoint& ck, int image_size);

/// Grid of a landmark-driven method (none/affine2d/full-align) for one sample,
/// flattened [H * W * 2].
std::vector<double> fixed_method_grid(const AlignmentMethod& method, const LandmarkSet& gt, const AlignContext& ctx,
                                      int image_size);

}  // namespace balign::bench
