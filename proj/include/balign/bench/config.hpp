#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/align.hpp"

namespace balign::bench {

enum class TemplateSource { Fixed, FixedFromLearned, Learnable };
enum class WeightsMode { Fixed, Learnable };

std::string to_string(TemplateSource t);
TemplateSource template_source_from_string(const std::string& s);
std::string to_string(WeightsMode w);
WeightsMode weights_mode_from_string(const std::string& s);

struct ExperimentConfig {
  std::string manifest;  // dataset manifest.json
  AlignmentMethod method{MethodKind::StnTps, 4};
  ApplyAt apply_at = ApplyAt::FeatureMap;
  double lambda = 3.0;
  TemplateSource template_source = TemplateSource::Learnable;
  std::string template_path;  // FixedFromLearned only
  WeightsMode weights_mode = WeightsMode::Learnable;
  double fixed_alpha = 0.5;

  int epochs = 24;
  int batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Multiplier on the learning rate for localisation-network parameters.
  double locnet_lr_scale = 0.02;
  /// Global L2 norm cap on localisation-network gradients per step; 0 disables.
  double locnet_clip_norm = 5.0;

  int embedding_dim = 64;
  std::vector<int> recnet_channels{8, 16, 32, 64};
  bool residual = false;
  double am_margin = 0.35;
  double am_scale = 16.0;

  std::uint64_t seed = 7;
  std::vector<std::uint64_t> seeds{7, 8, 9};  // multi-seed commands
  /// When false the alignment terms are never built (reference pipeline for
  /// the lambda = 0 equivalence check).
  bool alignment_terms = true;
  bool record_wall_clock = false;

  /// Throws std::invalid_argument on out-of-range or conflicting fields.
  void validate() const;
  bool uses_learned_alignment_terms() const { return method.learned() && alignment_terms && lambda > 0.0; }
};

/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

}  // namespace balign::bench
