#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/geometry.hpp"
#include "balign/sampler.hpp"

namespace balign {

/// Output-space landmark configuration the warps pull faces toward.
struct Template {
  std::vector<Point2> points;
  bool learnable = false;

  /// Throws std::invalid_argument unless every point is finite and inside
  /// [-1, 1]² and, when expected_count > 0, there are that many points.
  void validate(std::size_t expected_count = 0) const;
};

nlohmann::json template_to_json(const Template& t);
Template template_from_json(const nlohmann::json& j);
void write_template(const std::filesystem::path& path, const Template& t);
Template read_template(const std::filesystem::path& path);

/// Free per-landmark parameters; effective weight is sigmoid(raw).
struct AlignWeights {
  std::vector<double> raw;

  static AlignWeights constant(std::size_t count, double alpha);
  std::vector<double> effective() const;
};

struct LossReport {
  double l_fr = 0.0;
  double l_lmk = 0.0;
  double l_reg = 0.0;
  double l_align = 0.0;
  double total = 0.0;
  double lambda = 0.0;

  /// Throws NumericError naming the first non-finite or negative term.
  void validate() const;
};

/// l_align = l_lmk + l_reg, total = l_fr + lambda·l_align. lambda must be >= 0.
LossReport total_loss(double l_fr, double l_lmk, double l_reg, double lambda);

enum class MethodKind { None, Affine2D, StnProj, StnTps, FullAlign };
enum class ApplyAt { Input, FeatureMap };

std::string to_string(ApplyAt at);
ApplyAt apply_at_from_string(const std::string& s);

struct AlignmentMethod {
  MethodKind kind = MethodKind::None;
  int grid_size = 4;  // StnTps only

  /// none, affine2d, stn-proj, stn-tps-<G> (G >= 2), full-align.
  static AlignmentMethod parse(const std::string& name);
  std::string name() const;
  bool learned() const { return kind == MethodKind::StnProj || kind == MethodKind::StnTps; }
  friend bool operator==(const AlignmentMethod&, const AlignmentMethod&) = default;
};

/// Mean per-landmark spread of the deformed sets around their per-landmark
/// mean, divided by the mean inter-pupil distance of the same sets.
/// Throws std::invalid_argument for fewer than 2 sets or mismatched sets and
/// DegenerateInputError when the normalizer is <= 1e-9.
double anme(std::span<const LandmarkSet> deformed);

/// Backward map evaluated at each template point.
std::vector<Point2> warp_template(const Template& t, const Transform& backward_map);

/// (1 / (N |S|)) Σ_i Σ_s α_s sqrt(|warped_is - gt_is|² + eps²).
double lmk_loss(std::span<const std::vector<Point2>> warped, std::span<const LandmarkSet> gt,
                const AlignWeights& weights, double eps = 1e-8);
/// Σ_s (1 - α_s)².
double reg_loss(const AlignWeights& weights);

enum class TemplateMode { FivePoint, Dense };

/// Landmark indices used by the five-point template: eyes, nose, mouth corners.
inline constexpr std::size_t kFivePointIndices[5] = {0, 1, 2, 3, 4};

/// |yaw| bound (degrees) for a sample to count as frontal.
inline constexpr double kFrontalYaw = 15.0;

struct PosedLandmarks {
  LandmarkSet landmarks;
  double yaw = 0.0;
};

/// Per-landmark mean over frontal samples (|yaw| <= 15). Throws
/// DegenerateInputError when there are none.
Template compute_fixed_template(std::span<const PosedLandmarks> samples, TemplateMode mode);

/// Inputs the alignment methods need beyond the image itself.
struct AlignContext {
  const Template* five_point = nullptr;  // Affine2D
  const Template* dense = nullptr;      // FullAlign
  /// Learned backward map for the STN methods.
  std::function<Transform(const Image&)> predict;
  /// Stage-0 feature extractor; when set the warp is applied to its output.
  std::function<Image(const Image&)> feature_map;
  /// Extent of the output lattice used to pull landmarks back through
  /// grid-based warps, so points pushed slightly off-frame still invert.
  double inversion_extent = 1.5;
};

struct AlignedSample {
  Image warped;
  LandmarkSet deformed;
  Transform backward_map;
};

/// Backward map a method applies to one annotated image.
Transform method_transform(const AlignmentMethod& method, const Image& image, const LandmarkSet& gt,
                           const AlignContext& ctx);

/// Landmarks after warping. Affine maps are inverted analytically, FullAlign
/// lands on the dense template exactly, other maps go through invert_warp.
LandmarkSet deform_landmarks(const AlignmentMethod& method, const Transform& backward_map, const LandmarkSet& gt,
                             const AlignContext& ctx);

AlignedSample apply_method(const AlignmentMethod& method, const Image& image, const LandmarkSet& gt,
                           const AlignContext& ctx);

}  // namespace balign
