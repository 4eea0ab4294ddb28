#pragma once

#include <filesystem>
#include <optional>

#include "balign/align.hpp"
#include "balign/geometry.hpp"
#include "balign/sampler.hpp"

namespace balign::bench {

struct WarpDemoOptions {
  std::filesystem::path image;
  std::filesystem::path landmarks;
  AlignmentMethod method;
  std::filesystem::path out;  // warped PGM; the overlay goes next to it as .svg
  /// Dataset manifest supplying the five-point and dense templates
  /// (affine2d / full-align).
  std::optional<std::filesystem::path> manifest;
  /// Trained checkpoint supplying the LocNet (STN methods).
  std::optional<std::filesystem::path> checkpoint;
};

struct WarpDemoResult {
  Image warped;
  LandmarkSet original;
  LandmarkSet deformed;
  std::optional<Template> target;  // template the method aligns to, when it has one
  std::filesystem::path svg_path;
};

/// Warps one annotated image with the chosen method and writes the warped
/// PGM plus an SVG with the input (original landmarks, sampling grid) beside
/// the output (deformed landmarks, template).
WarpDemoResult run_warp_demo(const WarpDemoOptions& opts);

}  // namespace balign::bench
