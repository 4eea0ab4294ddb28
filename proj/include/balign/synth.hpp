#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "balign/geometry.hpp"
#include "balign/sampler.hpp"

namespace balign {

/// Landmark layout: 0, 1 eyes; 2 nose; 3, 4 mouth corners; 5.. jaw contour.
struct IdentitySpec {
  int id = 0;
  LandmarkSet base_landmarks;
  std::vector<double> blob_intensities;  // in [0.3, 1]
  std::vector<std::pair<int, int>> edge_set;
};

struct Pose {
  double rotation_deg = 0.0;
  double scale = 1.0;
  Point2 translation;
  double tilt_x = 0.0;  // projective terms: p / (1 + tilt_x·x + tilt_y·y)
  double tilt_y = 0.0;

  Point2 apply(Point2 p) const;
};

struct SampleRecord {
  int identity = 0;
  Pose pose;
  Image image;
  LandmarkSet landmarks;
  double yaw_proxy = 0.0;  // |rotation| in degrees
};

/// Raised when a pose pushes a landmark outside [-0.95, 0.95]²; callers draw
/// a new pose.
class PoseRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shared mean layout for `landmark_count` points (>= 6).
std::vector<Point2> mean_face_layout(int landmark_count);

/// Mean layout + per-identity shape perturbation (std 0.06 per coordinate:
/// a smooth quadratic field plus independent per-landmark offsets), clamped
/// to [-0.7, 0.7]². Deterministic in seed.
std::vector<IdentitySpec> gen_identities(int count, int landmark_count, std::uint64_t seed);

/// Renders blobs and edges at the posed landmarks, adds noise drawn from
/// noise_seed (std noise_std) and clamps to [-1, 1]. Throws PoseRejected or
/// std::invalid_argument for out-of-range pose parameters. With blob_jitter
/// j > 0 each blob's sigmas are scaled by an independent factor in [1 - j, 1 + j]
/// and its axis turned by up to j radians, drawn from the noise stream; this
/// per-sample nuisance is independent of identity.
SampleRecord render_sample(const IdentitySpec& spec, const Pose& pose, int image_size, std::uint64_t noise_seed,
                           double noise_std = 0.02, double blob_jitter = 0.0);

struct DatasetConfig {
  int identities = 100;
  int train_per_id = 20;
  int test_per_id = 6;
  int landmark_count = 16;
  int image_size = 32;
  double max_rotation_deg = 60.0;
  double gallery_max_rotation_deg = 5.0;
  double min_scale = 0.85;
  double max_scale = 1.15;
  double max_translation = 0.08;
  double max_tilt = 0.05;
  double noise_std = 0.02;
  /// Per-sample, per-blob shape nuisance (see render_sample).
  double blob_jitter = 0.6;
  std::uint64_t seed = 1;
};

/// Reads the fields present in `j`, keeping defaults for the rest.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
nlohmann::json dataset_config_to_json(const DatasetConfig& c);

/// Writes images/*.pgm, landmarks/*.json and manifest.json under out_dir and
/// returns the manifest path. Per identity the first test sample is a
/// near-frontal gallery image; the others are probes.
std::filesystem::path gen_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

enum class Split { Train, Gallery, Probe };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetRecord {
  std::string path;
  std::string landmarks_path;
  int identity = 0;
  Split split = Split::Train;
  double yaw_proxy = 0.0;
  Image image;
  LandmarkSet landmarks;
};

struct Dataset {
  std::uint64_t seed = 0;
  int landmark_count = 0;
  std::vector<DatasetRecord> records;

  int identity_count() const;
  std::vector<const DatasetRecord*> split(Split s) const;
};

/// Loads the manifest and every referenced file; errors carry the offending path.
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace balign
