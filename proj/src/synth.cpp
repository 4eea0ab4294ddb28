#include "balign/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>

#include "balign/errors.hpp"
#include "balign/format.hpp"
#include "balign/image_io.hpp"
#include "balign/landmark_io.hpp"

namespace balign {

namespace {

constexpr double kShapeStd = 0.06;  // per coordinate, smooth and local parts combined
// Share of shape variance carried by the smooth quadratic displacement field.
constexpr double kSmoothShapeShare = 0.8;
constexpr double kIntensityJitter = 0.0;
constexpr double kBlobSigmaMajor = 1.8;  // pixels, along the face's horizontal axis
constexpr double kBlobSigmaMinor = 1.2;
constexpr double kEdgeStrength = 0.35;
// Background renders at 0, the sampler's padding value, so out-of-frame samples
// look like background.
constexpr double kGain = 0.8;
constexpr double kLandmarkBound = 0.95;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double mean_intensity(int k) {
  if (k <= 1) return 0.9;
  if (k == 2) return 0.6;
  if (k <= 4) return 0.75;
  return 0.45;
}

std::vector<std::pair<int, int>> default_edges(int landmark_count) {
  std::vector<std::pair<int, int>> e{{0, 2}, {1, 2}, {3, 4}};
  for (int k = 5; k + 1 < landmark_count; ++k) e.emplace_back(k, k + 1);
  return e;
}

double segment_distance(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + t * ab);
}

/// Monomials of a quadratic displacement field evaluated at a layout point.
std::array<double, 5> smooth_features(Point2 p) { return {p.x, p.y, p.x * p.x, p.x * p.y, p.y * p.y}; }

}  // namespace

Point2 Pose::apply(Point2 p) const {
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  Point2 q{scale * (c * p.x - s * p.y) + translation.x, scale * (s * p.x + c * p.y) + translation.y};
  if (tilt_x != 0.0 || tilt_y != 0.0) {
    const double w = 1.0 + tilt_x * q.x + tilt_y * q.y;
    q = {q.x / w, q.y / w};
  }
  return q;
}

std::vector<Point2> mean_face_layout(int landmark_count) {
  if (landmark_count < 6) throw std::invalid_argument("landmark_count must be >= 6");
  std::vector<Point2> pts{{-0.2, -0.2}, {0.2, -0.2}, {0.0, 0.1}, {-0.2, 0.35}, {0.2, 0.35}};
  const int contour = landmark_count - 5;
  // Jaw arc from the right temple under the chin to the left temple.
  const double a0 = -0.3, a1 = std::numbers::pi + 0.3;
  for (int k = 0; k < contour; ++k) {
    const double a = contour == 1 ? std::numbers::pi / 2 : a0 + (a1 - a0) * k / (contour - 1);
    pts.push_back({0.5 * std::cos(a), 0.05 + 0.55 * std::sin(a)});
  }
  return pts;
}

std::vector<IdentitySpec> gen_identities(int count, int landmark_count, std::uint64_t seed) {
  if (count < 2) throw std::invalid_argument("gen_identities: count must be >= 2");
  const auto mean = mean_face_layout(landmark_count);
  // Smooth coefficients are scaled so the field's per-coordinate std over the
  // mean layout matches the smooth share of kShapeStd.
  double feature_energy = 0.0;
  for (const auto& m : mean)
    for (double f : smooth_features(m)) feature_energy += f * f;
  feature_energy /= static_cast<double>(mean.size());
  const double smooth_std = kShapeStd * std::sqrt(kSmoothShapeShare / feature_energy);
  const double local_std = kShapeStd * std::sqrt(1.0 - kSmoothShapeShare);
  std::vector<IdentitySpec> out;
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-kIntensityJitter, kIntensityJitter);
    double cx[5], cy[5];
    for (int k = 0; k < 5; ++k) cx[k] = smooth_std * unit(rng), cy[k] = smooth_std * unit(rng);
    std::vector<Point2> pts;
    for (const auto& m : mean) {
      const auto f = smooth_features(m);
      double dx = local_std * unit(rng), dy = local_std * unit(rng);
      for (int k = 0; k < 5; ++k) dx += cx[k] * f[k], dy += cy[k] * f[k];
      pts.push_back({std::clamp(m.x + dx, -0.7, 0.7), std::clamp(m.y + dy, -0.7, 0.7)});
    }
    IdentitySpec spec;
    spec.id = i;
    spec.base_landmarks = LandmarkSet(std::move(pts), {0, 1});
    for (int k = 0; k < landmark_count; ++k)
      spec.blob_intensities.push_back(std::clamp(mean_intensity(k) + jitter(rng), 0.3, 1.0));
    spec.edge_set = default_edges(landmark_count);
    out.push_back(std::move(spec));
  }
  return out;
}

SampleRecord render_sample(const IdentitySpec& spec, const Pose& pose, int image_size, std::uint64_t noise_seed,
                           double noise_std, double blob_jitter) {
  if (pose.scale < 0.5 || pose.scale > 1.5) throw std::invalid_argument("render_sample: scale outside [0.5, 1.5]");
  if (std::abs(pose.rotation_deg) > 60.0) throw std::invalid_argument("render_sample: |rotation| > 60 degrees");
  if (image_size < 2) throw std::invalid_argument("render_sample: image_size must be >= 2");
  if (!(blob_jitter >= 0.0 && blob_jitter < 1.0)) throw std::invalid_argument("render_sample: blob_jitter must lie in [0, 1)");
  std::vector<Point2> posed;
  for (const auto& p : spec.base_landmarks.points()) {
    const Point2 q = pose.apply(p);
    if (!(std::abs(q.x) <= kLandmarkBound && std::abs(q.y) <= kLandmarkBound))
      throw PoseRejected("pose pushes a landmark outside the frame");
    posed.push_back(q);
  }
  SampleRecord rec;
  rec.identity = spec.id;
  rec.pose = pose;
  rec.yaw_proxy = std::abs(pose.rotation_deg);
  rec.landmarks = LandmarkSet(posed, spec.base_landmarks.eye_indices());

  const double half = 0.5 * (image_size - 1);
  std::vector<Point2> px;
  for (const auto& q : posed) px.push_back({(q.x + 1.0) * half, (q.y + 1.0) * half});
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, noise_std);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  struct Blob {
    double ux, uy, s_major, s_minor;
  };
  std::vector<Blob> blobs;
  for (std::size_t k = 0; k < px.size(); ++k) {
    double width = 1.0, turn = 0.0;
    if (blob_jitter > 0.0) {
      width = 1.0 + blob_jitter * u(rng);
      turn = blob_jitter * u(rng);
    }
    const double th = pose.rotation_deg * std::numbers::pi / 180.0 + turn;
    blobs.push_back({std::cos(th), std::sin(th), kBlobSigmaMajor * pose.scale * width,
                     kBlobSigmaMinor * pose.scale * width});
  }
  rec.image = Image(image_size, image_size, 1);
  for (int r = 0; r < image_size; ++r)
    for (int c = 0; c < image_size; ++c) {
      const Point2 p{static_cast<double>(c), static_cast<double>(r)};
      double v = 0.0;
      for (std::size_t k = 0; k < px.size(); ++k) {
        const Point2 d = p - px[k];
        const Blob& bl = blobs[k];
        const double a = d.x * bl.ux + d.y * bl.uy, b = -d.x * bl.uy + d.y * bl.ux;
        v += spec.blob_intensities[k] *
             std::exp(-0.5 * (a * a / (bl.s_major * bl.s_major) + b * b / (bl.s_minor * bl.s_minor)));
      }
      for (const auto& [i, j] : spec.edge_set)
        v += kEdgeStrength * std::max(0.0, 1.0 - segment_distance(p, px[i], px[j]));
      rec.image.at(r, c) = std::clamp(kGain * v + (noise_std > 0 ? noise(rng) : 0.0), -1.0, 1.0);
    }
  return rec;
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.identities = j.value("identities", c.identities);
  c.train_per_id = j.value("train_per_id", c.train_per_id);
  c.test_per_id = j.value("test_per_id", c.test_per_id);
  c.landmark_count = j.value("landmark_count", c.landmark_count);
  c.image_size = j.value("image_size", c.image_size);
  c.max_rotation_deg = j.value("max_rotation_deg", c.max_rotation_deg);
  c.gallery_max_rotation_deg = j.value("gallery_max_rotation_deg", c.gallery_max_rotation_deg);
  c.min_scale = j.value("min_scale", c.min_scale);
  c.max_scale = j.value("max_scale", c.max_scale);
  c.max_translation = j.value("max_translation", c.max_translation);
  c.max_tilt = j.value("max_tilt", c.max_tilt);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.blob_jitter = j.value("blob_jitter", c.blob_jitter);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json dataset_config_to_json(const DatasetConfig& c) {
  return {{"identities", c.identities},
          {"train_per_id", c.train_per_id},
          {"test_per_id", c.test_per_id},
          {"landmark_count", c.landmark_count},
          {"image_size", c.image_size},
          {"max_rotation_deg", c.max_rotation_deg},
          {"gallery_max_rotation_deg", c.gallery_max_rotation_deg},
          {"min_scale", c.min_scale},
          {"max_scale", c.max_scale},
          {"max_translation", c.max_translation},
          {"max_tilt", c.max_tilt},
          {"noise_std", c.noise_std},
          {"blob_jitter", c.blob_jitter},
          {"seed", c.seed}};
}

std::filesystem::path gen_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  if (config.train_per_id < 0 || config.test_per_id < 0) throw std::invalid_argument("sample counts must be >= 0");
  if (config.max_rotation_deg < 0 || config.max_rotation_deg > 60.0)
    throw std::invalid_argument("max_rotation_deg must lie in [0, 60]");
  if (!(config.blob_jitter >= 0.0 && config.blob_jitter < 1.0))
    throw std::invalid_argument("blob_jitter must lie in [0, 1)");
  const auto ids = gen_identities(config.identities, config.landmark_count, config.seed);
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "landmarks");
  nlohmann::json records = nlohmann::json::array();
  const int per_id = config.train_per_id + config.test_per_id;
  for (const auto& spec : ids) {
    for (int j = 0; j < per_id; ++j) {
      const bool train = j < config.train_per_id;
      const bool gallery = j == config.train_per_id;
      const double max_rot = gallery ? config.gallery_max_rotation_deg : config.max_rotation_deg;
      const std::uint64_t stream = mix(config.seed ^ 0x5eedULL, static_cast<std::uint64_t>(spec.id) * 4096 + j);
      std::mt19937_64 rng(stream);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      std::optional<SampleRecord> rec;
      for (int attempt = 0; attempt < 1000 && !rec; ++attempt) {
        Pose pose;
        pose.rotation_deg = max_rot * u(rng);
        pose.scale = config.min_scale + 0.5 * (u(rng) + 1.0) * (config.max_scale - config.min_scale);
        pose.translation = {config.max_translation * u(rng), config.max_translation * u(rng)};
        pose.tilt_x = config.max_tilt * u(rng);
        pose.tilt_y = config.max_tilt * u(rng);
        try {
          rec = render_sample(spec, pose, config.image_size, mix(stream, 77), config.noise_std, config.blob_jitter);
        } catch (const PoseRejected&) {
        }
      }
      if (!rec) throw std::runtime_error("could not draw an in-frame pose for identity " + std::to_string(spec.id));
      char stem[64];
      std::snprintf(stem, sizeof stem, "i%04d_s%02d", spec.id, j);
      const std::string img = std::string("images/") + stem + ".pgm";
      const std::string lmk = std::string("landmarks/") + stem + ".json";
      write_pgm(out_dir / img, rec->image);
      write_landmarks(out_dir / lmk, rec->landmarks);
      records.push_back({{"path", img},
                         {"landmarks_path", lmk},
                         {"identity", spec.id},
                         {"split", train ? "train" : gallery ? "gallery" : "probe"},
                         {"yaw_proxy", round_sig9(rec->yaw_proxy)}});
    }
  }
  const nlohmann::json manifest{{"seed", config.seed}, {"landmark_count", config.landmark_count}, {"records", records}};
  const auto path = out_dir / "manifest.json";
  write_text_file(path, manifest.dump(1) + "\n");
  return path;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Gallery: return "gallery";
    case Split::Probe: return "probe";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "gallery") return Split::Gallery;
  if (s == "probe") return Split::Probe;
  throw std::invalid_argument("unknown split '" + s + "'");
}

int Dataset::identity_count() const {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.identity + 1);
  return n;
}

std::vector<const DatasetRecord*> Dataset::split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto j = read_json_file(manifest_path);
  const auto dir = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.landmark_count = j.at("landmark_count").get<int>();
    for (const auto& r : j.at("records")) {
      DatasetRecord rec;
      rec.path = r.at("path").get<std::string>();
      rec.landmarks_path = r.at("landmarks_path").get<std::string>();
      rec.identity = r.at("identity").get<int>();
      rec.split = split_from_string(r.at("split").get<std::string>());
      rec.yaw_proxy = r.at("yaw_proxy").get<double>();
      if (rec.identity < 0) throw std::invalid_argument("negative identity");
      ds.records.push_back(std::move(rec));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  for (auto& rec : ds.records) {
    rec.image = read_pgm(dir / rec.path);
    rec.landmarks = read_landmarks(dir / rec.landmarks_path);
    if (static_cast<int>(rec.landmarks.size()) != ds.landmark_count)
      throw std::runtime_error((dir / rec.landmarks_path).string() + ": landmark count differs from manifest");
  }
  return ds;
}

}  // namespace balign
