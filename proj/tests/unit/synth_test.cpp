#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "balign/image_io.hpp"
#include "balign/synth.hpp"

using namespace balign;
namespace fs = std::filesystem;

TEST(Synth, MeanLayoutHasEyesNoseMouthAndContour) {
  const auto pts = mean_face_layout(16);
  ASSERT_EQ(pts.size(), 16u);
  EXPECT_LT(pts[0].x, pts[1].x);
  EXPECT_EQ(pts[0].y, pts[1].y);
  EXPECT_GT(pts[2].y, pts[0].y);
  EXPECT_GT(pts[3].y, pts[2].y);
  for (std::size_t k = 5; k < pts.size(); ++k) EXPECT_GT(std::hypot(pts[k].x, pts[k].y - 0.05), 0.45);
  EXPECT_THROW(mean_face_layout(5), std::invalid_argument);
}

TEST(Synth, IdentitiesAreDeterministicAndDistinct) {
  const auto a = gen_identities(20, 16, 3), b = gen_identities(20, 16, 3), c = gen_identities(20, 16, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].base_landmarks, b[i].base_landmarks);
    EXPECT_NE(a[i].base_landmarks, c[i].base_landmarks);
    for (double v : a[i].blob_intensities) {
      EXPECT_GE(v, 0.3);
      EXPECT_LE(v, 1.0);
    }
    for (const auto& p : a[i].base_landmarks.points()) EXPECT_LE(std::max(std::abs(p.x), std::abs(p.y)), 0.7);
  }
  EXPECT_NE(a[0].base_landmarks, a[1].base_landmarks);
  EXPECT_THROW(gen_identities(1, 16, 0), std::invalid_argument);
}

TEST(Synth, ShapePerturbationStd) {
  const auto ids = gen_identities(400, 16, 11);
  const auto mean = mean_face_layout(16);
  double ss = 0;
  std::size_t n = 0;
  for (const auto& id : ids)
    for (std::size_t k = 0; k < mean.size(); ++k) {
      const Point2 d = id.base_landmarks[k] - mean[k];
      ss += d.x * d.x + d.y * d.y;
      n += 2;
    }
  EXPECT_NEAR(std::sqrt(ss / n), 0.06, 0.006);
}

TEST(Synth, RenderIsDeterministicAndBounded) {
  const auto ids = gen_identities(2, 16, 5);
  Pose pose;
  pose.rotation_deg = 20;
  pose.scale = 1.05;
  pose.translation = {0.03, -0.02};
  const auto a = render_sample(ids[0], pose, 32, 9, 0.02, 0.6);
  const auto b = render_sample(ids[0], pose, 32, 9, 0.02, 0.6);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.image.height, 32);
  for (double v : a.image.data) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a.yaw_proxy, 20.0);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(a.landmarks[k], pose.apply(ids[0].base_landmarks[k]));
}

TEST(Synth, BlobsSitAtLandmarks) {
  // Without noise or jitter the brightest pixel near an eye is within a pixel of it.
  const auto ids = gen_identities(2, 16, 6);
  const auto rec = render_sample(ids[1], Pose{}, 32, 1, 0.0, 0.0);
  const Point2 eye = rec.landmarks[0];
  const double cx = (eye.x + 1) * 15.5, cy = (eye.y + 1) * 15.5;
  int br = 0, bc = 0;
  double best = -2;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c)
      if (std::hypot(c - cx, r - cy) < 3 && rec.image.at(r, c) > best) {
        best = rec.image.at(r, c);
        br = r;
        bc = c;
      }
  EXPECT_LE(std::hypot(bc - cx, br - cy), 1.5);
}

TEST(Synth, RejectsOutOfFramePosesAndBadParameters) {
  const auto ids = gen_identities(2, 16, 7);
  Pose far;
  far.translation = {0.5, 0.0};
  far.scale = 1.4;
  EXPECT_THROW(render_sample(ids[0], far, 32, 1), PoseRejected);
  Pose big;
  big.rotation_deg = 75;
  EXPECT_THROW(render_sample(ids[0], big, 32, 1), std::invalid_argument);
  EXPECT_THROW(render_sample(ids[0], Pose{}, 32, 1, 0.02, 1.0), std::invalid_argument);
}

TEST(Synth, DatasetRoundTrip) {
  const auto dir = fs::temp_directory_path() / "balign_synth_test";
  fs::remove_all(dir);
  DatasetConfig c;
  c.identities = 4;
  c.train_per_id = 3;
  c.test_per_id = 3;
  c.seed = 5;
  const auto manifest = gen_dataset(c, dir);
  const Dataset ds = load_dataset(manifest);
  EXPECT_EQ(ds.records.size(), 24u);
  EXPECT_EQ(ds.identity_count(), 4);
  EXPECT_EQ(ds.landmark_count, 16);
  EXPECT_EQ(ds.split(Split::Train).size(), 12u);
  EXPECT_EQ(ds.split(Split::Gallery).size(), 4u);
  EXPECT_EQ(ds.split(Split::Probe).size(), 8u);
  for (const auto* g : ds.split(Split::Gallery)) EXPECT_LE(g->yaw_proxy, c.gallery_max_rotation_deg);
  std::set<int> gallery_ids;
  for (const auto* g : ds.split(Split::Gallery)) gallery_ids.insert(g->identity);
  EXPECT_EQ(gallery_ids.size(), 4u);
  for (const auto& r : ds.records) {
    EXPECT_EQ(r.image.height, 32);
    for (const auto& p : r.landmarks.points()) EXPECT_LE(std::max(std::abs(p.x), std::abs(p.y)), 0.95);
  }
  // Same config, same bytes.
  const auto dir2 = fs::temp_directory_path() / "balign_synth_test2";
  fs::remove_all(dir2);
  gen_dataset(c, dir2);
  const Dataset ds2 = load_dataset(dir2 / "manifest.json");
  for (std::size_t i = 0; i < ds.records.size(); ++i) EXPECT_EQ(ds.records[i].image, ds2.records[i].image);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Synth, LoadReportsOffendingPath) {
  const auto dir = fs::temp_directory_path() / "balign_synth_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << R"({"seed": 1, "landmark_count": 16, "records": [{"path": "x.pgm"}]})";
  try {
    load_dataset(dir / "manifest.json");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Synth, ConfigJsonRoundTrip) {
  DatasetConfig c;
  c.identities = 7;
  c.blob_jitter = 0.25;
  const auto back = dataset_config_from_json(dataset_config_to_json(c));
  EXPECT_EQ(back.identities, 7);
  EXPECT_EQ(back.blob_jitter, 0.25);
  EXPECT_EQ(dataset_config_from_json(nlohmann::json::object()).identities, DatasetConfig{}.identities);
}
