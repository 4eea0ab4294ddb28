#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "balign/align.hpp"
#include "balign/errors.hpp"
#include "unit/test_util.hpp"

using namespace balign;

namespace {

LandmarkSet random_set(std::mt19937_64& rng, std::size_t n = 8) {
  auto pts = test_util::random_points(rng, n);
  pts[0] = {-0.4, -0.3};
  pts[1] = {0.4, -0.3};
  return LandmarkSet(pts, {0, 1});
}

/// Direct transcription of the metric: per landmark, mean distance of the
/// deformed points to their centroid, averaged over landmarks, divided by the
/// mean inter-pupil distance.
double anme_oracle(const std::vector<LandmarkSet>& sets) {
  const std::size_t n = sets.size(), s_count = sets[0].size();
  double ipd = 0;
  for (const auto& s : sets) ipd += std::hypot(s[0].x - s[1].x, s[0].y - s[1].y);
  ipd /= n;
  double total = 0;
  for (std::size_t s = 0; s < s_count; ++s) {
    double mx = 0, my = 0;
    for (const auto& set : sets) {
      mx += set[s].x;
      my += set[s].y;
    }
    mx /= n;
    my /= n;
    double acc = 0;
    for (const auto& set : sets) acc += std::hypot(set[s].x - mx, set[s].y - my);
    total += acc / n;
  }
  return total / s_count / ipd;
}

}  // namespace

TEST(Anme, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<LandmarkSet> sets;
    for (int i = 0; i < 2 + t; ++i) sets.push_back(random_set(rng));
    EXPECT_NEAR(anme(sets), anme_oracle(sets), 1e-12);
  }
}

TEST(Anme, ZeroForIdenticalSetsAndScaleInvariant) {
  std::mt19937_64 rng(2);
  const auto a = random_set(rng);
  std::vector<LandmarkSet> same(5, a);
  EXPECT_NEAR(anme(same), 0.0, 1e-15);
  std::vector<LandmarkSet> sets{random_set(rng), random_set(rng), random_set(rng)}, scaled;
  for (const auto& s : sets) {
    std::vector<Point2> p;
    for (const auto& q : s.points()) p.push_back(0.5 * q);
    scaled.emplace_back(p, s.eye_indices());
  }
  EXPECT_NEAR(anme(sets), anme(scaled), 1e-12);
}

TEST(Anme, RejectsBadInput) {
  std::mt19937_64 rng(3);
  std::vector<LandmarkSet> one{random_set(rng)};
  EXPECT_THROW(anme(one), std::invalid_argument);
  std::vector<LandmarkSet> mixed{random_set(rng, 8), random_set(rng, 9)};
  EXPECT_THROW(anme(mixed), std::invalid_argument);
  const LandmarkSet collapsed({{0, 0}, {0, 0}, {1, 1}}, {0, 1});
  std::vector<LandmarkSet> degenerate{collapsed, collapsed};
  EXPECT_THROW(anme(degenerate), DegenerateInputError);
}

TEST(Losses, TotalLossIdentities) {
  const auto r = total_loss(1.0, 0.2, 0.1, 3.0);
  EXPECT_NEAR(r.l_align, 0.3, 1e-15);
  EXPECT_NEAR(r.total, 1.9, 1e-15);
  EXPECT_EQ(total_loss(2.0, 5.0, 1.0, 0.0).total, 2.0);
  EXPECT_THROW(total_loss(1.0, 0.2, 0.1, -1.0), std::invalid_argument);
  LossReport bad = r;
  bad.l_fr = NAN;
  EXPECT_THROW(bad.validate(), NumericError);
}

TEST(Losses, LandmarkLossAndRegularizer) {
  const LandmarkSet gt({{0, 0}, {1, 0}, {0, 1}}, {0, 1});
  const std::vector<std::vector<Point2>> warped{{{0.3, 0.4}, {1, 0}, {0, 1}}};
  const std::vector<LandmarkSet> gts{gt};
  const auto half = AlignWeights::constant(3, 0.5);
  EXPECT_NEAR(lmk_loss(warped, gts, half, 0.0), 0.5 * 0.5 / 3.0, 1e-12);
  EXPECT_NEAR(reg_loss(half), 3 * 0.25, 1e-12);
  // Vanishing weights drive the landmark term to zero; the regularizer
  // grows instead.
  const auto tiny = AlignWeights::constant(3, 1e-6);
  EXPECT_LT(lmk_loss(warped, gts, tiny, 0.0), 1e-6);
  EXPECT_GT(reg_loss(tiny), 2.99);
  EXPECT_THROW(AlignWeights::constant(3, 1.0), std::invalid_argument);
}

TEST(Method, ParseRoundTrips) {
  for (const char* n : {"none", "affine2d", "stn-proj", "stn-tps-2", "stn-tps-8", "full-align"})
    EXPECT_EQ(AlignmentMethod::parse(n).name(), n);
  EXPECT_EQ(AlignmentMethod::parse("stn-tps-8").grid_size, 8);
  EXPECT_THROW(AlignmentMethod::parse("stn-tps-1"), std::invalid_argument);
  EXPECT_THROW(AlignmentMethod::parse("bogus"), std::invalid_argument);
  EXPECT_EQ(apply_at_from_string("fmap"), ApplyAt::FeatureMap);
  EXPECT_THROW(apply_at_from_string("both"), std::invalid_argument);
}

TEST(FixedTemplate, FrontalMeanAndFivePointSubset) {
  std::mt19937_64 rng(4);
  std::vector<PosedLandmarks> samples;
  for (int i = 0; i < 6; ++i) samples.push_back({random_set(rng), i < 3 ? 5.0 : 40.0});
  const Template dense = compute_fixed_template(samples, TemplateMode::Dense);
  for (std::size_t k = 0; k < 8; ++k) {
    const Point2 m = (1.0 / 3.0) * (samples[0].landmarks[k] + samples[1].landmarks[k] + samples[2].landmarks[k]);
    EXPECT_NEAR(distance(dense.points[k], m), 0.0, 1e-12);
  }
  const Template five = compute_fixed_template(samples, TemplateMode::FivePoint);
  ASSERT_EQ(five.points.size(), 5u);
  EXPECT_EQ(five.points[2], dense.points[2]);
  std::vector<PosedLandmarks> profile{{random_set(rng), 50.0}};
  EXPECT_THROW(compute_fixed_template(profile, TemplateMode::Dense), DegenerateInputError);
}

TEST(Methods, FullAlignLandsExactlyOnTemplate) {
  std::mt19937_64 rng(5);
  const Template dense{test_util::spread_points(rng, 8), false};
  AlignContext ctx;
  ctx.dense = &dense;
  std::vector<LandmarkSet> deformed;
  for (int i = 0; i < 10; ++i) {
    LandmarkSet gt(test_util::spread_points(rng, 8), {0, 1});
    const Transform t = method_transform(AlignmentMethod::parse("full-align"), Image(8, 8), gt, ctx);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_LT(distance(apply_transform(t, dense.points[k]), gt[k]), 1e-9);
    deformed.push_back(deform_landmarks(AlignmentMethod::parse("full-align"), t, gt, ctx));
  }
  EXPECT_LT(anme(deformed), 1e-6);
}

TEST(Methods, Affine2DNormalisesSimilarityPoses) {
  // Sets that differ only by an affine pose collapse onto one another.
  std::mt19937_64 rng(6);
  const LandmarkSet base = random_set(rng);
  Template five;
  for (std::size_t k : kFivePointIndices) five.points.push_back(base[k]);
  AlignContext ctx;
  ctx.five_point = &five;
  std::vector<LandmarkSet> deformed;
  const auto m = AlignmentMethod::parse("affine2d");
  for (double rot : {-0.5, 0.0, 0.3, 0.8}) {
    const AffineTransform pose{{0.9 * std::cos(rot), -0.9 * std::sin(rot), 0.05, 0.9 * std::sin(rot),
                                0.9 * std::cos(rot), -0.02}};
    std::vector<Point2> p;
    for (const auto& q : base.points()) p.push_back(pose.apply(q));
    const LandmarkSet gt(p, {0, 1});
    deformed.push_back(deform_landmarks(m, method_transform(m, Image(4, 4), gt, ctx), gt, ctx));
  }
  EXPECT_LT(anme(deformed), 1e-10);
  std::vector<LandmarkSet> raw;
  AlignContext empty;
  EXPECT_THROW(method_transform(m, Image(4, 4), base, empty), std::invalid_argument);
}

TEST(Methods, NoneIsIdentityAndStnNeedsPredictor) {
  std::mt19937_64 rng(7);
  const LandmarkSet gt = random_set(rng);
  Image img(6, 6);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.01 * static_cast<double>(i);
  AlignContext ctx;
  const auto r = apply_method(AlignmentMethod::parse("none"), img, gt, ctx);
  EXPECT_EQ(r.warped, img);
  EXPECT_EQ(r.deformed, gt);
  EXPECT_THROW(apply_method(AlignmentMethod::parse("stn-tps-4"), img, gt, ctx), std::invalid_argument);
  ctx.predict = [](const Image&) { return Transform{tps_from_stn_params(regular_lattice(4), 4)}; };
  const auto s = apply_method(AlignmentMethod::parse("stn-tps-4"), img, gt, ctx);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(s.warped.data[i], img.data[i], 1e-9);
  for (std::size_t k = 0; k < gt.size(); ++k) EXPECT_LT(distance(s.deformed[k], gt[k]), 1e-8);
}

TEST(Template, ValidationAndJson) {
  Template t{{{0.1, 0.2}, {-0.3, 0.4}}, true};
  EXPECT_NO_THROW(t.validate(2));
  EXPECT_THROW(t.validate(3), std::invalid_argument);
  const Template back = template_from_json(template_to_json(t));
  EXPECT_EQ(back.points, t.points);
  EXPECT_EQ(back.learnable, t.learnable);
  Template out{{{1.5, 0.0}}, false};
  EXPECT_THROW(out.validate(), std::invalid_argument);
}
