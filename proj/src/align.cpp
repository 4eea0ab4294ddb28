#include "balign/align.hpp"

#include <cmath>
#include <stdexcept>

#include "balign/errors.hpp"
#include "balign/format.hpp"
#include "balign/landmark_io.hpp"

namespace balign {

void Template::validate(std::size_t expected_count) const {
  if (expected_count > 0 && points.size() != expected_count)
    throw std::invalid_argument("template has " + std::to_string(points.size()) + " points, expected " +
                                std::to_string(expected_count));
  if (points.empty()) throw std::invalid_argument("template is empty");
  for (const auto& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || std::abs(p.x) > 1.0 || std::abs(p.y) > 1.0)
      throw std::invalid_argument("template point outside [-1, 1]^2");
}

nlohmann::json template_to_json(const Template& t) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : t.points) pts.push_back({round_sig9(p.x), round_sig9(p.y)});
  return {{"points", pts}, {"learnable", t.learnable}};
}

Template template_from_json(const nlohmann::json& j) {
  Template t;
  for (const auto& p : j.at("points")) t.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  t.learnable = j.value("learnable", false);
  t.validate();
  return t;
}

void write_template(const std::filesystem::path& path, const Template& t) {
  write_text_file(path, template_to_json(t).dump(2) + "\n");
}

Template read_template(const std::filesystem::path& path) {
  try {
    return template_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

AlignWeights AlignWeights::constant(std::size_t count, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("landmark weight must lie in (0, 1)");
  return {std::vector<double>(count, std::log(alpha / (1.0 - alpha)))};
}

std::vector<double> AlignWeights::effective() const {
  std::vector<double> a(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) a[i] = 1.0 / (1.0 + std::exp(-raw[i]));
  return a;
}

void LossReport::validate() const {
  const std::pair<const char*, double> terms[] = {
      {"l_fr", l_fr}, {"l_lmk", l_lmk}, {"l_reg", l_reg}, {"l_align", l_align}, {"total", total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name);
  if (l_lmk < 0.0 || l_reg < 0.0) throw NumericError("negative alignment loss term");
}

LossReport total_loss(double l_fr, double l_lmk, double l_reg, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  LossReport r;
  r.l_fr = l_fr;
  r.l_lmk = l_lmk;
  r.l_reg = l_reg;
  r.l_align = l_lmk + l_reg;
  r.total = l_fr + lambda * r.l_align;
  r.lambda = lambda;
  return r;
}

std::string to_string(ApplyAt at) { return at == ApplyAt::Input ? "input" : "fmap"; }

ApplyAt apply_at_from_string(const std::string& s) {
  if (s == "input") return ApplyAt::Input;
  if (s == "fmap") return ApplyAt::FeatureMap;
  throw std::invalid_argument("apply-at must be 'input' or 'fmap', got '" + s + "'");
}

AlignmentMethod AlignmentMethod::parse(const std::string& name) {
  if (name == "none") return {MethodKind::None};
  if (name == "affine2d") return {MethodKind::Affine2D};
  if (name == "stn-proj") return {MethodKind::StnProj};
  if (name == "full-align") return {MethodKind::FullAlign};
  const std::string prefix = "stn-tps-";
  if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size()) {
    const std::string digits = name.substr(prefix.size());
    if (digits.find_first_not_of("0123456789") == std::string::npos && digits.size() <= 3) {
      const int g = std::stoi(digits);
      if (g >= 2) return {MethodKind::StnTps, g};
    }
  }
  throw std::invalid_argument("unknown alignment method '" + name +
                              "' (expected none, affine2d, stn-proj, stn-tps-<G>, full-align)");
}

std::string AlignmentMethod::name() const {
  switch (kind) {
    case MethodKind::None: return "none";
    case MethodKind::Affine2D: return "affine2d";
    case MethodKind::StnProj: return "stn-proj";
    case MethodKind::StnTps: return "stn-tps-" + std::to_string(grid_size);
    case MethodKind::FullAlign: return "full-align";
  }
  return "?";
}

double anme(std::span<const LandmarkSet> deformed) {
  if (deformed.size() < 2) throw std::invalid_argument("anme needs at least two landmark sets");
  const std::size_t s_count = deformed[0].size();
  const auto eyes = deformed[0].eye_indices();
  for (const auto& set : deformed)
    if (set.size() != s_count || set.eye_indices() != eyes)
      throw std::invalid_argument("anme: landmark sets differ in size or eye indices");
  const double n = static_cast<double>(deformed.size());
  double d = 0.0;
  for (const auto& set : deformed) d += set.inter_pupil_distance();
  d /= n;
  if (!(d > 1e-9)) throw DegenerateInputError("anme: mean inter-pupil distance is degenerate");
  double spread = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    Point2 mean;
    for (const auto& set : deformed) mean = mean + set[s];
    mean = (1.0 / n) * mean;
    for (const auto& set : deformed) spread += distance(set[s], mean);
  }
  return spread / (n * static_cast<double>(s_count) * d);
}

std::vector<Point2> warp_template(const Template& t, const Transform& backward_map) {
  std::vector<Point2> out;
  out.reserve(t.points.size());
  for (const auto& p : t.points) out.push_back(apply_transform(backward_map, p));
  return out;
}

double lmk_loss(std::span<const std::vector<Point2>> warped, std::span<const LandmarkSet> gt,
                const AlignWeights& weights, double eps) {
  if (warped.size() != gt.size() || warped.empty()) throw std::invalid_argument("lmk_loss: batch size mismatch");
  const auto alpha = weights.effective();
  double sum = 0.0;
  for (std::size_t i = 0; i < warped.size(); ++i) {
    if (warped[i].size() != alpha.size() || gt[i].size() != alpha.size())
      throw std::invalid_argument("lmk_loss: landmark count mismatch");
    for (std::size_t s = 0; s < alpha.size(); ++s) {
      const Point2 r = warped[i][s] - gt[i][s];
      sum += alpha[s] * std::sqrt(r.x * r.x + r.y * r.y + eps * eps);
    }
  }
  return sum / (static_cast<double>(warped.size()) * static_cast<double>(alpha.size()));
}

double reg_loss(const AlignWeights& weights) {
  double sum = 0.0;
  for (double a : weights.effective()) sum += (1.0 - a) * (1.0 - a);
  return sum;
}

Template compute_fixed_template(std::span<const PosedLandmarks> samples, TemplateMode mode) {
  std::vector<Point2> sum;
  std::size_t count = 0;
  for (const auto& s : samples) {
    if (std::abs(s.yaw) > kFrontalYaw) continue;
    if (sum.empty()) sum.assign(s.landmarks.size(), Point2{});
    if (s.landmarks.size() != sum.size()) throw std::invalid_argument("compute_fixed_template: landmark count mismatch");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = sum[k] + s.landmarks[k];
    ++count;
  }
  if (count == 0) throw DegenerateInputError("compute_fixed_template: no frontal samples");
  Template t;
  for (auto& p : sum) t.points.push_back((1.0 / static_cast<double>(count)) * p);
  if (mode == TemplateMode::FivePoint) {
    if (t.points.size() < 5) throw std::invalid_argument("compute_fixed_template: five-point mode needs >= 5 landmarks");
    std::vector<Point2> five;
    for (std::size_t k : kFivePointIndices) five.push_back(t.points[k]);
    t.points = std::move(five);
  }
  return t;
}

namespace {

std::vector<Point2> five_points(const LandmarkSet& gt) {
  if (gt.size() < 5) throw std::invalid_argument("affine2d needs at least 5 landmarks");
  std::vector<Point2> out;
  for (std::size_t k : kFivePointIndices) out.push_back(gt[k]);
  return out;
}

const Template& require(const Template* t, const char* what) {
  if (t == nullptr) throw std::invalid_argument(std::string("alignment context lacks the ") + what + " template");
  return *t;
}

ProjectiveTransform invert_projective(const ProjectiveTransform& h) {
  const auto& m = h.coefficients;
  // Adjugate of the 3x3 matrix, rescaled so the last entry is 1.
  std::array<double, 9> a{m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
                          m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
                          m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  if (std::abs(a[8]) < 1e-12) throw NotInvertibleError("projective warp maps the origin to infinity");
  ProjectiveTransform inv;
  for (int i = 0; i < 9; ++i) inv.coefficients[i] = a[i] / a[8];
  return inv;
}

}  // namespace

Transform method_transform(const AlignmentMethod& method, const Image& image, const LandmarkSet& gt,
                           const AlignContext& ctx) {
  switch (method.kind) {
    case MethodKind::None: return AffineTransform::identity();
    case MethodKind::Affine2D: {
      const auto& t = require(ctx.five_point, "five-point");
      if (t.points.size() != 5) throw std::invalid_argument("five-point template must have 5 points");
      const auto src = five_points(gt);
      return fit_affine(std::span<const Point2>(t.points), std::span<const Point2>(src));
    }
    case MethodKind::FullAlign: {
      const auto& t = require(ctx.dense, "dense");
      if (t.points.size() != gt.size()) throw std::invalid_argument("dense template size differs from landmark count");
      return tps_solve(t.points, gt.points(), 0.0);
    }
    case MethodKind::StnProj:
    case MethodKind::StnTps:
      if (!ctx.predict) throw std::invalid_argument(method.name() + " needs a trained localisation network");
      return ctx.predict(image);
  }
  throw std::logic_error("unreachable method kind");
}

LandmarkSet deform_landmarks(const AlignmentMethod& method, const Transform& backward_map, const LandmarkSet& gt,
                             const AlignContext& ctx) {
  if (method.kind == MethodKind::None) return gt;
  if (method.kind == MethodKind::FullAlign) return LandmarkSet(require(ctx.dense, "dense").points, gt.eye_indices());
  std::vector<Point2> out;
  out.reserve(gt.size());
  if (const auto* a = std::get_if<AffineTransform>(&backward_map)) {
    const AffineTransform inv = a->inverse();
    for (const auto& p : gt.points()) out.push_back(inv.apply(p));
  } else if (const auto* h = std::get_if<ProjectiveTransform>(&backward_map)) {
    const ProjectiveTransform inv = invert_projective(*h);
    for (const auto& p : gt.points()) out.push_back(inv.apply(p));
  } else {
    const int n = static_cast<int>(std::ceil(32 * ctx.inversion_extent));
    const WarpGrid grid = make_grid(backward_map, n, n, ctx.inversion_extent);
    for (const auto& p : gt.points()) out.push_back(invert_warp(grid, p));
  }
  return LandmarkSet(std::move(out), gt.eye_indices());
}

AlignedSample apply_method(const AlignmentMethod& method, const Image& image, const LandmarkSet& gt,
                           const AlignContext& ctx) {
  AlignedSample r;
  r.backward_map = method_transform(method, image, gt, ctx);
  const Image source = ctx.feature_map ? ctx.feature_map(image) : image;
  r.warped = method.kind == MethodKind::None ? source
                                             : sample_bilinear(source, make_grid(r.backward_map, source.height, source.width));
  r.deformed = deform_landmarks(method, r.backward_map, gt, ctx);
  return r;
}

}  // namespace balign
