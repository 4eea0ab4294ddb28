#include "balign/bench/pipeline.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "balign/nn/ops.hpp"

namespace balign::bench {

using nn::Tensor;

Model::Model(const ExperimentConfig& cfg, int class_count, int landmark_count, int image_size,
             const Template& init_template)
    : cfg_(cfg), image_size_(image_size) {
  if (class_count < 2) throw std::invalid_argument("Model: need at least two classes");
  if (static_cast<int>(init_template.points.size()) != landmark_count)
    throw std::invalid_argument("Model: template size differs from landmark count");
  nn::RecNetOptions ro;
  ro.embedding_dim = cfg.embedding_dim;
  ro.image_size = image_size;
  ro.channels = cfg.recnet_channels;
  ro.residual = cfg.residual;
  recnet_ = nn::build_recnet(ro, cfg.seed * 3 + 1);
  if (cfg.method.kind == MethodKind::StnTps) {
    locnet_ = nn::build_locnet(cfg.method.grid_size, 1, cfg.seed * 3 + 2, image_size);
    tps_ = std::make_unique<nn::TpsGridGenerator>(cfg.method.grid_size, image_size, image_size);
  } else if (cfg.method.kind == MethodKind::StnProj) {
    locnet_ = nn::Network(nn::locnet_spec(8, 1, image_size), cfg.seed * 3 + 2);
  }
  std::mt19937_64 rng(cfg.seed * 3 + 3);
  std::normal_distribution<double> dist(0.0, 0.1);
  std::vector<double> w(static_cast<std::size_t>(class_count) * cfg.embedding_dim);
  for (double& x : w) x = dist(rng);
  class_weights_ = Tensor({class_count, cfg.embedding_dim}, std::move(w), true);

  const bool active = cfg.uses_learned_alignment_terms();
  const AlignWeights init = AlignWeights::constant(landmark_count, cfg.weights_mode == WeightsMode::Fixed ? cfg.fixed_alpha : 0.5);
  alpha_raw_ = Tensor({landmark_count}, init.raw, active && cfg.weights_mode == WeightsMode::Learnable);
  std::vector<double> t;
  for (const auto& p : init_template.points) {
    t.push_back(p.x);
    t.push_back(p.y);
  }
  template_ = Tensor({landmark_count, 2}, std::move(t), active && cfg.template_source == TemplateSource::Learnable);
}

Model::Output Model::forward(const Tensor& images, const Tensor& fixed_grid, bool training, bool want_template) {
  Output out;
  Tensor grid;
  switch (cfg_.method.kind) {
    case MethodKind::None: break;
    case MethodKind::Affine2D:
    case MethodKind::FullAlign:
      if (!fixed_grid.defined()) throw std::invalid_argument(cfg_.method.name() + " needs a precomputed grid");
      grid = fixed_grid;
      break;
    case MethodKind::StnTps: {
      out.theta = locnet_->forward(images, training);
      const int n = tps_->control_count();
      const Tensor offsets = nn::reshape(out.theta, {images.dim(0), n, 2});
      grid = tps_->grid(offsets);
      if (want_template) out.warped_template = tps_->points(offsets, template_);
      break;
    }
    case MethodKind::StnProj:
      out.theta = locnet_->forward(images, training);
      grid = nn::projective_grid(out.theta, image_size_, image_size_);
      if (want_template) out.warped_template = nn::projective_points(out.theta, template_);
      break;
  }
  if (!grid.defined()) {
    out.embeddings = recnet_.forward(images, training);
  } else if (cfg_.apply_at == ApplyAt::Input) {
    out.embeddings = recnet_.forward(nn::grid_sample(images, grid), training);
  } else {
    const Tensor f = recnet_.forward_stage0(images, training);
    out.embeddings = recnet_.forward_after_stage0(nn::grid_sample(f, grid), training);
  }
  return out;
}

Transform Model::predicted_transform(const Tensor& theta, int index) const {
  const auto v = theta.values();
  if (cfg_.method.kind == MethodKind::StnTps) {
    const int n = tps_->control_count();
    std::vector<Point2> src(n);
    for (int k = 0; k < n; ++k)
      src[k] = tps_->lattice()[k] + Point2{v[(static_cast<std::size_t>(index) * n + k) * 2],
                                           v[(static_cast<std::size_t>(index) * n + k) * 2 + 1]};
    return tps_from_stn_params(src, cfg_.method.grid_size);
  }
  if (cfg_.method.kind == MethodKind::StnProj) {
    ProjectiveTransform h;
    for (int k = 0; k < 8; ++k) h.coefficients[k] += v[static_cast<std::size_t>(index) * 8 + k];
    return h;
  }
  throw std::logic_error("predicted_transform called for a landmark-driven method");
}

Transform Model::predict(const Image& image) {
  if (!locnet_) throw std::logic_error("predict called for a landmark-driven method");
  if (image.height != image_size_ || image.width != image_size_ || image.channels != 1)
    throw std::invalid_argument("predict: expected a " + std::to_string(image_size_) + "x" +
                                std::to_string(image_size_) + " single-channel image");
  const nn::NoGradGuard no_grad;
  const Tensor x({1, 1, image_size_, image_size_}, image.data);
  const Tensor theta = locnet_->forward(x, false);
  return predicted_transform(theta, 0);
}

std::vector<nn::NamedParam> Model::recognition_parameters() {
  auto p = recnet_.parameters();
  p.push_back({"class_weights", class_weights_});
  return p;
}

std::vector<nn::NamedParam> Model::locnet_parameters() {
  if (!locnet_) return {};
  return locnet_->parameters();
}

std::vector<nn::NamedParam> Model::alignment_parameters() {
  std::vector<nn::NamedParam> p;
  if (alpha_raw_.requires_grad()) p.push_back({"alpha_raw", alpha_raw_, false});
  if (template_.requires_grad()) p.push_back({"template", template_, false});
  return p;
}

Template Model::current_template() const {
  Template t;
  const auto v = template_.values();
  for (std::size_t k = 0; k + 1 < v.size(); k += 2) t.points.push_back({v[k], v[k + 1]});
  t.learnable = template_.requires_grad();
  return t;
}

AlignWeights Model::current_weights() const {
  const auto v = alpha_raw_.values();
  return {std::vector<double>(v.begin(), v.end())};
}

void Model::clamp_template() {
  for (double& x : template_.values()) x = std::clamp(x, -1.0, 1.0);
}

std::size_t Model::parameter_count() {
  std::size_t n = recnet_.parameter_count() + class_weights_.numel();
  if (locnet_) n += locnet_->parameter_count();
  return n;
}

std::vector<std::pair<std::string, nn::BatchNormState*>> Model::batch_norm_states() {
  std::vector<std::pair<std::string, nn::BatchNormState*>> out;
  int i = 0;
  for (auto* s : recnet_.batch_norm_states()) out.emplace_back("recnet.bn" + std::to_string(i++), s);
  if (locnet_) {
    i = 0;
    for (auto* s : locnet_->batch_norm_states()) out.emplace_back("locnet.bn" + std::to_string(i++), s);
  }
  return out;
}

nn::Checkpoint Model::to_checkpoint(const nlohmann::json& config) {
  nn::Checkpoint ck;
  ck.config = config;
  auto add = [&ck](const std::string& name, const Tensor& t) {
    ck.tensors.push_back({name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
  };
  for (const auto& p : recognition_parameters()) add(p.name, p.tensor);
  for (const auto& p : locnet_parameters()) add(p.name, p.tensor);
  add("alpha_raw", alpha_raw_);
  add("template", template_);
  for (const auto& [name, s] : batch_norm_states()) {
    const int c = static_cast<int>(s->running_mean.size());
    ck.tensors.push_back({name + ".running_mean", {c}, s->running_mean});
    ck.tensors.push_back({name + ".running_var", {c}, s->running_var});
  }
  return ck;
}

void Model::load_checkpoint(const nn::Checkpoint& ck) {
  auto load = [&ck](const std::string& name, Tensor t) {
    const auto& src = ck.find(name);
    if (src.shape != t.shape())
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + nn::shape_str(src.shape) +
                               ", model expects " + nn::shape_str(t.shape()));
    std::copy(src.values.begin(), src.values.end(), t.values().begin());
  };
  for (const auto& p : recognition_parameters()) load(p.name, p.tensor);
  for (const auto& p : locnet_parameters()) load(p.name, p.tensor);
  load("alpha_raw", alpha_raw_);
  load("template", template_);
  for (const auto& [name, s] : batch_norm_states()) {
    s->running_mean = ck.find(name + ".running_mean").values;
    s->running_var = ck.find(name + ".running_var").values;
  }
}

Model model_from_checkpoint(const nn::Checkpoint& ck, int image_size) {
  const ExperimentConfig cfg = config_from_json(ck.config);
  const auto& w = ck.find("class_weights");
  const auto& t = ck.find("template");
  if (w.shape.size() != 2 || t.shape.size() != 2 || t.shape[1] != 2)
    throw std::runtime_error("checkpoint: class_weights or template has an unexpected shape");
  Template init;
  init.learnable = cfg.template_source == TemplateSource::Learnable;
  for (int s = 0; s < t.shape[0]; ++s) init.points.push_back({t.values[2 * s], t.values[2 * s + 1]});
  Model model(cfg, w.shape[0], t.shape[0], image_size, init);
  model.load_checkpoint(ck);
  return model;
}

std::vector<double> fixed_method_grid(const AlignmentMethod& method, const LandmarkSet& gt, const AlignContext& ctx,
                                      int image_size) {
  if (method.learned()) throw std::invalid_argument("fixed_method_grid: " + method.name() + " is learned");
  const Transform t = method_transform(method, Image(), gt, ctx);
  const WarpGrid g = make_grid(t, image_size, image_size);
  std::vector<double> out;
  out.reserve(g.coords.size() * 2);
  for (const auto& p : g.coords) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

}  // namespace balign::bench
