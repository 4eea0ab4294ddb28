#include "balign/bench/config.hpp"

#include <set>
#include <stdexcept>

namespace balign::bench {

std::string to_string(TemplateSource t) {
  switch (t) {
    case TemplateSource::Fixed: return "fixed";
    case TemplateSource::FixedFromLearned: return "fixed-from-learned";
    case TemplateSource::Learnable: return "learnable";
  }
  return "?";
}

TemplateSource template_source_from_string(const std::string& s) {
  for (auto t : {TemplateSource::Fixed, TemplateSource::FixedFromLearned, TemplateSource::Learnable})
    if (to_string(t) == s) return t;
  throw std::invalid_argument("template mode must be fixed, fixed-from-learned or learnable, got '" + s + "'");
}

std::string to_string(WeightsMode w) { return w == WeightsMode::Fixed ? "fixed" : "learnable"; }

WeightsMode weights_mode_from_string(const std::string& s) {
  if (s == "fixed") return WeightsMode::Fixed;
  if (s == "learnable") return WeightsMode::Learnable;
  throw std::invalid_argument("weights mode must be fixed or learnable, got '" + s + "'");
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (method.kind == MethodKind::StnTps && method.grid_size < 2) fail("grid size must be >= 2");
  if (template_source == TemplateSource::FixedFromLearned && template_path.empty())
    fail("template mode fixed-from-learned needs template_path");
  if (template_source != TemplateSource::FixedFromLearned && !template_path.empty())
    fail("template_path is only used with template mode fixed-from-learned");
  if (!(fixed_alpha > 0.0 && fixed_alpha < 1.0)) fail("fixed_alpha must lie in (0, 1)");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 2) fail("batch_size must be >= 2 (batch norm)");
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0) || !(locnet_lr_scale >= 0.0) ||
      !(locnet_clip_norm >= 0.0))
    fail("optimizer hyperparameters must be >= 0");
  if (embedding_dim < 2) fail("embedding_dim must be >= 2");
  if (recnet_channels.empty()) fail("recnet_channels must not be empty");
  for (int c : recnet_channels)
    if (c < 1) fail("recnet_channels must be positive");
  if (!(am_margin >= 0.0 && am_margin < 1.0) || !(am_scale > 0.0)) fail("AM-Softmax margin/scale out of range");
  if (seeds.empty()) fail("seeds must not be empty");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "manifest", "method", "apply_at", "lambda", "template_mode", "template_path", "weights_mode", "fixed_alpha",
      "epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "locnet_lr_scale", "locnet_clip_norm", "embedding_dim",
      "recnet_channels", "residual", "am_margin", "am_scale", "seed", "seeds", "alignment_terms", "record_wall_clock"};
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  ExperimentConfig c;
  try {
    c.manifest = j.value("manifest", c.manifest);
    if (j.contains("method")) c.method = AlignmentMethod::parse(j.at("method").get<std::string>());
    if (j.contains("apply_at")) c.apply_at = apply_at_from_string(j.at("apply_at").get<std::string>());
    c.lambda = j.value("lambda", c.lambda);
    if (j.contains("template_mode"))
      c.template_source = template_source_from_string(j.at("template_mode").get<std::string>());
    c.template_path = j.value("template_path", c.template_path);
    if (j.contains("weights_mode")) c.weights_mode = weights_mode_from_string(j.at("weights_mode").get<std::string>());
    c.fixed_alpha = j.value("fixed_alpha", c.fixed_alpha);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.locnet_lr_scale = j.value("locnet_lr_scale", c.locnet_lr_scale);
    c.locnet_clip_norm = j.value("locnet_clip_norm", c.locnet_clip_norm);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.recnet_channels = j.value("recnet_channels", c.recnet_channels);
    c.residual = j.value("residual", c.residual);
    c.am_margin = j.value("am_margin", c.am_margin);
    c.am_scale = j.value("am_scale", c.am_scale);
    c.seed = j.value("seed", c.seed);
    c.seeds = j.value("seeds", c.seeds);
    c.alignment_terms = j.value("alignment_terms", c.alignment_terms);
    c.record_wall_clock = j.value("record_wall_clock", c.record_wall_clock);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"manifest", c.manifest},
          {"method", c.method.name()},
          {"apply_at", to_string(c.apply_at)},
          {"lambda", c.lambda},
          {"template_mode", to_string(c.template_source)},
          {"template_path", c.template_path},
          {"weights_mode", to_string(c.weights_mode)},
          {"fixed_alpha", c.fixed_alpha},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"locnet_lr_scale", c.locnet_lr_scale},
          {"locnet_clip_norm", c.locnet_clip_norm},
          {"embedding_dim", c.embedding_dim},
          {"recnet_channels", c.recnet_channels},
          {"residual", c.residual},
          {"am_margin", c.am_margin},
          {"am_scale", c.am_scale},
          {"seed", c.seed},
          {"seeds", c.seeds},
          {"alignment_terms", c.alignment_terms},
          {"record_wall_clock", c.record_wall_clock}};
}

}  // namespace balign::bench
