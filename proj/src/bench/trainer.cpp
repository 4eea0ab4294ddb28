#include "balign/bench/trainer.hpp"

#include <algorithm>
#include <map>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "balign/errors.hpp"
#include "balign/format.hpp"
#include "balign/landmark_io.hpp"
#include "balign/nn/am_softmax.hpp"
#include "balign/nn/ops.hpp"
#include "balign/nn/optim.hpp"

namespace balign::bench {

using nn::Tensor;

int yaw_bucket(double yaw) {
  const double a = std::abs(yaw);
  for (int b = 0; b < 4; ++b)
    if (a >= kYawBuckets[b].lo && (a < kYawBuckets[b].hi || (b == 3 && a <= kYawBuckets[b].hi))) return b;
  return -1;
}

AlignContext PreparedData::context() const {
  AlignContext ctx;
  ctx.five_point = &five_point;
  ctx.dense = &dense;
  return ctx;
}

PreparedData prepare_data(const Dataset& ds) {
  PreparedData d;
  d.dataset = &ds;
  d.train = ds.split(Split::Train);
  d.gallery = ds.split(Split::Gallery);
  d.probe = ds.split(Split::Probe);
  if (d.train.empty() || d.gallery.empty() || d.probe.empty())
    throw std::invalid_argument("dataset needs train, gallery and probe records");
  d.image_size = d.train.front()->image.height;
  d.landmark_count = ds.landmark_count;
  for (const auto& r : ds.records)
    if (r.image.height != d.image_size || r.image.width != d.image_size || r.image.channels != 1)
      throw std::invalid_argument(r.path + ": images must be square, single-channel and equally sized");
  std::vector<PosedLandmarks> frontal;
  for (const auto* r : d.train) frontal.push_back({r->landmarks, r->yaw_proxy});
  d.five_point = compute_fixed_template(frontal, TemplateMode::FivePoint);
  d.dense = compute_fixed_template(frontal, TemplateMode::Dense);
  return d;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct BatchData {
  Tensor images;
  Tensor grid;
  std::vector<int> labels;
  std::vector<double> landmarks;
};

class BatchBuilder {
 public:
  BatchBuilder(const ExperimentConfig& cfg, const PreparedData& data) : cfg_(cfg), data_(data) {}

  BatchData build(const std::vector<const DatasetRecord*>& recs, std::size_t begin, std::size_t end) {
    const int b = static_cast<int>(end - begin);
    const int n = data_.image_size;
    const std::size_t px = static_cast<std::size_t>(n) * n;
    std::vector<double> img(b * px);
    BatchData out;
    for (std::size_t i = begin; i < end; ++i) {
      const auto* r = recs[i];
      std::copy(r->image.data.begin(), r->image.data.end(), img.begin() + (i - begin) * px);
      out.labels.push_back(r->identity);
      for (const auto& p : r->landmarks.points()) {
        out.landmarks.push_back(p.x);
        out.landmarks.push_back(p.y);
      }
    }
    out.images = Tensor({b, 1, n, n}, std::move(img));
    if (cfg_.method.kind == MethodKind::Affine2D || cfg_.method.kind == MethodKind::FullAlign) {
      std::vector<double> g;
      g.reserve(b * px * 2);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& cached = grid_for(recs[i]);
        g.insert(g.end(), cached.begin(), cached.end());
      }
      out.grid = Tensor({b, n, n, 2}, std::move(g));
    }
    return out;
  }

 private:
  const std::vector<double>& grid_for(const DatasetRecord* r) {
    auto it = grids_.find(r);
    if (it == grids_.end())
      it = grids_.emplace(r, fixed_method_grid(cfg_.method, r->landmarks, data_.context(), data_.image_size)).first;
    return it->second;
  }

  const ExperimentConfig& cfg_;
  const PreparedData& data_;
  std::map<const DatasetRecord*, std::vector<double>> grids_;
};

void check_finite(double v, int epoch, int step, const char* term) {
  if (!std::isfinite(v))
    throw NumericError("non-finite " + std::string(term) + " at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
}

std::vector<double> normalized_rows(const std::vector<double>& m, int dim) {
  std::vector<double> out(m);
  for (std::size_t r = 0; r * dim < m.size(); ++r) {
    double s = 0.0;
    for (int c = 0; c < dim; ++c) s += m[r * dim + c] * m[r * dim + c];
    const double inv = s > 0 ? 1.0 / std::sqrt(s) : 0.0;
    for (int c = 0; c < dim; ++c) out[r * dim + c] *= inv;
  }
  return out;
}

constexpr int kEvalBatch = 100;

struct Embedded {
  std::vector<double> embeddings;
  std::vector<int> ids;
  std::vector<LandmarkSet> deformed;
  int inversion_failures = 0;
};

Embedded embed_split(Model& model, const ExperimentConfig& cfg, const PreparedData& data,
                     const std::vector<const DatasetRecord*>& recs, bool deform) {
  nn::NoGradGuard no_grad;
  BatchBuilder builder(cfg, data);
  const AlignContext ctx = data.context();
  Embedded out;
  for (std::size_t begin = 0; begin < recs.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(recs.size(), begin + kEvalBatch);
    const BatchData batch = builder.build(recs, begin, end);
    const auto fwd = model.forward(batch.images, batch.grid, false, false);
    const auto e = fwd.embeddings.values();
    out.embeddings.insert(out.embeddings.end(), e.begin(), e.end());
    for (std::size_t i = begin; i < end; ++i) {
      out.ids.push_back(recs[i]->identity);
      if (!deform) continue;
      const auto& gt = recs[i]->landmarks;
      if (!cfg.method.learned()) {
        out.deformed.push_back(deform_landmarks(cfg.method, method_transform(cfg.method, Image(), gt, ctx), gt, ctx));
        continue;
      }
      const Transform t = model.predicted_transform(fwd.theta, static_cast<int>(i - begin));
      AlignContext wide = ctx;
      bool ok = false;
      for (double extent : {1.5, 3.0}) {
        wide.inversion_extent = extent;
        try {
          out.deformed.push_back(deform_landmarks(cfg.method, t, gt, wide));
          ok = true;
          break;
        } catch (const NotInvertibleError&) {
        }
      }
      if (!ok) ++out.inversion_failures;
    }
  }
  return out;
}

nlohmann::json report_json(const LossReport& r, int epoch) {
  return {{"epoch", epoch},          {"l_fr", round_sig9(r.l_fr)},       {"l_lmk", round_sig9(r.l_lmk)},
          {"l_reg", round_sig9(r.l_reg)}, {"l_align", round_sig9(r.l_align)}, {"total", round_sig9(r.total)},
          {"lambda", round_sig9(r.lambda)}};
}

}  // namespace

double rank1_accuracy(const std::vector<double>& gallery, const std::vector<int>& gallery_ids,
                      const std::vector<double>& probes, const std::vector<int>& probe_ids, int dim,
                      std::vector<char>* correct) {
  if (gallery_ids.empty() || probe_ids.empty()) throw std::invalid_argument("rank1_accuracy: empty gallery or probes");
  const auto g = normalized_rows(gallery, dim);
  const auto p = normalized_rows(probes, dim);
  int hits = 0;
  if (correct) correct->assign(probe_ids.size(), 0);
  for (std::size_t i = 0; i < probe_ids.size(); ++i) {
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < gallery_ids.size(); ++j) {
      double s = 0.0;
      for (int c = 0; c < dim; ++c) s += p[i * dim + c] * g[j * dim + c];
      if (s > best) {
        best = s;
        arg = j;
      }
    }
    if (gallery_ids[arg] == probe_ids[i]) {
      ++hits;
      if (correct) (*correct)[i] = 1;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(probe_ids.size());
}

EvalResult evaluate(Model& model, const ExperimentConfig& cfg, const PreparedData& data) {
  const Embedded gal = embed_split(model, cfg, data, data.gallery, false);
  const Embedded prb = embed_split(model, cfg, data, data.probe, true);
  EvalResult r;
  std::vector<char> correct;
  r.rank1_overall = rank1_accuracy(gal.embeddings, gal.ids, prb.embeddings, prb.ids, cfg.embedding_dim, &correct);
  int counts[4] = {0, 0, 0, 0}, hits[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < data.probe.size(); ++i) {
    const int b = yaw_bucket(data.probe[i]->yaw_proxy);
    if (b < 0) continue;
    ++counts[b];
    hits[b] += correct[i];
  }
  for (int b = 0; b < 4; ++b)
    r.buckets.push_back({kYawBuckets[b].name, counts[b], counts[b] ? static_cast<double>(hits[b]) / counts[b] : 0.0});
  r.inversion_failures = prb.inversion_failures;
  r.anme_samples = static_cast<int>(prb.deformed.size());
  r.anme = prb.deformed.size() >= 2 ? anme(prb.deformed) : 0.0;
  return r;
}

RunResult train_run(const ExperimentConfig& cfg, const Dataset& ds, const TrainOptions& opts) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const PreparedData data = prepare_data(ds);
  Template init = data.dense;
  if (cfg.template_source == TemplateSource::FixedFromLearned) init = read_template(cfg.template_path);
  init.validate(data.landmark_count);

  Model model(cfg, ds.identity_count(), data.landmark_count, data.image_size, init);
  auto main_params = model.recognition_parameters();
  for (auto& p : model.alignment_parameters()) main_params.push_back(p);
  auto loc_params = model.locnet_parameters();
  nn::OptimizerState main_opt{cfg.learning_rate, cfg.momentum, cfg.weight_decay, {}};
  nn::OptimizerState loc_opt{cfg.learning_rate * cfg.locnet_lr_scale, cfg.momentum, cfg.weight_decay, {}};
  const nn::AmSoftmaxConfig am{cfg.am_margin, cfg.am_scale, ds.identity_count()};
  const bool terms = cfg.method.learned() && cfg.alignment_terms;
  const bool in_graph = cfg.uses_learned_alignment_terms();

  RunResult result;
  result.config = cfg;
  BatchBuilder builder(cfg, data);
  std::vector<const DatasetRecord*> order = data.train;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = nn::scheduled_learning_rate(cfg.learning_rate, epoch, cfg.epochs);
    main_opt.learning_rate = lr;
    loc_opt.learning_rate = lr * cfg.locnet_lr_scale;
    double s_fr = 0.0, s_lmk = 0.0, s_reg = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin + 2 <= order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      if (end - begin < 2) break;
      const BatchData batch = builder.build(order, begin, end);
      const auto fwd = model.forward(batch.images, batch.grid, true, terms);
      const Tensor l_fr = nn::am_softmax_loss(fwd.embeddings, model.class_weights(), batch.labels, am);
      check_finite(l_fr.item(), epoch + 1, steps, "l_fr");
      double v_lmk = 0.0, v_reg = 0.0;
      Tensor loss = l_fr;
      if (terms) {
        if (in_graph) {
          const Tensor l_lmk = nn::landmark_loss(fwd.warped_template, batch.landmarks, model.alpha_raw());
          const Tensor l_reg = nn::weight_regularizer(model.alpha_raw());
          v_lmk = l_lmk.item();
          v_reg = l_reg.item();
          loss = nn::add(l_fr, nn::scale(nn::add(l_lmk, l_reg), cfg.lambda));
        } else {
          v_lmk = nn::landmark_loss(fwd.warped_template.detach(), batch.landmarks, model.alpha_raw().detach()).item();
          v_reg = nn::weight_regularizer(model.alpha_raw().detach()).item();
        }
        check_finite(v_lmk, epoch + 1, steps, "l_lmk");
        check_finite(v_reg, epoch + 1, steps, "l_reg");
      }
      check_finite(loss.item(), epoch + 1, steps, "total");
      nn::backward(loss);
      nn::sgd_step(main_params, main_opt);
      if (!loc_params.empty()) {
        if (cfg.locnet_clip_norm > 0.0) nn::clip_grad_norm(loc_params, cfg.locnet_clip_norm);
        nn::sgd_step(loc_params, loc_opt);
      }
      model.clamp_template();
      s_fr += l_fr.item();
      s_lmk += v_lmk;
      s_reg += v_reg;
      ++steps;
    }
    if (steps == 0) throw std::invalid_argument("training split smaller than two samples");
    const LossReport rep = total_loss(s_fr / steps, s_lmk / steps, s_reg / steps, cfg.lambda);
    rep.validate();
    result.epochs.push_back(rep);
    if (opts.log)
      *opts.log << "epoch " << epoch + 1 << "/" << cfg.epochs << " lr " << sig9(lr) << " l_fr " << sig9(rep.l_fr)
                << " l_lmk " << sig9(rep.l_lmk) << " l_reg " << sig9(rep.l_reg) << " total " << sig9(rep.total)
                << std::endl;
  }
  result.eval = evaluate(model, cfg, data);
  result.alpha = model.current_weights().effective();
  result.alpha_logit = model.current_weights().raw;
  result.learned_template = model.current_template();
  result.parameter_count = model.parameter_count();
  if (cfg.record_wall_clock)
    result.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (opts.out_dir) {
    const auto j = run_result_to_json(result);
    validate_run_result(j);
    write_text_file(*opts.out_dir / "result.json", j.dump(2) + "\n");
    write_template(*opts.out_dir / "template.json", result.learned_template);
    nn::write_checkpoint(*opts.out_dir / "checkpoint.bin", model.to_checkpoint(config_to_json(cfg)));
  }
  return result;
}

nlohmann::json run_result_to_json(const RunResult& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (std::size_t i = 0; i < r.epochs.size(); ++i) epochs.push_back(report_json(r.epochs[i], static_cast<int>(i) + 1));
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : r.eval.buckets)
    buckets.push_back({{"name", b.name}, {"count", b.count}, {"rank1", round_sig9(b.rank1)}});
  nlohmann::json alpha = nlohmann::json::array();
  for (double a : r.alpha) alpha.push_back(round_sig9(a));
  nlohmann::json logit = nlohmann::json::array();
  for (double a : r.alpha_logit) logit.push_back(round_sig9(a));
  nlohmann::json j{{"config", config_to_json(r.config)},
                   {"seed", r.config.seed},
                   {"method", r.config.method.name()},
                   {"apply_at", to_string(r.config.apply_at)},
                   {"lambda", round_sig9(r.config.lambda)},
                   {"parameter_count", r.parameter_count},
                   {"epochs", epochs},
                   {"rank1", {{"overall", round_sig9(r.eval.rank1_overall)}, {"buckets", buckets}}},
                   {"anme", round_sig9(r.eval.anme)},
                   {"anme_samples", r.eval.anme_samples},
                   {"inversion_failures", r.eval.inversion_failures},
                   {"alpha", alpha},
                   {"alpha_logit", logit},
                   {"template", template_to_json(r.learned_template)}};
  if (r.wall_clock_s) j["wall_clock_s"] = round_sig9(*r.wall_clock_s);
  return j;
}

RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.config = config_from_json(j.at("config"));
  r.parameter_count = j.at("parameter_count").get<std::size_t>();
  for (const auto& e : j.at("epochs")) {
    LossReport rep;
    rep.l_fr = e.at("l_fr");
    rep.l_lmk = e.at("l_lmk");
    rep.l_reg = e.at("l_reg");
    rep.l_align = e.at("l_align");
    rep.total = e.at("total");
    rep.lambda = e.at("lambda");
    r.epochs.push_back(rep);
  }
  r.eval.rank1_overall = j.at("rank1").at("overall");
  for (const auto& b : j.at("rank1").at("buckets")) r.eval.buckets.push_back({b.at("name"), b.at("count"), b.at("rank1")});
  r.eval.anme = j.at("anme");
  r.eval.anme_samples = j.at("anme_samples");
  r.eval.inversion_failures = j.at("inversion_failures");
  r.alpha = j.at("alpha").get<std::vector<double>>();
  r.alpha_logit = j.at("alpha_logit").get<std::vector<double>>();
  r.learned_template = template_from_json(j.at("template"));
  if (j.contains("wall_clock_s")) r.wall_clock_s = j.at("wall_clock_s").get<double>();
  return r;
}

void validate_run_result(const nlohmann::json& j) {
  auto fail = [](const std::string& m) { throw std::runtime_error("invalid run result: " + m); };
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(j.at("rank1").at("overall").get<double>())) fail("overall rank-1 outside [0, 1]");
  for (const auto& b : j.at("rank1").at("buckets"))
    if (!in_unit(b.at("rank1").get<double>())) fail("bucket rank-1 outside [0, 1]");
  if (!(j.at("anme").get<double>() >= 0.0)) fail("negative ANME");
  for (const auto& e : j.at("epochs")) {
    const double fr = e.at("l_fr"), lmk = e.at("l_lmk"), reg = e.at("l_reg"), al = e.at("l_align"), tot = e.at("total"),
                 lam = e.at("lambda");
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-7 * std::max({1.0, std::abs(a), std::abs(b)}); };
    if (lmk < 0 || reg < 0) fail("negative alignment loss");
    if (!close(al, lmk + reg)) fail("l_align != l_lmk + l_reg");
    if (!close(tot, fr + lam * al)) fail("total != l_fr + lambda * l_align");
  }
  const auto alpha = j.at("alpha").get<std::vector<double>>();
  const auto logit = j.at("alpha_logit").get<std::vector<double>>();
  if (alpha.size() != logit.size()) fail("alpha and alpha_logit differ in length");
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!std::isfinite(logit[k])) fail("non-finite landmark weight logit");
    if (!in_unit(alpha[k]) || std::abs(alpha[k] - 1.0 / (1.0 + std::exp(-logit[k]))) > 1e-8)
      fail("landmark weight does not match sigmoid(logit)");
  }
}

}  // namespace balign::bench
