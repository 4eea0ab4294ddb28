#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "balign/bench/config.hpp"
#include "balign/bench/experiments.hpp"
#include "balign/bench/gradcheck.hpp"
#include "balign/bench/pipeline.hpp"
#include "balign/bench/trainer.hpp"
#include "balign/bench/warp_demo.hpp"
#include "balign/errors.hpp"
#include "balign/format.hpp"
#include "balign/landmark_io.hpp"
#include "balign/nn/checkpoint.hpp"
#include "balign/synth.hpp"

namespace fs = std::filesystem;
using namespace balign;
using namespace balign::bench;

namespace {

/// Shared --config plus per-run overrides.
struct RunFlags {
  std::string config;
  std::string manifest;
  std::optional<double> lambda;
  std::string method;
  std::string apply_at;
  std::optional<int> grid_size;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Experiment config JSON");
    app->add_option("--manifest", manifest, "Dataset manifest (overrides the config)");
    app->add_option("--lambda", lambda, "Alignment loss ratio");
    app->add_option("--method", method, "none|affine2d|stn-proj|stn-tps-<G>|full-align");
    app->add_option("--apply-at", apply_at, "input|fmap");
    app->add_option("--grid-size", grid_size, "TPS control grid size for stn-tps");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--epochs", epochs, "Training epochs");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : config_from_json(read_json_file(config));
    if (!manifest.empty()) c.manifest = manifest;
    if (lambda) c.lambda = *lambda;
    if (!method.empty()) c.method = AlignmentMethod::parse(method);
    if (!apply_at.empty()) c.apply_at = apply_at_from_string(apply_at);
    if (grid_size) {
      if (c.method.kind != MethodKind::StnTps) throw std::invalid_argument("--grid-size applies to stn-tps methods only");
      c.method.grid_size = *grid_size;
      c.method = AlignmentMethod::parse(c.method.name());
    }
    if (seed) c.seed = *seed;
    if (epochs) c.epochs = *epochs;
    if (c.manifest.empty()) throw std::invalid_argument("no dataset: pass --manifest or set \"manifest\" in --config");
    c.validate();
    return c;
  }
};

template <typename T>
std::vector<T> parse_list(const std::string& s, T (*conv)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(conv(item));
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}
std::uint64_t to_seed(const std::string& s) { return std::stoull(s); }
AlignmentMethod to_method(const std::string& s) { return AlignmentMethod::parse(s); }

void print_eval(std::ostream& os, const EvalResult& e) {
  os << "rank1 " << sig9(e.rank1_overall);
  for (const auto& b : e.buckets) os << " [" << b.name << ": " << sig9(b.rank1) << " of " << b.count << "]";
  os << "\nanme " << sig9(e.anme) << " (" << e.anme_samples << " probes, " << e.inversion_failures
     << " inversion failures)\n";
}

ExperimentOptions experiment_options(const std::string& out, const std::string& cache_dir,
                                     std::optional<RunCache>& cache) {
  ExperimentOptions o;
  o.out_dir = out;
  o.threads = worker_threads();
  o.log = &std::cout;
  cache.emplace(cache_dir.empty() ? std::nullopt : std::optional<fs::path>(cache_dir));
  o.cache = &*cache;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced alignment laboratory: synthetic faces, jointly trained alignment and recognition"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic face dataset");
  std::string gen_config, gen_out = "data";
  std::optional<int> gen_ids, gen_train, gen_test;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "Dataset config JSON");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--ids", gen_ids, "Number of identities");
  gen->add_option("--train-per-id", gen_train, "Training samples per identity");
  gen->add_option("--test-per-id", gen_test, "Test samples per identity (1 gallery + probes)");
  gen->add_option("--seed", gen_seed, "Dataset seed");

  // train
  auto* train = app.add_subcommand("train", "Train one model and evaluate it");
  RunFlags train_flags;
  std::string train_out = "run";
  train_flags.add_to(train);
  train->add_option("--out", train_out, "Output directory (result.json, checkpoint.bin, template.json)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its dataset");
  std::string eval_ckpt, eval_manifest, eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint.bin written by train")->required();
  eval->add_option("--manifest", eval_manifest, "Dataset manifest (default: the one in the checkpoint config)");
  eval->add_option("--out", eval_out, "Optional JSON file for the evaluation");

  // sweep-lambda
  auto* sweep = app.add_subcommand("sweep-lambda", "Train over lambda values and seeds");
  RunFlags sweep_flags;
  std::string sweep_lambdas = "0,1,3,5,7", sweep_seeds, sweep_out = "sweep", sweep_cache;
  sweep_flags.add_to(sweep);
  sweep->add_option("--lambdas", sweep_lambdas, "Comma-separated lambda values");
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds (default: config seeds)");
  sweep->add_option("--out", sweep_out, "Output directory");
  sweep->add_option("--cache", sweep_cache, "Directory reusing finished runs across invocations");

  // baselines
  auto* base = app.add_subcommand("baselines", "Compare alignment methods at input and feature-map level");
  RunFlags base_flags;
  std::string base_methods = "none,affine2d,stn-proj,stn-tps-2,stn-tps-8,full-align", base_seeds,
              base_out = "baselines", base_cache;
  base_flags.add_to(base);
  base->add_option("--methods", base_methods, "Comma-separated methods");
  base->add_option("--seeds", base_seeds, "Comma-separated seeds (default: --seed or the config seed)");
  base->add_option("--out", base_out, "Output directory");
  base->add_option("--cache", base_cache, "Directory reusing finished runs across invocations");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Landmark-weight or template ablation");
  RunFlags abl_flags;
  std::string abl_axis, abl_seeds, abl_out = "ablate", abl_cache;
  abl_flags.add_to(abl);
  abl->add_option("--axis", abl_axis, "weights|template")->required();
  abl->add_option("--seeds", abl_seeds, "Comma-separated seeds (default: config seeds)");
  abl->add_option("--out", abl_out, "Output directory");
  abl->add_option("--cache", abl_cache, "Directory reusing finished runs across invocations");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check of every differentiable component");
  std::uint64_t gc_seed = 7;
  gc->add_option("--seed", gc_seed, "Seed of the random instances");

  // warp-demo
  auto* demo = app.add_subcommand("warp-demo", "Warp one annotated image and draw the landmark overlay");
  std::string demo_image, demo_lmk, demo_method = "affine2d", demo_out = "warped.pgm", demo_manifest, demo_ckpt;
  demo->add_option("--image", demo_image, "Input PGM")->required();
  demo->add_option("--landmarks", demo_lmk, "Landmark JSON of the image")->required();
  demo->add_option("--method", demo_method, "Alignment method");
  demo->add_option("--out", demo_out, "Warped PGM (the SVG overlay is written next to it)");
  demo->add_option("--manifest", demo_manifest, "Dataset manifest providing templates (affine2d, full-align)");
  demo->add_option("--checkpoint", demo_ckpt, "Trained checkpoint (stn-* methods)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      DatasetConfig c = gen_config.empty() ? DatasetConfig{} : dataset_config_from_json(read_json_file(gen_config));
      if (gen_ids) c.identities = *gen_ids;
      if (gen_train) c.train_per_id = *gen_train;
      if (gen_test) c.test_per_id = *gen_test;
      if (gen_seed) c.seed = *gen_seed;
      const auto manifest = gen_dataset(c, gen_out);
      std::cout << manifest.string() << "\n";
    } else if (train->parsed()) {
      const auto cfg = train_flags.resolve();
      const Dataset ds = load_dataset(cfg.manifest);
      TrainOptions o;
      o.out_dir = fs::path(train_out);
      o.log = &std::cout;
      fs::create_directories(train_out);
      const auto r = train_run(cfg, ds, o);
      print_eval(std::cout, r.eval);
      std::cout << "wrote " << (fs::path(train_out) / "result.json").string() << "\n";
    } else if (eval->parsed()) {
      const auto ck = nn::read_checkpoint(eval_ckpt);
      ExperimentConfig cfg = config_from_json(ck.config);
      if (!eval_manifest.empty()) cfg.manifest = eval_manifest;
      const Dataset ds = load_dataset(cfg.manifest);
      const PreparedData data = prepare_data(ds);
      Model model = model_from_checkpoint(ck, data.image_size);
      const EvalResult e = evaluate(model, cfg, data);
      print_eval(std::cout, e);
      if (!eval_out.empty()) {
        nlohmann::json buckets = nlohmann::json::array();
        for (const auto& b : e.buckets) buckets.push_back({{"name", b.name}, {"count", b.count}, {"rank1", round_sig9(b.rank1)}});
        write_text_file(eval_out, nlohmann::json{{"rank1", {{"overall", round_sig9(e.rank1_overall)}, {"buckets", buckets}}},
                                                 {"anme", round_sig9(e.anme)},
                                                 {"anme_samples", e.anme_samples},
                                                 {"inversion_failures", e.inversion_failures}}
                                          .dump(2) + "\n");
      }
    } else if (sweep->parsed()) {
      const auto cfg = sweep_flags.resolve();
      const auto seeds = sweep_seeds.empty() ? cfg.seeds : parse_list<std::uint64_t>(sweep_seeds, to_seed);
      const Dataset ds = load_dataset(cfg.manifest);
      std::optional<RunCache> cache;
      const auto out = sweep_lambda(cfg, parse_list<double>(sweep_lambdas, to_double), seeds, ds,
                                    experiment_options(sweep_out, sweep_cache, cache));
      for (const auto& g : group_means(out.rows))
        std::cout << "lambda " << g.group << " mean anme " << sig9(g.anme) << " mean rank1 " << sig9(g.rank1) << "\n";
      std::cout << "wrote " << out.csv.string() << " and " << out.svg.string() << "\n";
    } else if (base->parsed()) {
      const auto cfg = base_flags.resolve();
      const auto seeds =
          base_seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_list<std::uint64_t>(base_seeds, to_seed);
      const Dataset ds = load_dataset(cfg.manifest);
      std::optional<RunCache> cache;
      const auto out = baselines(cfg, parse_list<AlignmentMethod>(base_methods, to_method), seeds, ds,
                                 experiment_options(base_out, base_cache, cache));
      for (const auto& g : group_means(out.rows))
        std::cout << g.group << " mean anme " << sig9(g.anme) << " mean rank1 " << sig9(g.rank1) << "\n";
      std::cout << "wrote " << out.csv.string() << " and " << out.svg.string() << "\n";
    } else if (abl->parsed()) {
      const auto cfg = abl_flags.resolve();
      const auto seeds = abl_seeds.empty() ? cfg.seeds : parse_list<std::uint64_t>(abl_seeds, to_seed);
      const Dataset ds = load_dataset(cfg.manifest);
      std::optional<RunCache> cache;
      const auto out = ablate(cfg, ablation_axis_from_string(abl_axis), seeds, ds,
                              experiment_options(abl_out, abl_cache, cache));
      for (const auto& g : group_means(out.rows))
        std::cout << g.group << " mean anme " << sig9(g.anme) << " mean rank1 " << sig9(g.rank1) << "\n";
      std::cout << "wrote " << out.csv.string() << (out.alpha_csv ? " and " + out.alpha_csv->string() : "") << "\n";
    } else if (gc->parsed()) {
      const auto report = run_grad_check(gc_seed);
      report.print(std::cout);
      return report.passed() ? 0 : 1;
    } else if (demo->parsed()) {
      WarpDemoOptions o;
      o.image = demo_image;
      o.landmarks = demo_lmk;
      o.method = AlignmentMethod::parse(demo_method);
      o.out = demo_out;
      if (!demo_manifest.empty()) o.manifest = demo_manifest;
      if (!demo_ckpt.empty()) o.checkpoint = demo_ckpt;
      const auto r = run_warp_demo(o);
      std::cout << "wrote " << o.out.string() << " and " << r.svg_path.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
