#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "balign/bench/config.hpp"
#include "balign/bench/trainer.hpp"
#include "balign/synth.hpp"

namespace balign::bench {

/// Worker count: BALIGN_THREADS when set (>= 1), else the hardware concurrency.
int worker_threads();

/// Stable 16-hex-digit key of a config (FNV-1a over its canonical JSON).
std::string config_key(const ExperimentConfig& cfg);

/// Memo of finished runs keyed by config. With a directory, results persist
/// as <dir>/<key>.json and are reused by later processes.
class RunCache {
 public:
  explicit RunCache(std::optional<std::filesystem::path> dir = std::nullopt);
  std::optional<RunResult> find(const ExperimentConfig& cfg);
  void store(const RunResult& r);

 private:
  std::optional<std::filesystem::path> dir_;
  std::mutex mu_;
  std::map<std::string, RunResult> memo_;
};

struct ExperimentOptions {
  std::filesystem::path out_dir;
  RunCache* cache = nullptr;
  int threads = 1;
  std::ostream* log = nullptr;  // one line per finished run
};

/// Trains every config (in parallel, each worker owning its model) and
/// returns results in input order. Already-cached configs are not retrained.
std::vector<RunResult> run_many(const std::vector<ExperimentConfig>& cfgs, const Dataset& ds,
                                const ExperimentOptions& opts);

/// One evaluated run as written to the result CSVs.
struct ResultRow {
  std::string group;  // lambda value, method/apply-at pair or ablation variant
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::string method;
  std::string apply_at;
  double anme = 0.0;
  double rank1 = 0.0;
  std::array<double, 4> bucket_rank1{};
};

ResultRow make_row(const std::string& group, const RunResult& r);

/// CSV with header
/// group,method,apply_at,lambda,seed,anme,rank1_overall,rank1_0_15,rank1_15_30,rank1_30_45,rank1_45_60
std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> rows_from_csv(const std::string& text);

/// Mean over seeds per group, in first-appearance order of the groups.
struct GroupMean {
  std::string group;
  double lambda = 0.0;
  std::size_t runs = 0;
  double anme = 0.0;
  double rank1 = 0.0;
  std::array<double, 4> bucket_rank1{};
};
std::vector<GroupMean> group_means(const std::vector<ResultRow>& rows);

/// Mean rank-1 against mean ANME, one labelled point per lambda.
std::string sweep_svg(const std::vector<ResultRow>& rows);
/// Mean rank-1 per method, one series per apply-at mode.
std::string baselines_svg(const std::vector<ResultRow>& rows);

struct SweepOutput {
  std::vector<ResultRow> rows;
  std::filesystem::path csv, svg;
};
/// Every (lambda, seed) pair of `base`. Needs >= 2 distinct lambdas; writes
/// sweep_lambda.csv and sweep_lambda.svg under opts.out_dir.
SweepOutput sweep_lambda(const ExperimentConfig& base, const std::vector<double>& lambdas,
                         const std::vector<std::uint64_t>& seeds, const Dataset& ds, const ExperimentOptions& opts);

struct BaselinesOutput {
  std::vector<ResultRow> rows;
  std::filesystem::path csv, svg;
};
/// Every method at both apply-at modes and every seed, lambda 0. Writes
/// baselines.csv and baselines.svg.
BaselinesOutput baselines(const ExperimentConfig& base, const std::vector<AlignmentMethod>& methods,
                          const std::vector<std::uint64_t>& seeds, const Dataset& ds, const ExperimentOptions& opts);

enum class AblationAxis { Weights, Template };
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationOutput {
  std::vector<ResultRow> rows;
  /// Weights axis: learned alpha and its logit per (seed, landmark).
  std::vector<std::pair<std::uint64_t, std::vector<double>>> learned_alpha;
  std::vector<std::pair<std::uint64_t, std::vector<double>>> learned_alpha_logit;
  std::filesystem::path csv;
  std::optional<std::filesystem::path> alpha_csv;
};
/// Weights axis: variants "fixed-alpha" (base fixed_alpha) and
/// "learnable-alpha"; writes ablate_weights.csv and ablate_weights_alpha.csv
/// (seed,landmark,alpha,alpha_logit). Template axis: "fixed-template", "learnable-template"
/// and "frozen-learned-template" (the learned template of the same seed
/// reloaded as a fixed one); writes ablate_template.csv.
AblationOutput ablate(const ExperimentConfig& base, AblationAxis axis, const std::vector<std::uint64_t>& seeds,
                      const Dataset& ds, const ExperimentOptions& opts);

}  // namespace balign::bench
