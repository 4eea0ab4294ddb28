#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/align.hpp"
#include "balign/bench/config.hpp"
#include "balign/bench/pipeline.hpp"
#include "balign/synth.hpp"

namespace balign::bench {

/// Probe buckets by |yaw|: [0, 15), [15, 30), [30, 45), [45, 60].
struct YawBucket {
  const char* name;
  double lo;
  double hi;
};
inline constexpr YawBucket kYawBuckets[4] = {{"0-15", 0, 15}, {"15-30", 15, 30}, {"30-45", 30, 45}, {"45-60", 45, 60}};
int yaw_bucket(double yaw);

struct BucketResult {
  std::string name;
  int count = 0;
  double rank1 = 0.0;
};

struct EvalResult {
  double rank1_overall = 0.0;
  std::vector<BucketResult> buckets;
  double anme = 0.0;
  int anme_samples = 0;
  int inversion_failures = 0;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<LossReport> epochs;
  EvalResult eval;
  std::vector<double> alpha;        // effective weights
  std::vector<double> alpha_logit;  // raw weights; alpha = sigmoid(alpha_logit)
  Template learned_template;
  std::size_t parameter_count = 0;
  std::optional<double> wall_clock_s;
};

nlohmann::json run_result_to_json(const RunResult& r);
/// Inverse of run_result_to_json (values carry its 9-digit rounding).
RunResult run_result_from_json(const nlohmann::json& j);
/// Checks rank-1 ranges, ANME >= 0, the loss-report identities and that each
/// alpha matches its finite logit (a saturated alpha may round to 0 or 1); throws
/// std::runtime_error describing the first violation.
void validate_run_result(const nlohmann::json& j);

/// Dataset views shared by training and evaluation: templates from frontal
/// training samples and per-record grids for landmark-driven methods.
struct PreparedData {
  const Dataset* dataset = nullptr;
  int image_size = 0;
  int landmark_count = 0;
  Template five_point;
  Template dense;
  std::vector<const DatasetRecord*> train, gallery, probe;

  AlignContext context() const;
};
PreparedData prepare_data(const Dataset& ds);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // result.json, checkpoint.bin, template.json
  std::ostream* log = nullptr;
};

/// Trains per the config (epochs may be 0) and evaluates on gallery/probes.
/// Throws NumericError naming epoch and term on a non-finite loss.
RunResult train_run(const ExperimentConfig& cfg, const Dataset& ds, const TrainOptions& opts = {});

/// Evaluates an already-built model.
EvalResult evaluate(Model& model, const ExperimentConfig& cfg, const PreparedData& data);

/// Rank-1 of cosine nearest-gallery search. Embeddings are row-major.
double rank1_accuracy(const std::vector<double>& gallery, const std::vector<int>& gallery_ids,
                      const std::vector<double>& probes, const std::vector<int>& probe_ids, int dim,
                      std::vector<char>* correct = nullptr);

}  // namespace balign::bench
