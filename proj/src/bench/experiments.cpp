#include "balign/bench/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "balign/bench/plots.hpp"
#include "balign/format.hpp"
#include "balign/landmark_io.hpp"

namespace balign::bench {

int worker_threads() {
  if (const char* env = std::getenv("BALIGN_THREADS")) {
    const int n = std::atoi(env);
    if (n < 1) throw std::invalid_argument("BALIGN_THREADS must be a positive integer");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string config_key(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config_to_json(cfg).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunCache::RunCache(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
  if (dir_) std::filesystem::create_directories(*dir_);
}

std::optional<RunResult> RunCache::find(const ExperimentConfig& cfg) {
  const std::string key = config_key(cfg);
  const auto want = config_to_json(cfg);
  std::lock_guard lock(mu_);
  if (auto it = memo_.find(key); it != memo_.end() && config_to_json(it->second.config) == want) return it->second;
  if (!dir_) return std::nullopt;
  const auto path = *dir_ / (key + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto j = read_json_file(path);
  if (j.at("config") != want) return std::nullopt;
  RunResult r = run_result_from_json(j);
  memo_[key] = r;
  return r;
}

void RunCache::store(const RunResult& r) {
  const std::string key = config_key(r.config);
  std::lock_guard lock(mu_);
  memo_[key] = r;
  if (dir_) write_text_file(*dir_ / (key + ".json"), run_result_to_json(r).dump(2) + "\n");
}

std::vector<RunResult> run_many(const std::vector<ExperimentConfig>& cfgs, const Dataset& ds,
                                const ExperimentOptions& opts) {
  std::vector<std::optional<RunResult>> results(cfgs.size());
  std::vector<std::exception_ptr> errors(cfgs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cfgs.size(); i = next++) {
      try {
        const auto& cfg = cfgs[i];
        bool cached = false;
        if (opts.cache) {
          if (auto hit = opts.cache->find(cfg)) {
            results[i] = std::move(hit);
            cached = true;
          }
        }
        if (!cached) {
          TrainOptions to;
          to.out_dir = opts.out_dir / "runs" / config_key(cfg);
          std::filesystem::create_directories(*to.out_dir);
          results[i] = train_run(cfg, ds, to);
          if (opts.cache) opts.cache->store(*results[i]);
        }
        if (opts.log) {
          const auto& r = *results[i];
          std::lock_guard lock(log_mu);
          *opts.log << "run " << config_key(cfg) << " " << cfg.method.name() << "@" << to_string(cfg.apply_at)
                    << " lambda " << sig9(cfg.lambda) << " seed " << cfg.seed << " rank1 " << sig9(r.eval.rank1_overall)
                    << " anme " << sig9(r.eval.anme) << (cached ? " (cached)" : "") << std::endl;
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(opts.threads, static_cast<int>(cfgs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<RunResult> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

ResultRow make_row(const std::string& group, const RunResult& r) {
  ResultRow row;
  row.group = group;
  row.seed = r.config.seed;
  row.lambda = r.config.lambda;
  row.method = r.config.method.name();
  row.apply_at = to_string(r.config.apply_at);
  row.anme = round_sig9(r.eval.anme);
  row.rank1 = round_sig9(r.eval.rank1_overall);
  for (std::size_t b = 0; b < row.bucket_rank1.size() && b < r.eval.buckets.size(); ++b)
    row.bucket_rank1[b] = round_sig9(r.eval.buckets[b].rank1);
  return row;
}

namespace {

constexpr const char* kCsvHeader =
    "group,method,apply_at,lambda,seed,anme,rank1_overall,rank1_0_15,rank1_15_30,rank1_30_45,rank1_45_60";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void write_rows(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  write_text_file(path, rows_to_csv(rows));
}

/// Rows in a stable order: by group appearance in `order`, then seed.
std::vector<ResultRow> sorted_rows(std::vector<ResultRow> rows, const std::vector<std::string>& order) {
  auto rank = [&order](const std::string& g) {
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), g) - order.begin());
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) {
    if (rank(a.group) != rank(b.group)) return rank(a.group) < rank(b.group);
    return a.seed < b.seed;
  });
  return rows;
}

void check_seeds(const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw std::invalid_argument("duplicate seed values");
}

ExperimentConfig with_seed(ExperimentConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

}  // namespace

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  o << kCsvHeader << "\n";
  for (const auto& r : rows) {
    o << r.group << "," << r.method << "," << r.apply_at << "," << sig9(r.lambda) << "," << r.seed << ","
      << sig9(r.anme) << "," << sig9(r.rank1);
    for (double b : r.bucket_rank1) o << "," << sig9(b);
    o << "\n";
  }
  return o.str();
}

std::vector<ResultRow> rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("result CSV: unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 11) throw std::runtime_error("result CSV: expected 11 cells in '" + line + "'");
    ResultRow r;
    r.group = cells[0];
    r.method = cells[1];
    r.apply_at = cells[2];
    r.lambda = std::stod(cells[3]);
    r.seed = std::stoull(cells[4]);
    r.anme = std::stod(cells[5]);
    r.rank1 = std::stod(cells[6]);
    for (std::size_t b = 0; b < 4; ++b) r.bucket_rank1[b] = std::stod(cells[7 + b]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<GroupMean> group_means(const std::vector<ResultRow>& rows) {
  std::vector<GroupMean> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const GroupMean& g) { return g.group == r.group; });
    if (it == out.end()) {
      out.push_back({r.group, r.lambda, 0, 0.0, 0.0, {}});
      it = std::prev(out.end());
    }
    ++it->runs;
    it->anme += r.anme;
    it->rank1 += r.rank1;
    for (std::size_t b = 0; b < 4; ++b) it->bucket_rank1[b] += r.bucket_rank1[b];
  }
  for (auto& g : out) {
    const double n = static_cast<double>(g.runs);
    g.anme /= n;
    g.rank1 /= n;
    for (double& b : g.bucket_rank1) b /= n;
  }
  return out;
}

std::string sweep_svg(const std::vector<ResultRow>& rows) {
  auto means = group_means(rows);
  std::sort(means.begin(), means.end(), [](const GroupMean& a, const GroupMean& b) { return a.lambda < b.lambda; });
  PlotSeries mean{"mean over seeds", {}, true, 4.5};
  for (const auto& g : means) mean.points.push_back({g.anme, g.rank1, "lambda=" + sig9(g.lambda)});
  PlotSeries runs{"single run", {}, false, 2.0};
  for (const auto& r : rows) runs.points.push_back({r.anme, r.rank1, ""});
  return render_svg({"Rank-1 against alignment strength", "ANME (lower = stronger alignment)", "rank-1",
                     {mean, runs}, {}});
}

std::string baselines_svg(const std::vector<ResultRow>& rows) {
  std::vector<std::string> methods;
  for (const auto& r : rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  std::vector<PlotSeries> series;
  for (const char* mode : {"input", "fmap"}) {
    PlotSeries s{std::string("align@") + mode, {}, false, 4.5};
    for (std::size_t m = 0; m < methods.size(); ++m) {
      double sum = 0.0;
      int n = 0;
      for (const auto& r : rows)
        if (r.method == methods[m] && r.apply_at == mode) sum += r.rank1, ++n;
      if (n > 0) s.points.push_back({static_cast<double>(m), sum / n, ""});
    }
    series.push_back(s);
  }
  return render_svg({"Rank-1 by alignment method", "method", "mean rank-1", series, methods});
}

SweepOutput sweep_lambda(const ExperimentConfig& base, const std::vector<double>& lambdas,
                         const std::vector<std::uint64_t>& seeds, const Dataset& ds, const ExperimentOptions& opts) {
  if (lambdas.size() < 2) throw std::invalid_argument("sweep-lambda needs at least two lambda values");
  if (std::set<double>(lambdas.begin(), lambdas.end()).size() != lambdas.size())
    throw std::invalid_argument("sweep-lambda: duplicate lambda values");
  for (double l : lambdas)
    if (!(l >= 0.0)) throw std::invalid_argument("sweep-lambda: lambda must be >= 0");
  check_seeds(seeds);
  std::vector<ExperimentConfig> cfgs;
  std::vector<std::string> order;
  for (double l : lambdas) {
    order.push_back(sig9(l));
    for (auto s : seeds) {
      auto c = with_seed(base, s);
      c.lambda = l;
      c.validate();
      cfgs.push_back(c);
    }
  }
  const auto results = run_many(cfgs, ds, opts);
  std::vector<ResultRow> rows;
  for (const auto& r : results) rows.push_back(make_row(sig9(r.config.lambda), r));
  SweepOutput out{sorted_rows(rows, order), opts.out_dir / "sweep_lambda.csv", opts.out_dir / "sweep_lambda.svg"};
  std::filesystem::create_directories(opts.out_dir);
  write_rows(out.csv, out.rows);
  write_text_file(out.svg, sweep_svg(out.rows));
  return out;
}

BaselinesOutput baselines(const ExperimentConfig& base, const std::vector<AlignmentMethod>& methods,
                          const std::vector<std::uint64_t>& seeds, const Dataset& ds, const ExperimentOptions& opts) {
  if (methods.empty()) throw std::invalid_argument("baselines: no methods given");
  check_seeds(seeds);
  std::vector<ExperimentConfig> cfgs;
  std::vector<std::string> order;
  for (const auto& m : methods)
    for (ApplyAt at : {ApplyAt::Input, ApplyAt::FeatureMap}) {
      order.push_back(m.name() + "@" + to_string(at));
      for (auto s : seeds) {
        auto c = with_seed(base, s);
        c.method = m;
        c.apply_at = at;
        c.lambda = 0.0;
        c.template_source = TemplateSource::Fixed;
        c.template_path.clear();
        c.weights_mode = WeightsMode::Fixed;
        c.validate();
        cfgs.push_back(c);
      }
    }
  const auto results = run_many(cfgs, ds, opts);
  std::vector<ResultRow> rows;
  for (const auto& r : results) rows.push_back(make_row(r.config.method.name() + "@" + to_string(r.config.apply_at), r));
  BaselinesOutput out{sorted_rows(rows, order), opts.out_dir / "baselines.csv", opts.out_dir / "baselines.svg"};
  std::filesystem::create_directories(opts.out_dir);
  write_rows(out.csv, out.rows);
  write_text_file(out.svg, baselines_svg(out.rows));
  return out;
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "weights") return AblationAxis::Weights;
  if (s == "template") return AblationAxis::Template;
  throw std::invalid_argument("unknown ablation axis '" + s + "' (expected weights or template)");
}

AblationOutput ablate(const ExperimentConfig& base, AblationAxis axis, const std::vector<std::uint64_t>& seeds,
                      const Dataset& ds, const ExperimentOptions& opts) {
  check_seeds(seeds);
  if (!base.method.learned()) throw std::invalid_argument("ablate: needs a learned (stn-*) method");
  if (!(base.lambda > 0.0)) throw std::invalid_argument("ablate: needs lambda > 0 so the alignment terms train");
  std::filesystem::create_directories(opts.out_dir);
  AblationOutput out;
  std::vector<ResultRow> rows;

  if (axis == AblationAxis::Weights) {
    std::vector<ExperimentConfig> cfgs;
    for (WeightsMode w : {WeightsMode::Fixed, WeightsMode::Learnable})
      for (auto s : seeds) {
        auto c = with_seed(base, s);
        c.weights_mode = w;
        c.validate();
        cfgs.push_back(c);
      }
    const auto results = run_many(cfgs, ds, opts);
    std::ostringstream alpha_csv;
    alpha_csv << "seed,landmark,alpha,alpha_logit\n";
    for (const auto& r : results) {
      const bool learnable = r.config.weights_mode == WeightsMode::Learnable;
      rows.push_back(make_row(learnable ? "learnable-alpha" : "fixed-alpha", r));
      if (!learnable) continue;
      out.learned_alpha.emplace_back(r.config.seed, r.alpha);
      out.learned_alpha_logit.emplace_back(r.config.seed, r.alpha_logit);
      for (std::size_t k = 0; k < r.alpha.size(); ++k)
        alpha_csv << r.config.seed << "," << k << "," << sig9(r.alpha[k]) << "," << sig9(r.alpha_logit[k]) << "\n";
    }
    out.rows = sorted_rows(rows, {"fixed-alpha", "learnable-alpha"});
    out.csv = opts.out_dir / "ablate_weights.csv";
    out.alpha_csv = opts.out_dir / "ablate_weights_alpha.csv";
    write_text_file(*out.alpha_csv, alpha_csv.str());
  } else {
    std::vector<ExperimentConfig> cfgs;
    for (TemplateSource t : {TemplateSource::Fixed, TemplateSource::Learnable})
      for (auto s : seeds) {
        auto c = with_seed(base, s);
        c.template_source = t;
        c.template_path.clear();
        c.validate();
        cfgs.push_back(c);
      }
    const auto first = run_many(cfgs, ds, opts);
    std::vector<ExperimentConfig> frozen;
    const auto template_dir = opts.out_dir / "templates";
    std::filesystem::create_directories(template_dir);
    for (const auto& r : first) {
      const bool learnable = r.config.template_source == TemplateSource::Learnable;
      rows.push_back(make_row(learnable ? "learnable-template" : "fixed-template", r));
      if (!learnable) continue;
      const auto path = template_dir / ("learned_seed" + std::to_string(r.config.seed) + ".json");
      Template t = r.learned_template;
      t.learnable = false;
      write_template(path, t);
      auto c = r.config;
      c.template_source = TemplateSource::FixedFromLearned;
      c.template_path = std::filesystem::absolute(path).string();
      c.validate();
      frozen.push_back(c);
    }
    for (const auto& r : run_many(frozen, ds, opts)) rows.push_back(make_row("frozen-learned-template", r));
    out.rows = sorted_rows(rows, {"fixed-template", "learnable-template", "frozen-learned-template"});
    out.csv = opts.out_dir / "ablate_template.csv";
  }
  write_rows(out.csv, out.rows);
  return out;
}

}  // namespace balign::bench
