// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is nonzero when any line fails.
//
// usage: acceptance [--workdir DIR] [--only N[,N...]]
// The workdir holds the default dataset and a run cache, so an interrupted
// run resumes without retraining finished configurations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "balign/align.hpp"
#include "balign/bench/config.hpp"
#include "balign/bench/experiments.hpp"
#include "balign/bench/gradcheck.hpp"
#include "balign/bench/pipeline.hpp"
#include "balign/bench/trainer.hpp"
#include "balign/format.hpp"
#include "balign/geometry.hpp"
#include "balign/sampler.hpp"
#include "balign/synth.hpp"

namespace fs = std::filesystem;
using namespace balign;
using namespace balign::bench;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return sig9(v); }
std::string pts(double v) { return sig9(std::round(v * 1e4) / 100.0); }

struct Lab {
  fs::path workdir;
  Dataset ds;
  ExperimentConfig base;
  std::unique_ptr<RunCache> cache;
  std::vector<std::uint64_t> seeds{7, 8, 9};

  ExperimentOptions options(const std::string& sub) const {
    ExperimentOptions o;
    o.out_dir = workdir / sub;
    fs::create_directories(o.out_dir);
    o.cache = cache.get();
    o.threads = worker_threads();
    o.log = &std::cerr;
    return o;
  }
};

Lab& lab(const fs::path& workdir) {
  static Lab l;
  static bool ready = false;
  if (ready) return l;
  l.workdir = workdir;
  fs::create_directories(workdir);
  const fs::path manifest = workdir / "data" / "manifest.json";
  if (!fs::exists(manifest)) gen_dataset(DatasetConfig{}, workdir / "data");
  l.ds = load_dataset(manifest);
  l.base.manifest = fs::absolute(manifest).string();
  l.base.record_wall_clock = true;
  l.base.seeds = l.seeds;
  l.base.validate();
  l.cache = std::make_unique<RunCache>(workdir / "runs");
  ready = true;
  return l;
}

std::map<double, GroupMean> means_by_lambda(const std::vector<ResultRow>& rows) {
  std::map<double, GroupMean> out;
  for (const auto& g : group_means(rows)) out[g.lambda] = g;
  return out;
}

double mean_rank1(const std::vector<RunResult>& rs) {
  double s = 0.0;
  for (const auto& r : rs) s += r.eval.rank1_overall;
  return s / static_cast<double>(rs.size());
}

double mean_bucket(const std::vector<RunResult>& rs, std::size_t b) {
  double s = 0.0;
  for (const auto& r : rs) s += r.eval.buckets.at(b).rank1;
  return s / static_cast<double>(rs.size());
}

std::vector<ExperimentConfig> seeded(const ExperimentConfig& c, const std::vector<std::uint64_t>& seeds) {
  std::vector<ExperimentConfig> out;
  for (auto s : seeds) {
    auto x = c;
    x.seed = s;
    x.validate();
    out.push_back(x);
  }
  return out;
}

Verdict grad_check() {
  const auto t0 = Clock::now();
  const GradCheckReport rep = run_grad_check(7);
  const double dt = seconds_since(t0);
  rep.print(std::cerr);
  std::ostringstream d;
  d << rep.components.size() << " components";
  double worst = 0.0;
  for (const auto& c : rep.components) worst = std::max(worst, c.max_rel_error / c.tolerance);
  d << ", worst error/tolerance " << fmt(worst) << ", " << fmt(dt) << " s (limit 120)";
  return {rep.passed() && rep.components.size() >= 5 && dt < 120.0, d.str()};
}

// Random well-separated control points in [-1, 1]^2.
std::vector<Point2> spread(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point2> pts;
  while (static_cast<int>(pts.size()) < n) {
    const Point2 p{u(rng), u(rng)};
    bool ok = true;
    for (const auto& q : pts) ok = ok && distance(p, q) > 0.05;
    if (ok) pts.push_back(p);
  }
  return pts;
}

Verdict tps_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(3, 25);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double residual = 0.0, side = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = count(rng);
    const auto src = spread(rng, n);
    std::vector<Point2> dst(n);
    for (auto& p : dst) p = {u(rng), u(rng)};
    const TpsTransform t = tps_solve(src, dst, 0.0);
    const auto got = tps_eval(t, src);
    for (int k = 0; k < n; ++k) residual = std::max(residual, distance(got[k], dst[k]));
    Point2 s0{0, 0}, sx{0, 0}, sy{0, 0};
    for (int k = 0; k < n; ++k) {
      const Point2 w = t.nonlinear_weights[k];
      s0 = s0 + w;
      sx = sx + src[k].x * w;
      sy = sy + src[k].y * w;
    }
    side = std::max({side, norm(s0), norm(sx), norm(sy)});
  }
  const double dt = seconds_since(t0);
  return {residual < 1e-9 && side < 1e-8 && dt < 30.0,
          "max residual " + fmt(residual) + ", max side condition " + fmt(side) + ", " + fmt(dt) + " s (limit 30)"};
}

Image random_image(std::mt19937_64& rng, int size, int channels) {
  Image im;
  im.height = im.width = size;
  im.channels = channels;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  im.data.resize(static_cast<std::size_t>(size) * size * channels);
  for (double& v : im.data) v = u(rng);
  return im;
}

Verdict identity_chain(Lab& l) {
  std::mt19937_64 rng(5);
  bool ok = true;
  std::string why;
  const std::vector<Transform> identities{AffineTransform{}, ProjectiveTransform{},
                                          tps_from_stn_params(regular_lattice(4), 4)};
  for (const auto& t : identities)
    for (int channels : {1, 3}) {
      const Image im = random_image(rng, 32, channels);
      const WarpGrid g = make_grid(t, 32, 32);
      if (g.coords != pixel_lattice(32, 32)) ok = false, why = "identity transform gave a non-identity grid";
      if (!(sample_bilinear(im, g) == im)) ok = false, why = "identity sampling changed the image";
    }
  const PreparedData data = prepare_data(l.ds);
  for (const char* m : {"stn-tps-2", "stn-tps-4", "stn-tps-8", "stn-proj"}) {
    auto cfg = l.base;
    cfg.method = AlignmentMethod::parse(m);
    Model model(cfg, l.ds.identity_count(), data.landmark_count, data.image_size, data.dense);
    for (std::size_t i = 0; i < 5; ++i) {
      const Image& im = data.probe[i]->image;
      const WarpGrid g = make_grid(model.predict(im), data.image_size, data.image_size);
      if (g.coords != pixel_lattice(data.image_size, data.image_size))
        ok = false, why = std::string("fresh ") + m + " LocNet gave a non-identity grid";
      if (!(sample_bilinear(im, g) == im)) ok = false, why = std::string("fresh ") + m + " warp changed the image";
    }
  }
  return {ok, ok ? "affine/projective/TPS identities and fresh LocNets (tps-2/4/8, proj) are bit-exact" : why};
}

// Direct transcription of the metric: per-landmark deviation from the
// per-landmark mean, averaged over samples and landmarks, over the mean
// inter-pupil distance.
double anme_oracle(const std::vector<std::vector<Point2>>& sets, std::size_t eye_a, std::size_t eye_b) {
  const std::size_t n = sets.size(), k = sets[0].size();
  double d = 0.0;
  for (const auto& s : sets) d += std::hypot(s[eye_a].x - s[eye_b].x, s[eye_a].y - s[eye_b].y);
  d /= static_cast<double>(n);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double mx = 0.0, my = 0.0;
    for (const auto& s : sets) mx += s[j].x, my += s[j].y;
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (const auto& s : sets) total += std::hypot(s[j].x - mx, s[j].y - my) / d;
  }
  return total / static_cast<double>(n * k);
}

Verdict anme_oracle_check(Lab& l) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> nn(2, 40), kk(3, 20);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const int n = nn(rng), k = kk(rng);
    std::vector<std::vector<Point2>> raw(n, std::vector<Point2>(k));
    std::vector<LandmarkSet> sets;
    for (auto& s : raw) {
      for (auto& p : s) p = {u(rng), u(rng)};
      s[1] = s[0] + Point2{0.2 + 0.5 * std::abs(u(rng)), 0.1 * u(rng)};
      sets.emplace_back(s, std::pair<std::size_t, std::size_t>{0, 1});
    }
    const double a = anme(sets), b = anme_oracle(raw, 0, 1);
    worst = std::max(worst, std::abs(a - b));
  }

  const PreparedData data = prepare_data(l.ds);
  const AlignContext ctx = data.context();
  const AlignmentMethod full = AlignmentMethod::parse("full-align");
  std::vector<LandmarkSet> deformed;
  for (const auto* r : data.probe) deformed.push_back(apply_method(full, r->image, r->landmarks, ctx).deformed);
  const double full_anme = anme(deformed);
  return {worst <= 1e-12 && full_anme < 1e-6,
          "max |metric - oracle| " + fmt(worst) + " over 100 corpora; FullAlign ANME " + fmt(full_anme) + " on " +
              std::to_string(deformed.size()) + " probes"};
}

struct SweepData {
  std::map<double, GroupMean> means;
  double sweep_cpu_s = 0.0;  // lambdas {0,1,3,5,7} only
};

SweepData& sweep(Lab& l) {
  static SweepData s;
  static bool done = false;
  if (done) return s;
  const auto out = sweep_lambda(l.base, {0, 1, 3, 5, 7, 50}, l.seeds, l.ds, l.options("sweep"));
  s.means = means_by_lambda(out.rows);
  for (const auto& c : seeded(l.base, l.seeds))
    for (double lam : {0.0, 1.0, 3.0, 5.0, 7.0}) {
      auto x = c;
      x.lambda = lam;
      const auto r = l.cache->find(x);
      if (!r || !r->wall_clock_s) throw std::runtime_error("sweep run missing from cache");
      s.sweep_cpu_s += *r->wall_clock_s;
    }
  for (const auto& [lam, g] : s.means)
    std::cerr << "lambda " << lam << ": mean rank-1 " << fmt(g.rank1) << ", mean ANME " << fmt(g.anme) << "\n";
  done = true;
  return s;
}

Verdict lambda_controls_strength(Lab& l) {
  const auto& s = sweep(l);
  bool ok = s.sweep_cpu_s <= 45 * 60;
  std::ostringstream d;
  d << "mean ANME";
  double prev = 0.0;
  bool first = true;
  for (double lam : {0.0, 1.0, 3.0, 5.0, 7.0}) {
    const double a = s.means.at(lam).anme;
    d << " " << lam << ":" << fmt(a);
    if (!first && a > prev + 0.005) ok = false;
    prev = a;
    first = false;
  }
  d << "; sweep time " << fmt(s.sweep_cpu_s / 60.0) << " min (limit 45)";
  return {ok, d.str()};
}

Verdict balanced_hump(Lab& l) {
  const auto& s = sweep(l);
  double best_lam = 0.0, best = -1.0;
  for (const auto& [lam, g] : s.means)
    if (g.rank1 > best) best = g.rank1, best_lam = lam;
  const double r0 = s.means.at(0.0).rank1, r50 = s.means.at(50.0).rank1;
  const bool ok = best_lam > 0.0 && best_lam < 50.0 && best - r50 >= 0.02 && best - r0 >= 0.01;
  std::ostringstream d;
  d << "mean rank-1";
  for (const auto& [lam, g] : s.means) d << " " << lam << ":" << pts(g.rank1);
  d << " (%); best lambda " << best_lam << ", best - lambda50 " << pts(best - r50) << " pts (need >= 2), best - lambda0 "
    << pts(best - r0) << " pts (need >= 1)";
  return {ok, d.str()};
}

// Compared on input-image alignment; the feature-map ordering is reported alongside.
Verdict method_ordering(Lab& l) {
  const std::vector<std::string> names{"none", "affine2d", "stn-proj", "stn-tps-2", "stn-tps-8", "full-align"};
  std::vector<AlignmentMethod> methods;
  for (const auto& n : names) methods.push_back(AlignmentMethod::parse(n));
  const auto out = baselines(l.base, methods, l.seeds, l.ds, l.options("baselines"));
  std::map<std::string, double> mean;
  for (const auto& g : group_means(out.rows)) mean[g.group] = g.rank1;
  std::ostringstream d;
  bool ok = true;
  for (const char* at : {"input", "fmap"}) {
    auto m = [&](const std::string& n) { return mean.at(n + "@" + at); };
    double worst = 1.0;
    for (std::size_t i = 1; i < names.size(); ++i) worst = std::min(worst, m(names[i]));
    const bool here = m("affine2d") > m("none") && m("affine2d") > m("full-align") && m("full-align") <= worst + 0.005;
    if (std::string(at) == "input") ok = here;
    d << at << ":";
    for (const auto& n : names) d << " " << n << " " << pts(m(n));
    d << (here ? " holds; " : " violated; ");
  }
  return {ok, d.str() + "mean rank-1 in %"};
}

Verdict fmap_superiority(Lab& l) {
  std::ostringstream d;
  bool ok = true;
  for (double lam : {0.0, 3.0}) {
    std::vector<ExperimentConfig> cfgs;
    for (ApplyAt at : {ApplyAt::Input, ApplyAt::FeatureMap}) {
      auto c = l.base;
      c.lambda = lam;
      c.apply_at = at;
      for (const auto& x : seeded(c, l.seeds)) cfgs.push_back(x);
    }
    const auto rs = run_many(cfgs, l.ds, l.options("fmap"));
    const std::vector<RunResult> in(rs.begin(), rs.begin() + 3), fm(rs.begin() + 3, rs.end());
    const double a = mean_rank1(in), b = mean_rank1(fm);
    ok = ok && b >= a;
    d << "lambda " << lam << ": input " << pts(a) << " fmap " << pts(b) << " (high-yaw bucket " << pts(mean_bucket(in, 3))
      << " vs " << pts(mean_bucket(fm, 3)) << "); ";
  }
  return {ok, d.str() + "mean rank-1 in %"};
}

std::map<std::string, double> ablation_means(const AblationOutput& out) {
  std::map<std::string, double> m;
  for (const auto& g : group_means(out.rows)) m[g.group] = g.rank1;
  return m;
}

Verdict ablation_trends(Lab& l) {
  const auto w = ablation_means(ablate(l.base, AblationAxis::Weights, l.seeds, l.ds, l.options("ablate_weights")));
  const auto t = ablation_means(ablate(l.base, AblationAxis::Template, l.seeds, l.ds, l.options("ablate_template")));
  const double fa = w.at("fixed-alpha"), la = w.at("learnable-alpha");
  const double ft = t.at("fixed-template"), lt = t.at("learnable-template"), fz = t.at("frozen-learned-template");
  const bool ok = la >= fa && lt >= ft && std::abs(fz - lt) <= 0.005;
  std::ostringstream d;
  d << "alpha fixed " << pts(fa) << " learnable " << pts(la) << "; template fixed " << pts(ft) << " learnable " << pts(lt)
    << " frozen-learned " << pts(fz) << " (|frozen - learnable| " << pts(std::abs(fz - lt)) << " pts, limit 0.5)";
  return {ok, d.str()};
}

// Learned alpha, averaged over seeds, is lower on the jaw contour than on the eyes.
Verdict contour_weights(Lab& l) {
  const auto out = ablate(l.base, AblationAxis::Weights, l.seeds, l.ds, l.options("ablate_weights"));
  double eye = 0.0, contour = 0.0;
  int ne = 0, nc = 0;
  for (const auto& [seed, logit] : out.learned_alpha_logit)
    for (std::size_t k = 0; k < logit.size(); ++k) {
      if (k <= 1) eye += logit[k], ++ne;
      if (k >= 5) contour += logit[k], ++nc;
    }
  eye /= ne;
  contour /= nc;
  const auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  return {contour < eye, "mean logit eyes " + fmt(eye) + " (alpha " + fmt(sig(eye)) + "), contour " + fmt(contour) +
                             " (alpha " + fmt(sig(contour)) + ")"};
}

// Loss decreases by >= 50% from the first to the last epoch for the default config.
Verdict loss_decrease(Lab& l) {
  const auto rs = run_many(seeded(l.base, {7}), l.ds, l.options("default"));
  const double first = rs[0].epochs.front().total, last = rs[0].epochs.back().total;
  return {last <= 0.5 * first, "total loss epoch 1 " + fmt(first) + " -> final " + fmt(last) + " (" +
                                   pts(1.0 - last / first) + "% decrease, need >= 50%)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism(Lab& l) {
  auto cfg = l.base;
  cfg.epochs = 3;
  cfg.record_wall_clock = false;
  std::vector<std::string> bytes;
  for (const char* sub : {"determinism/a", "determinism/b"}) {
    const fs::path dir = l.workdir / sub;
    fs::create_directories(dir);
    TrainOptions o;
    o.out_dir = dir;
    train_run(cfg, l.ds, o);
    bytes.push_back(slurp(dir / "result.json"));
  }
  const bool ok = bytes[0] == bytes[1] && !bytes[0].empty();
  return {ok, std::string(ok ? "identical" : "different") + " result.json (" + std::to_string(bytes[0].size()) +
                  " bytes) from two single-threaded runs of the default config, 3 epochs, seed 7"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path workdir = "acceptance_work";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      std::cerr << "usage: acceptance [--workdir DIR] [--only N[,N...]]\n";
      return 2;
    }
  }

  struct Criterion {
    int id;
    std::string name;
    std::function<Verdict(Lab&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient check", [](Lab&) { return grad_check(); }},
      {2, "TPS exactness", [](Lab&) { return tps_exactness(); }},
      {3, "identity chain", identity_chain},
      {4, "ANME oracle", anme_oracle_check},
      {5, "lambda controls alignment strength", lambda_controls_strength},
      {6, "balanced-point hump", balanced_hump},
      {7, "alignment-method ordering", method_ordering},
      {8, "feature-map alignment >= input alignment", fmap_superiority},
      {9, "ablation trends", ablation_trends},
      {10, "single-thread determinism", determinism},
      {11, "default config loss decreases >= 50%", loss_decrease},
      {12, "learned alpha lower on contour than eyes", contour_weights},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run(lab(workdir));
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s  %2d %s: %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
