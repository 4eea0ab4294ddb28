#include "balign/bench/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>

#include "balign/format.hpp"
#include "balign/nn/am_softmax.hpp"
#include "balign/nn/networks.hpp"
#include "balign/nn/ops.hpp"
#include "balign/nn/warp_ops.hpp"
#include "balign/sampler.hpp"

namespace balign::bench {

using nn::Shape;
using nn::Tensor;

bool GradCheckReport::passed() const {
  return std::all_of(components.begin(), components.end(), [](const auto& c) { return c.passed(); });
}

void GradCheckReport::print(std::ostream& os) const {
  for (const auto& c : components)
    os << c.name << " max_rel_error " << sig9(c.max_rel_error) << " tolerance " << sig9(c.tolerance) << " entries "
       << c.entries << (c.passed() ? " PASS" : " FAIL") << "\n";
  os << (passed() ? "grad-check PASS" : "grad-check FAIL") << "\n";
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kFloor = 1e-6;

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kFloor}); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double normal(double s = 1.0) { return s * std::normal_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(gen_); }
  Tensor tensor(Shape shape, double s, bool rg) {
    std::vector<double> v(nn::shape_numel(shape));
    for (double& x : v) x = normal(s);
    return Tensor(std::move(shape), std::move(v), rg);
  }

 private:
  std::mt19937_64 gen_;
};

/// Compares backward() of `loss` against central differences for every entry
/// of every tensor in `wrt`.
GradCheckComponent check(const std::string& name, double tol, const std::function<Tensor()>& loss,
                         std::vector<Tensor> wrt) {
  for (auto& t : wrt) t.clear_grad();
  nn::backward(loss());
  GradCheckComponent c{name, 0.0, tol, 0};
  for (auto& t : wrt) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double v = t.values()[i];
      t.values()[i] = v + kStep;
      const double lp = loss().item();
      t.values()[i] = v - kStep;
      const double lm = loss().item();
      t.values()[i] = v;
      const double n = (lp - lm) / (2 * kStep);
      c.max_rel_error = std::max(c.max_rel_error, rel_error(analytic.at(i), n));
      ++c.entries;
    }
    t.clear_grad();
  }
  return c;
}

/// Distance (in pixels) from a normalized coordinate to the nearest pixel center.
double cell_margin(double u, int n) {
  const double p = (u + 1.0) * 0.5 * (n - 1);
  return std::abs(p - std::round(p));
}

GradCheckComponent sampler_component(Rng& rng) {
  const int n = 8, c = 2;
  Image map(n, n, c);
  for (double& v : map.data) v = rng.normal();
  WarpGrid grid{n, n, 1.0, pixel_lattice(n, n)};
  for (auto& p : grid.coords) {
    // Smooth warp with every sample kept away from bilinear cell boundaries.
    Point2 q;
    do {
      q = {0.9 * p.x + 0.05 * std::sin(2.0 * p.y) + rng.uniform(-0.02, 0.02),
           0.9 * p.y + 0.05 * std::cos(2.0 * p.x) + rng.uniform(-0.02, 0.02)};
    } while (cell_margin(q.x, n) < 1e-4 || cell_margin(q.y, n) < 1e-4);
    p = q;
  }
  Image up(n, n, c);
  for (double& v : up.data) v = rng.normal();
  auto objective = [&]() {
    const Image out = sample_bilinear(map, grid);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * up.data[i];
    return s;
  };
  const SampleGradients g = sample_bilinear_backward(up, map, grid);
  GradCheckComponent comp{"sampler", 0.0, 1e-4, 0};
  for (std::size_t i = 0; i < map.data.size(); ++i) {
    const double v = map.data[i];
    map.data[i] = v + kStep;
    const double lp = objective();
    map.data[i] = v - kStep;
    const double lm = objective();
    map.data[i] = v;
    comp.max_rel_error = std::max(comp.max_rel_error, rel_error(g.grad_image.data[i], (lp - lm) / (2 * kStep)));
    ++comp.entries;
  }
  for (std::size_t i = 0; i < grid.coords.size(); ++i)
    for (int axis = 0; axis < 2; ++axis) {
      double& v = axis == 0 ? grid.coords[i].x : grid.coords[i].y;
      const double v0 = v;
      v = v0 + kStep;
      const double lp = objective();
      v = v0 - kStep;
      const double lm = objective();
      v = v0;
      const double a = axis == 0 ? g.grad_grid[i].x : g.grad_grid[i].y;
      comp.max_rel_error = std::max(comp.max_rel_error, rel_error(a, (lp - lm) / (2 * kStep)));
      ++comp.entries;
    }
  return comp;
}

}  // namespace

GradCheckReport run_grad_check(std::uint64_t seed) {
  Rng rng(seed);
  GradCheckReport report;
  report.components.push_back(sampler_component(rng));

  {
    const nn::TpsGridGenerator gen(3, 10, 10);
    Tensor x = rng.tensor({2, 2, 10, 10}, 1.0, true);
    Tensor off = rng.tensor({2, 9, 2}, 0.05, true);
    const Tensor up = rng.tensor({2, 2, 10, 10}, 1.0, false);
    report.components.push_back(check("tps_grid_sample", 1e-3,
                                      [&] { return nn::sum(nn::mul(nn::grid_sample(x, gen.grid(off)), up)); }, {x, off}));
  }
  {
    const nn::TpsGridGenerator gen(4, 8, 8);
    Tensor off = rng.tensor({3, 16, 2}, 0.05, true);
    std::vector<double> t;
    for (int i = 0; i < 7; ++i) t.push_back(rng.uniform(-0.8, 0.8)), t.push_back(rng.uniform(-0.8, 0.8));
    Tensor tmpl({7, 2}, t, true);
    const Tensor up = rng.tensor({3, 7, 2}, 1.0, false);
    report.components.push_back(
        check("tps_template_warp", 1e-3, [&] { return nn::sum(nn::mul(gen.points(off, tmpl), up)); }, {off, tmpl}));
  }
  {
    Tensor p = rng.tensor({2, 8}, 0.05, true);
    std::vector<double> t;
    for (int i = 0; i < 5; ++i) t.push_back(rng.uniform(-0.8, 0.8)), t.push_back(rng.uniform(-0.8, 0.8));
    Tensor tmpl({5, 2}, t, true);
    const Tensor ug = rng.tensor({2, 6, 6, 2}, 1.0, false);
    const Tensor up = rng.tensor({2, 5, 2}, 1.0, false);
    report.components.push_back(check("projective_warp", 1e-3, [&] {
      return nn::add(nn::sum(nn::mul(nn::projective_grid(p, 6, 6), ug)),
                     nn::sum(nn::mul(nn::projective_points(p, tmpl), up)));
    }, {p, tmpl}));
  }
  {
    Tensor pred = rng.tensor({3, 6, 2}, 0.5, true);
    std::vector<double> gt(36);
    for (double& v : gt) v = rng.normal(0.5);
    Tensor raw = rng.tensor({6}, 1.0, true);
    report.components.push_back(
        check("landmark_loss", 1e-3, [&] { return nn::landmark_loss(pred, gt, raw); }, {pred, raw}));
    report.components.push_back(check("weight_regularizer", 1e-3, [&] { return nn::weight_regularizer(raw); }, {raw}));
  }
  {
    Tensor emb = rng.tensor({4, 8}, 1.0, true);
    Tensor w = rng.tensor({3, 8}, 1.0, true);
    const std::vector<int> labels{0, 2, 1, 2};
    const nn::AmSoftmaxConfig cfg{0.35, 4.0, 3};
    report.components.push_back(
        check("am_softmax", 1e-4, [&] { return nn::am_softmax_loss(emb, w, labels, cfg); }, {emb, w}));
  }

  // Miniature end-to-end pipeline, once per apply-at mode.
  for (const bool fmap : {false, true}) {
    const int size = 16, grid = 2, classes = 3, batch = 4, landmarks = 5;
    // Same layer kinds as the production LocNet at a width that keeps the
    // finite-difference sweep short.
    nn::NetworkSpec ls;
    ls.name = "locnet";
    ls.input_shape = {1, size, size};
    for (int ch : {4, 8}) {
      ls.layers.push_back({nn::LayerKind::Conv3x3, ch, 2, false});
      ls.layers.push_back({nn::LayerKind::BatchNorm});
      ls.layers.push_back({nn::LayerKind::ReLU});
    }
    ls.layers.push_back({nn::LayerKind::Flatten});
    ls.layers.push_back({nn::LayerKind::FullyConnected, 16});
    ls.layers.push_back({nn::LayerKind::ReLU});
    ls.layers.push_back({nn::LayerKind::FullyConnected, 2 * grid * grid, 1, true});
    nn::Network loc(ls, seed + 11);
    // Perturb the zero-initialised head so every LocNet layer receives gradient.
    auto loc_params = loc.parameters();
    for (double& v : loc_params[loc_params.size() - 2].tensor.values()) v = rng.normal(0.01);
    nn::RecNetOptions ro;
    ro.embedding_dim = 8;
    ro.image_size = size;
    ro.channels = {4, 8};
    nn::Network rec = nn::build_recnet(ro, seed + 12);
    const nn::TpsGridGenerator gen(grid, size, size);
    Tensor w = rng.tensor({classes, 8}, 1.0, true);
    Tensor raw = rng.tensor({landmarks}, 0.5, true);
    std::vector<double> t;
    for (int i = 0; i < landmarks; ++i) t.push_back(rng.uniform(-0.6, 0.6)), t.push_back(rng.uniform(-0.6, 0.6));
    Tensor tmpl({landmarks, 2}, t, true);
    // Smooth images keep the bilinear slope jumps at cell boundaries negligible.
    std::vector<double> pix(batch * size * size, 0.0);
    for (int b = 0; b < batch; ++b)
      for (int k = 0; k < 3; ++k) {
        const double cx = rng.uniform(3, size - 4), cy = rng.uniform(3, size - 4), amp = rng.normal(0.5);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            pix[(b * size + y) * size + x] += amp * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 18.0);
      }
    const Tensor images({batch, 1, size, size}, pix, false);
    std::vector<double> gt(batch * landmarks * 2);
    for (double& v : gt) v = rng.uniform(-0.7, 0.7);
    const std::vector<int> labels{0, 1, 2, 1};
    const nn::AmSoftmaxConfig am{0.35, 4.0, classes};
    auto loss = [&] {
      const Tensor off = nn::reshape(loc.forward(images, true), {batch, grid * grid, 2});
      const Tensor g = gen.grid(off);
      const Tensor emb = fmap ? rec.forward_after_stage0(nn::grid_sample(rec.forward_stage0(images, true), g), true)
                              : rec.forward(nn::grid_sample(images, g), true);
      const Tensor l_fr = nn::am_softmax_loss(emb, w, labels, am);
      const Tensor l_align = nn::add(nn::landmark_loss(gen.points(off, tmpl), gt, raw), nn::weight_regularizer(raw));
      return nn::add(l_fr, nn::scale(l_align, 3.0));
    };
    std::vector<Tensor> wrt{w, raw, tmpl};
    for (auto& p : loc.parameters()) wrt.push_back(p.tensor);
    for (auto& p : rec.parameters()) wrt.push_back(p.tensor);
    report.components.push_back(check(fmap ? "pipeline_fmap" : "pipeline_input", 1e-3, loss, wrt));
  }
  return report;
}

}  // namespace balign::bench
