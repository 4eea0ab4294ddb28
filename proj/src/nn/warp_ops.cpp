#include "balign/nn/warp_ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "balign/linalg.hpp"
#include "balign/sampler.hpp"

namespace balign::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

}  // namespace

TpsGridGenerator::TpsGridGenerator(int grid_size, int out_height, int out_width, double regularization)
    : grid_size_(grid_size), out_h_(out_height), out_w_(out_width), lattice_(regular_lattice(grid_size)) {
  const int n = control_count();
  const int m = n + 3;
  std::vector<double> sys(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Point2 d = lattice_[i] - lattice_[j];
      sys[i * m + j] = tps_kernel_sq(d.x * d.x + d.y * d.y);
    }
    sys[i * m + i] += regularization;
    const double prow[3] = {1.0, lattice_[i].x, lattice_[i].y};
    for (int k = 0; k < 3; ++k) {
      sys[i * m + n + k] = prow[k];
      sys[(n + k) * m + i] = prow[k];
    }
  }
  const auto inv = linalg::LuDecomposition(std::move(sys), m, 1e-14).inverse();
  inverse_cols_.resize(static_cast<std::size_t>(m) * n);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) inverse_cols_[r * n + c] = inv[r * m + c];

  base_grid_ = pixel_lattice(out_h_, out_w_);
  grid_basis_ = std::make_shared<std::vector<double>>(base_grid_.size() * n);
  for (std::size_t p = 0; p < base_grid_.size(); ++p) basis(base_grid_[p], grid_basis_->data() + p * n, nullptr, nullptr);
}

void TpsGridGenerator::basis(Point2 q, double* row, double* d_row_dx, double* d_row_dy) const {
  const int n = control_count();
  const int m = n + 3;
  std::vector<double> phi(m), dphix(m, 0.0), dphiy(m, 0.0);
  for (int k = 0; k < n; ++k) {
    const double dx = q.x - lattice_[k].x, dy = q.y - lattice_[k].y;
    const double r2 = dx * dx + dy * dy;
    phi[k] = tps_kernel_sq(r2);
    if (r2 > 0.0) {
      const double f = 2.0 * (std::log(r2) + 1.0);
      dphix[k] = f * dx;
      dphiy[k] = f * dy;
    }
  }
  phi[n] = 1.0;
  phi[n + 1] = q.x;
  phi[n + 2] = q.y;
  dphix[n + 1] = 1.0;
  dphiy[n + 2] = 1.0;
  CMapMat inv(inverse_cols_.data(), m, n);
  Eigen::Map<Eigen::RowVectorXd>(row, n) = Eigen::Map<const Eigen::RowVectorXd>(phi.data(), m) * inv;
  if (d_row_dx) Eigen::Map<Eigen::RowVectorXd>(d_row_dx, n) = Eigen::Map<const Eigen::RowVectorXd>(dphix.data(), m) * inv;
  if (d_row_dy) Eigen::Map<Eigen::RowVectorXd>(d_row_dy, n) = Eigen::Map<const Eigen::RowVectorXd>(dphiy.data(), m) * inv;
}

Tensor TpsGridGenerator::grid(const Tensor& offsets) const {
  const int n = control_count();
  if (offsets.rank() != 3 || offsets.dim(1) != n || offsets.dim(2) != 2)
    throw std::invalid_argument("TpsGridGenerator::grid: offsets must be [N, " + std::to_string(n) + ", 2], got " +
                                shape_str(offsets.shape()));
  const int batch = offsets.dim(0);
  const int pixels = out_h_ * out_w_;
  std::vector<double> out(static_cast<std::size_t>(batch) * pixels * 2);
  CMapMat basis_mat(grid_basis_->data(), pixels, n);
  for (int b = 0; b < batch; ++b) {
    MapMat dst(out.data() + static_cast<std::size_t>(b) * pixels * 2, pixels, 2);
    dst.noalias() = basis_mat * CMapMat(offsets.values().data() + static_cast<std::size_t>(b) * n * 2, n, 2);
    for (int p = 0; p < pixels; ++p) {
      dst(p, 0) = base_grid_[p].x + dst(p, 0);
      dst(p, 1) = base_grid_[p].y + dst(p, 1);
    }
  }
  return Tensor::make_result({batch, out_h_, out_w_, 2}, std::move(out), {offsets},
                             [basis_data = grid_basis_, batch, pixels, n](Node& self) {
                               double* g = grad_target(self.inputs[0]);
                               if (!g) return;
                               CMapMat basis_mat(basis_data->data(), pixels, n);
                               for (int b = 0; b < batch; ++b)
                                 MapMat(g + static_cast<std::size_t>(b) * n * 2, n, 2).noalias() +=
                                     basis_mat.transpose() *
                                     CMapMat(self.grad.data() + static_cast<std::size_t>(b) * pixels * 2, pixels, 2);
                             });
}

Tensor TpsGridGenerator::points(const Tensor& offsets, const Tensor& template_points) const {
  const int n = control_count();
  if (offsets.rank() != 3 || offsets.dim(1) != n || offsets.dim(2) != 2)
    throw std::invalid_argument("TpsGridGenerator::points: offsets shape " + shape_str(offsets.shape()));
  if (template_points.rank() != 2 || template_points.dim(1) != 2)
    throw std::invalid_argument("TpsGridGenerator::points: template must be [S, 2]");
  const int batch = offsets.dim(0), s = template_points.dim(0);
  const auto tv = template_points.values();
  auto rows = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s) * n);
  auto drx = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s) * n);
  auto dry = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s) * n);
  for (int i = 0; i < s; ++i)
    basis({tv[2 * i], tv[2 * i + 1]}, rows->data() + i * n, drx->data() + i * n, dry->data() + i * n);

  std::vector<double> out(static_cast<std::size_t>(batch) * s * 2);
  for (int b = 0; b < batch; ++b) {
    MapMat dst(out.data() + static_cast<std::size_t>(b) * s * 2, s, 2);
    dst.noalias() = CMapMat(rows->data(), s, n) * CMapMat(offsets.values().data() + static_cast<std::size_t>(b) * n * 2, n, 2);
    for (int i = 0; i < s; ++i) {
      dst(i, 0) = tv[2 * i] + dst(i, 0);
      dst(i, 1) = tv[2 * i + 1] + dst(i, 1);
    }
  }
  return Tensor::make_result(
      {batch, s, 2}, std::move(out), {offsets, template_points}, [=](Node& self) {
        const auto& off = self.inputs[0]->value;
        if (double* g = grad_target(self.inputs[0])) {
          for (int b = 0; b < batch; ++b)
            MapMat(g + static_cast<std::size_t>(b) * n * 2, n, 2).noalias() +=
                CMapMat(rows->data(), s, n).transpose() *
                CMapMat(self.grad.data() + static_cast<std::size_t>(b) * s * 2, s, 2);
        }
        if (double* g = grad_target(self.inputs[1])) {
          for (int b = 0; b < batch; ++b) {
            const double* ob = off.data() + static_cast<std::size_t>(b) * n * 2;
            for (int i = 0; i < s; ++i) {
              const double gx = self.grad[(static_cast<std::size_t>(b) * s + i) * 2];
              const double gy = self.grad[(static_cast<std::size_t>(b) * s + i) * 2 + 1];
              // Jacobian of f = q + b(q)·offsets with respect to q.
              double jxx = 1.0, jxy = 0.0, jyx = 0.0, jyy = 1.0;
              for (int k = 0; k < n; ++k) {
                const double ax = (*drx)[i * n + k], ay = (*dry)[i * n + k];
                jxx += ax * ob[2 * k];
                jxy += ay * ob[2 * k];
                jyx += ax * ob[2 * k + 1];
                jyy += ay * ob[2 * k + 1];
              }
              g[2 * i] += gx * jxx + gy * jyx;
              g[2 * i + 1] += gx * jxy + gy * jyy;
            }
          }
        }
      });
}

namespace {

struct HomographyEval {
  double x, y, w, a, b;
};

inline HomographyEval eval_homography(const double* d, double qx, double qy) {
  const double h0 = 1.0 + d[0], h1 = d[1], h2 = d[2], h3 = d[3], h4 = 1.0 + d[4], h5 = d[5], h6 = d[6], h7 = d[7];
  HomographyEval e;
  e.a = h0 * qx + h1 * qy + h2;
  e.b = h3 * qx + h4 * qy + h5;
  e.w = h6 * qx + h7 * qy + 1.0;
  e.x = e.a / e.w;
  e.y = e.b / e.w;
  return e;
}

// Accumulates d(loss)/d(params) given upstream (gx, gy) at query point q.
inline void homography_param_grad(const HomographyEval& e, double qx, double qy, double gx, double gy, double* g) {
  const double iw = 1.0 / e.w;
  g[0] += gx * qx * iw;
  g[1] += gx * qy * iw;
  g[2] += gx * iw;
  g[3] += gy * qx * iw;
  g[4] += gy * qy * iw;
  g[5] += gy * iw;
  const double dw = -(gx * e.x + gy * e.y) * iw;
  g[6] += dw * qx;
  g[7] += dw * qy;
}

void check_params(const Tensor& params) {
  if (params.rank() != 2 || params.dim(1) != 8)
    throw std::invalid_argument("projective params must be [N, 8], got " + shape_str(params.shape()));
}

}  // namespace

Tensor projective_grid(const Tensor& params, int out_height, int out_width) {
  check_params(params);
  const int batch = params.dim(0);
  const auto lattice = pixel_lattice(out_height, out_width);
  const int pixels = out_height * out_width;
  std::vector<double> out(static_cast<std::size_t>(batch) * pixels * 2);
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < pixels; ++p) {
      const auto e = eval_homography(params.values().data() + 8 * b, lattice[p].x, lattice[p].y);
      out[(static_cast<std::size_t>(b) * pixels + p) * 2] = e.x;
      out[(static_cast<std::size_t>(b) * pixels + p) * 2 + 1] = e.y;
    }
  return Tensor::make_result({batch, out_height, out_width, 2}, std::move(out), {params},
                             [=](Node& self) {
                               double* g = grad_target(self.inputs[0]);
                               if (!g) return;
                               const auto& pv = self.inputs[0]->value;
                               for (int b = 0; b < batch; ++b)
                                 for (int p = 0; p < pixels; ++p) {
                                   const auto e = eval_homography(pv.data() + 8 * b, lattice[p].x, lattice[p].y);
                                   const std::size_t i = (static_cast<std::size_t>(b) * pixels + p) * 2;
                                   homography_param_grad(e, lattice[p].x, lattice[p].y, self.grad[i],
                                                         self.grad[i + 1], g + 8 * b);
                                 }
                             });
}

Tensor projective_points(const Tensor& params, const Tensor& template_points) {
  check_params(params);
  if (template_points.rank() != 2 || template_points.dim(1) != 2)
    throw std::invalid_argument("projective_points: template must be [S, 2]");
  const int batch = params.dim(0), s = template_points.dim(0);
  std::vector<double> out(static_cast<std::size_t>(batch) * s * 2);
  const auto tv = template_points.values();
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < s; ++i) {
      const auto e = eval_homography(params.values().data() + 8 * b, tv[2 * i], tv[2 * i + 1]);
      out[(static_cast<std::size_t>(b) * s + i) * 2] = e.x;
      out[(static_cast<std::size_t>(b) * s + i) * 2 + 1] = e.y;
    }
  return Tensor::make_result({batch, s, 2}, std::move(out), {params, template_points}, [=](Node& self) {
    const auto& pv = self.inputs[0]->value;
    const auto& tv2 = self.inputs[1]->value;
    double* gp = grad_target(self.inputs[0]);
    double* gt = grad_target(self.inputs[1]);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < s; ++i) {
        const double* d = pv.data() + 8 * b;
        const double qx = tv2[2 * i], qy = tv2[2 * i + 1];
        const auto e = eval_homography(d, qx, qy);
        const std::size_t k = (static_cast<std::size_t>(b) * s + i) * 2;
        const double gx = self.grad[k], gy = self.grad[k + 1];
        if (gp) homography_param_grad(e, qx, qy, gx, gy, gp + 8 * b);
        if (gt) {
          const double h0 = 1.0 + d[0], h1 = d[1], h3 = d[3], h4 = 1.0 + d[4], h6 = d[6], h7 = d[7];
          const double iw = 1.0 / e.w;
          gt[2 * i] += gx * (h0 - e.x * h6) * iw + gy * (h3 - e.y * h6) * iw;
          gt[2 * i + 1] += gx * (h1 - e.x * h7) * iw + gy * (h4 - e.y * h7) * iw;
        }
      }
  });
}

Tensor grid_sample(const Tensor& x, const Tensor& grid) {
  if (x.rank() != 4 || grid.rank() != 4 || grid.dim(3) != 2 || grid.dim(0) != x.dim(0))
    throw std::invalid_argument("grid_sample: shapes " + shape_str(x.shape()) + " and " + shape_str(grid.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = grid.dim(1), wo = grid.dim(2);
  const std::size_t in_plane = static_cast<std::size_t>(c) * h * w;
  const std::size_t out_plane = static_cast<std::size_t>(c) * ho * wo;
  const std::size_t pixels = static_cast<std::size_t>(ho) * wo;
  auto pts = std::make_shared<std::vector<Point2>>(static_cast<std::size_t>(n) * pixels);
  for (std::size_t i = 0; i < pts->size(); ++i) (*pts)[i] = {grid.values()[2 * i], grid.values()[2 * i + 1]};
  std::vector<double> out(static_cast<std::size_t>(n) * out_plane);
  const auto lin = sampler::Layout::chw(h, w, c);
  const auto lout = sampler::Layout::chw(ho, wo, c);
  for (int b = 0; b < n; ++b)
    sampler::forward(x.values().data() + b * in_plane, lin, pts->data() + b * pixels, out.data() + b * out_plane, lout);
  return Tensor::make_result({n, c, ho, wo}, std::move(out), {x, grid}, [=](Node& self) {
    double* gx = grad_target(self.inputs[0]);
    double* gg = grad_target(self.inputs[1]);
    const auto& xv = self.inputs[0]->value;
    for (int b = 0; b < n; ++b)
      sampler::backward(self.grad.data() + b * out_plane, lout, xv.data() + b * in_plane, lin, pts->data() + b * pixels,
                        gx ? gx + b * in_plane : nullptr, gg ? gg + b * pixels * 2 : nullptr);
  });
}

Tensor landmark_loss(const Tensor& pred, const std::vector<double>& gt, const Tensor& raw_weights, double eps) {
  if (pred.rank() != 3 || pred.dim(2) != 2 || gt.size() != pred.numel())
    throw std::invalid_argument("landmark_loss: prediction/ground-truth shape mismatch");
  const int n = pred.dim(0), s = pred.dim(1);
  if (raw_weights.numel() != static_cast<std::size_t>(s)) throw std::invalid_argument("landmark_loss: weight count");
  std::vector<double> alpha(s);
  for (int k = 0; k < s; ++k) alpha[k] = 1.0 / (1.0 + std::exp(-raw_weights.values()[k]));
  auto dist = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * s);
  const double inv = 1.0 / (static_cast<double>(n) * s);
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < s; ++k) {
      const std::size_t j = static_cast<std::size_t>(i) * s + k;
      const double dx = pred.values()[2 * j] - gt[2 * j], dy = pred.values()[2 * j + 1] - gt[2 * j + 1];
      (*dist)[j] = std::sqrt(dx * dx + dy * dy + eps * eps);
      total += alpha[k] * (*dist)[j];
    }
  return Tensor::make_result({}, {total * inv}, {pred, raw_weights},
                             [=, alpha = std::move(alpha)](Node& self) {
                               const double g0 = self.grad[0] * inv;
                               const auto& pv = self.inputs[0]->value;
                               if (double* g = grad_target(self.inputs[0]))
                                 for (int i = 0; i < n; ++i)
                                   for (int k = 0; k < s; ++k) {
                                     const std::size_t j = static_cast<std::size_t>(i) * s + k;
                                     const double f = g0 * alpha[k] / (*dist)[j];
                                     g[2 * j] += f * (pv[2 * j] - gt[2 * j]);
                                     g[2 * j + 1] += f * (pv[2 * j + 1] - gt[2 * j + 1]);
                                   }
                               if (double* g = grad_target(self.inputs[1]))
                                 for (int k = 0; k < s; ++k) {
                                   double sd = 0.0;
                                   for (int i = 0; i < n; ++i) sd += (*dist)[static_cast<std::size_t>(i) * s + k];
                                   g[k] += g0 * alpha[k] * (1.0 - alpha[k]) * sd;
                                 }
                             });
}

Tensor weight_regularizer(const Tensor& raw_weights) {
  const std::size_t s = raw_weights.numel();
  std::vector<double> alpha(s);
  double total = 0.0;
  for (std::size_t k = 0; k < s; ++k) {
    alpha[k] = 1.0 / (1.0 + std::exp(-raw_weights.values()[k]));
    total += (1.0 - alpha[k]) * (1.0 - alpha[k]);
  }
  return Tensor::make_result({}, {total}, {raw_weights}, [alpha = std::move(alpha)](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t k = 0; k < alpha.size(); ++k)
        g[k] += self.grad[0] * -2.0 * (1.0 - alpha[k]) * alpha[k] * (1.0 - alpha[k]);
  });
}

WarpGrid to_warp_grid(const Tensor& grid, int index) {
  if (grid.rank() != 4 || grid.dim(3) != 2) throw std::invalid_argument("to_warp_grid: expected [N, H, W, 2]");
  const int h = grid.dim(1), w = grid.dim(2);
  WarpGrid g{h, w, 1.0, std::vector<Point2>(static_cast<std::size_t>(h) * w)};
  const double* src = grid.values().data() + static_cast<std::size_t>(index) * h * w * 2;
  for (std::size_t i = 0; i < g.coords.size(); ++i) g.coords[i] = {src[2 * i], src[2 * i + 1]};
  return g;
}

}  // namespace balign::nn
