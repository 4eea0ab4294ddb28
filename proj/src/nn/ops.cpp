#include "balign/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace balign::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (double* g = grad_target(in))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_target(self.inputs[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_target(self.inputs[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({}, {s}, {a}, [](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = self.value[i];
        g[i] += self.grad[i] * s * (1.0 - s);
      }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
    throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                                shape_str(weight.shape()));
  const int n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) throw std::invalid_argument("linear: bias shape");
  std::vector<double> out(static_cast<std::size_t>(n) * o);
  MapMat y(out.data(), n, o);
  y.noalias() = CMapMat(x.values().data(), n, d) * CMapMat(weight.values().data(), o, d).transpose();
  if (bias.defined())
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) y(i, j) += bias.values()[j];
  std::vector<Tensor> ins{x, weight};
  if (bias.defined()) ins.push_back(bias);
  return Tensor::make_result({n, o}, std::move(out), ins, [n, d, o](Node& self) {
    CMapMat gy(self.grad.data(), n, o);
    if (double* g = grad_target(self.inputs[0]))
      MapMat(g, n, d).noalias() += gy * CMapMat(self.inputs[1]->value.data(), o, d);
    if (double* g = grad_target(self.inputs[1]))
      MapMat(g, o, d).noalias() += gy.transpose() * CMapMat(self.inputs[0]->value.data(), n, d);
    if (self.inputs.size() > 2)
      if (double* g = grad_target(self.inputs[2]))
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < o; ++j) g[j] += gy(i, j);
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, int stride, int pad) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1) || weight.dim(2) != weight.dim(3))
    throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(x.shape()) + " and " +
                                shape_str(weight.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int o = weight.dim(0), k = weight.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small");
  const int rows = c * k * k, cols = ho * wo;
  const std::size_t col_size = static_cast<std::size_t>(rows) * cols;

  // im2col for the whole batch, kept for the backward pass.
  auto columns = std::make_shared<std::vector<double>>(col_size * n, 0.0);
  const double* xv = x.values().data();
  for (int b = 0; b < n; ++b) {
    double* col = columns->data() + col_size * b;
    for (int ch = 0; ch < c; ++ch)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* dst = col + static_cast<std::size_t>((ch * k + ky) * k + kx) * cols;
          const double* plane = xv + (static_cast<std::size_t>(b) * c + ch) * h * w;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[oy * wo + ox] = plane[iy * w + ix];
            }
          }
        }
  }
  std::vector<double> out(static_cast<std::size_t>(n) * o * cols);
  CMapMat wmat(weight.values().data(), o, rows);
  for (int b = 0; b < n; ++b)
    MapMat(out.data() + static_cast<std::size_t>(b) * o * cols, o, cols).noalias() =
        wmat * CMapMat(columns->data() + col_size * b, rows, cols);

  return Tensor::make_result({n, o, ho, wo}, std::move(out), {x, weight},
                             [=](Node& self) {
                               CMapMat wm(self.inputs[1]->value.data(), o, rows);
                               double* gw = grad_target(self.inputs[1]);
                               double* gx = grad_target(self.inputs[0]);
                               std::vector<double> dcol(gx ? col_size : 0);
                               for (int b = 0; b < n; ++b) {
                                 CMapMat gy(self.grad.data() + static_cast<std::size_t>(b) * o * cols, o, cols);
                                 if (gw)
                                   MapMat(gw, o, rows).noalias() +=
                                       gy * CMapMat(columns->data() + col_size * b, rows, cols).transpose();
                                 if (!gx) continue;
                                 MapMat(dcol.data(), rows, cols).noalias() = wm.transpose() * gy;
                                 for (int ch = 0; ch < c; ++ch)
                                   for (int ky = 0; ky < k; ++ky)
                                     for (int kx = 0; kx < k; ++kx) {
                                       const double* src =
                                           dcol.data() + static_cast<std::size_t>((ch * k + ky) * k + kx) * cols;
                                       double* plane = gx + (static_cast<std::size_t>(b) * c + ch) * h * w;
                                       for (int oy = 0; oy < ho; ++oy) {
                                         const int iy = oy * stride - pad + ky;
                                         if (iy < 0 || iy >= h) continue;
                                         for (int ox = 0; ox < wo; ++ox) {
                                           const int ix = ox * stride - pad + kx;
                                           if (ix >= 0 && ix < w) plane[iy * w + ix] += src[oy * wo + ox];
                                         }
                                       }
                                     }
                               }
                             });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: expected [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n) * c, 0.0);
  for (int i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (int p = 0; p < hw; ++p) s += x.values()[static_cast<std::size_t>(i) * hw + p];
    out[i] = s / hw;
  }
  return Tensor::make_result({n, c}, std::move(out), {x}, [n, c, hw](Node& self) {
    if (double* g = grad_target(self.inputs[0]))
      for (int i = 0; i < n * c; ++i)
        for (int p = 0; p < hw; ++p) g[static_cast<std::size_t>(i) * hw + p] += self.grad[i] / hw;
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  if (x.rank() != 2 && x.rank() != 4) throw std::invalid_argument("batch_norm: expected [N,C] or [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const int hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
    throw std::invalid_argument("batch_norm: affine parameter size");
  if (state.running_mean.size() != static_cast<std::size_t>(c)) {
    state.running_mean.assign(c, 0.0);
    state.running_var.assign(c, 1.0);
  }
  const double m = static_cast<double>(n) * hw;
  if (training && m < 2) throw std::invalid_argument("batch_norm: training needs more than one value per channel");
  const auto xv = x.values();
  auto idx = [c, hw](int b, int ch, int p) { return (static_cast<std::size_t>(b) * c + ch) * hw + p; };

  std::vector<double> mu(c), inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p) s += xv[idx(b, ch, p)];
      const double mean_v = s / m;
      double v = 0.0;
      for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p) {
          const double d = xv[idx(b, ch, p)] - mean_v;
          v += d * d;
        }
      v /= m;
      mu[ch] = mean_v;
      inv_std[ch] = 1.0 / std::sqrt(v + state.eps);
      state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1.0 - state.momentum) * mean_v;
      state.running_var[ch] = state.momentum * state.running_var[ch] + (1.0 - state.momentum) * v * m / (m - 1.0);
    } else {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) {
        const std::size_t i = idx(b, ch, p);
        xhat[i] = (xv[i] - mu[ch]) * inv_std[ch];
        out[i] = gamma.values()[ch] * xhat[i] + beta.values()[ch];
      }
  auto cached = std::make_shared<std::vector<double>>(std::move(xhat));
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [=, inv_std = std::move(inv_std)](Node& self) {
                               const auto& gv = self.inputs[1]->value;
                               const auto& gy = self.grad;
                               const auto& xh = *cached;
                               double* gx = grad_target(self.inputs[0]);
                               double* gg = grad_target(self.inputs[1]);
                               double* gb = grad_target(self.inputs[2]);
                               for (int ch = 0; ch < c; ++ch) {
                                 double sdy = 0.0, sdyx = 0.0;
                                 for (int b = 0; b < n; ++b)
                                   for (int p = 0; p < hw; ++p) {
                                     const std::size_t i = idx(b, ch, p);
                                     sdy += gy[i];
                                     sdyx += gy[i] * xh[i];
                                   }
                                 if (gg) gg[ch] += sdyx;
                                 if (gb) gb[ch] += sdy;
                                 if (!gx) continue;
                                 const double k = gv[ch] * inv_std[ch];
                                 for (int b = 0; b < n; ++b)
                                   for (int p = 0; p < hw; ++p) {
                                     const std::size_t i = idx(b, ch, p);
                                     gx[i] += training ? k * (gy[i] - sdy / m - xh[i] * sdyx / m) : k * gy[i];
                                   }
                               }
                             });
}

}  // namespace balign::nn
