#pragma once

#include <cstddef>
#include <vector>

#include "balign/geometry.hpp"

namespace balign {

/// H x W x C intensities stored interleaved (HWC).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int r, int c, int ch = 0) { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  double at(int r, int c, int ch = 0) const {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  bool empty() const { return data.empty(); }
  friend bool operator==(const Image&, const Image&) = default;
};

struct SampleGradients {
  Image grad_image;
  /// d/dx, d/dy per output pixel, row-major, normalized units.
  std::vector<Point2> grad_grid;
};

/// Bilinear gather with zero padding outside the map.
Image sample_bilinear(const Image& map, const WarpGrid& grid);

SampleGradients sample_bilinear_backward(const Image& upstream, const Image& map, const WarpGrid& grid);

namespace sampler {

/// Strided view description so the same kernels serve HWC images and the
/// NCHW tensors of the network code.
struct Layout {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::ptrdiff_t row = 0;
  std::ptrdiff_t col = 0;
  std::ptrdiff_t chan = 0;

  static Layout hwc(int h, int w, int c) { return {h, w, c, static_cast<std::ptrdiff_t>(w) * c, c, 1}; }
  static Layout chw(int h, int w, int c) {
    return {h, w, c, w, 1, static_cast<std::ptrdiff_t>(h) * w};
  }
};

/// `grid` holds out_h * out_w points. Writes every channel of every output pixel.
void forward(const double* src, const Layout& in, const Point2* grid, double* dst, const Layout& out);

/// Accumulates into grad_src (may be null) and grad_grid (may be null, two
/// doubles per output pixel).
void backward(const double* upstream, const Layout& out, const double* src, const Layout& in, const Point2* grid,
              double* grad_src, double* grad_grid);

}  // namespace sampler

}  // namespace balign
