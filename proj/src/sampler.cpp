#include "balign/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace balign {
namespace sampler {
namespace {

struct Taps {
  int x0, y0;
  double fx, fy;
  bool any_inside;
};

// Maps a normalized coordinate to fractional pixel index. Coordinates that
// land within 1e-9 px of a pixel center are snapped so the identity grid
// gathers exact values.
inline double to_pixel(double v, int count) {
  const double p = (v + 1.0) * 0.5 * (count - 1);
  const double r = std::round(p);
  return std::abs(p - r) < 1e-9 ? r : p;
}

inline Taps taps_for(Point2 g, int h, int w) {
  Taps t{};
  const double px = to_pixel(g.x, w), py = to_pixel(g.y, h);
  if (!(px > -1.0 && px < w && py > -1.0 && py < h)) {
    t.any_inside = false;
    return t;
  }
  const double fx0 = std::floor(px), fy0 = std::floor(py);
  t.x0 = static_cast<int>(fx0);
  t.y0 = static_cast<int>(fy0);
  t.fx = px - fx0;
  t.fy = py - fy0;
  t.any_inside = true;
  return t;
}

inline bool inside(int x, int y, const Layout& l) { return x >= 0 && x < l.width && y >= 0 && y < l.height; }

}  // namespace

void forward(const double* src, const Layout& in, const Point2* grid, double* dst, const Layout& out) {
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const Point2 g = grid[static_cast<std::size_t>(r) * out.width + c];
      double* o = dst + r * out.row + c * out.col;
      const Taps t = taps_for(g, in.height, in.width);
      for (int ch = 0; ch < out.channels; ++ch) o[ch * out.chan] = 0.0;
      if (!t.any_inside) continue;
      const int xs[2] = {t.x0, t.x0 + 1};
      const int ys[2] = {t.y0, t.y0 + 1};
      const double wx[2] = {1.0 - t.fx, t.fx};
      const double wy[2] = {1.0 - t.fy, t.fy};
      for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
          if (!inside(xs[i], ys[j], in)) continue;
          const double wgt = wx[i] * wy[j];
          const double* s = src + ys[j] * in.row + xs[i] * in.col;
          for (int ch = 0; ch < out.channels; ++ch) o[ch * out.chan] += wgt * s[ch * in.chan];
        }
      }
    }
  }
}

void backward(const double* upstream, const Layout& out, const double* src, const Layout& in, const Point2* grid,
              double* grad_src, double* grad_grid) {
  const double sx = 0.5 * (in.width - 1), sy = 0.5 * (in.height - 1);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const std::size_t pix = static_cast<std::size_t>(r) * out.width + c;
      const Taps t = taps_for(grid[pix], in.height, in.width);
      if (!t.any_inside) continue;
      const double* up = upstream + r * out.row + c * out.col;
      const int xs[2] = {t.x0, t.x0 + 1};
      const int ys[2] = {t.y0, t.y0 + 1};
      const double wx[2] = {1.0 - t.fx, t.fx};
      const double wy[2] = {1.0 - t.fy, t.fy};
      // d weight / d px and d weight / d py for each of the four taps.
      const double dwx[2] = {-1.0, 1.0};
      const double dwy[2] = {-1.0, 1.0};
      double gx = 0.0, gy = 0.0;
      for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
          if (!inside(xs[i], ys[j], in)) continue;
          const std::ptrdiff_t off = ys[j] * in.row + xs[i] * in.col;
          const double wgt = wx[i] * wy[j];
          for (int ch = 0; ch < out.channels; ++ch) {
            const double u = up[ch * out.chan];
            if (grad_src) grad_src[off + ch * in.chan] += wgt * u;
            const double v = src[off + ch * in.chan] * u;
            gx += dwx[i] * wy[j] * v;
            gy += wx[i] * dwy[j] * v;
          }
        }
      }
      if (grad_grid) {
        grad_grid[2 * pix] += gx * sx;
        grad_grid[2 * pix + 1] += gy * sy;
      }
    }
  }
}

}  // namespace sampler

Image sample_bilinear(const Image& map, const WarpGrid& grid) {
  if (map.empty()) throw std::invalid_argument("sample_bilinear: empty map");
  if (grid.coords.size() != static_cast<std::size_t>(grid.height) * grid.width)
    throw std::invalid_argument("sample_bilinear: malformed grid");
  Image out(grid.height, grid.width, map.channels);
  sampler::forward(map.data.data(), sampler::Layout::hwc(map.height, map.width, map.channels), grid.coords.data(),
                   out.data.data(), sampler::Layout::hwc(out.height, out.width, out.channels));
  return out;
}

SampleGradients sample_bilinear_backward(const Image& upstream, const Image& map, const WarpGrid& grid) {
  if (upstream.height != grid.height || upstream.width != grid.width || upstream.channels != map.channels)
    throw std::invalid_argument("sample_bilinear_backward: upstream shape must match the forward output");
  SampleGradients g;
  g.grad_image = Image(map.height, map.width, map.channels);
  std::vector<double> gg(2 * grid.coords.size(), 0.0);
  sampler::backward(upstream.data.data(), sampler::Layout::hwc(upstream.height, upstream.width, upstream.channels),
                    map.data.data(), sampler::Layout::hwc(map.height, map.width, map.channels), grid.coords.data(),
                    g.grad_image.data.data(), gg.data());
  g.grad_grid.resize(grid.coords.size());
  for (std::size_t i = 0; i < g.grad_grid.size(); ++i) g.grad_grid[i] = {gg[2 * i], gg[2 * i + 1]};
  return g;
}

}  // namespace balign
