#include "balign/bench/warp_demo.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "balign/bench/pipeline.hpp"
#include "balign/bench/trainer.hpp"
#include "balign/image_io.hpp"
#include "balign/landmark_io.hpp"
#include "balign/nn/checkpoint.hpp"
#include "balign/synth.hpp"

namespace balign::bench {

namespace {

constexpr double kCell = 10.0;  // SVG units per pixel
constexpr double kGap = 30.0;
constexpr int kGridLines = 9;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

class Panel {
 public:
  Panel(std::ostringstream& o, double x0, int size) : o_(o), x0_(x0), size_(size) {}

  double px(double u) const { return x0_ + ((u + 1.0) * 0.5 * (size_ - 1) + 0.5) * kCell; }
  double py(double v) const { return kGap + ((v + 1.0) * 0.5 * (size_ - 1) + 0.5) * kCell; }

  void image(const Image& im) {
    for (int r = 0; r < im.height; ++r)
      for (int c = 0; c < im.width; ++c) {
        const int g = static_cast<int>(std::lround((std::clamp(im.at(r, c), -1.0, 1.0) + 1.0) * 127.5));
        o_ << "<rect x=\"" << fmt(x0_ + c * kCell) << "\" y=\"" << fmt(kGap + r * kCell) << "\" width=\"" << kCell
           << "\" height=\"" << kCell << "\" fill=\"rgb(" << g << "," << g << "," << g << ")\"/>\n";
      }
  }

  void polyline(const std::vector<Point2>& pts, const char* color) {
    o_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) o_ << (i ? " " : "") << fmt(px(pts[i].x)) << "," << fmt(py(pts[i].y));
    o_ << "\"/>\n";
  }

  void dots(const std::vector<Point2>& pts, const char* color, double r) {
    for (const auto& p : pts)
      o_ << "<circle cx=\"" << fmt(px(p.x)) << "\" cy=\"" << fmt(py(p.y)) << "\" r=\"" << fmt(r) << "\" fill=\""
         << color << "\"/>\n";
  }

  void crosses(const std::vector<Point2>& pts, const char* color) {
    for (const auto& p : pts) {
      const double x = px(p.x), y = py(p.y);
      o_ << "<path d=\"M" << fmt(x - 5) << " " << fmt(y - 5) << " L" << fmt(x + 5) << " " << fmt(y + 5) << " M"
         << fmt(x - 5) << " " << fmt(y + 5) << " L" << fmt(x + 5) << " " << fmt(y - 5) << "\" stroke=\"" << color
         << "\" stroke-width=\"2\"/>\n";
    }
  }

 private:
  std::ostringstream& o_;
  double x0_;
  int size_;
};

std::string overlay_svg(const Image& input, const WarpDemoResult& r, const Transform& backward_map,
                        const std::string& title) {
  const double side = input.width * kCell;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(2 * side + 3 * kGap) << "\" height=\""
    << fmt(side + 2 * kGap) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fmt(kGap) << "\" y=\"18\">input: landmarks (red), sampling grid (blue)</text>\n";
  o << "<text x=\"" << fmt(2 * kGap + side) << "\" y=\"18\">" << title
    << ": deformed landmarks (red), template (green)</text>\n";

  Panel left(o, kGap, input.width);
  left.image(input);
  // Output-space grid lines pulled back through the backward map.
  for (int i = 0; i < kGridLines; ++i) {
    const double t = -1.0 + 2.0 * i / (kGridLines - 1);
    std::vector<Point2> row, col;
    for (int k = 0; k <= 32; ++k) {
      const double s = -1.0 + 2.0 * k / 32;
      row.push_back(apply_transform(backward_map, {s, t}));
      col.push_back(apply_transform(backward_map, {t, s}));
    }
    left.polyline(row, "#1f77b4");
    left.polyline(col, "#1f77b4");
  }
  left.dots(r.original.points(), "#d62728", 3.0);

  Panel right(o, 2 * kGap + side, r.warped.width);
  right.image(r.warped);
  if (r.target) right.crosses(r.target->points, "#2ca02c");
  right.dots(r.deformed.points(), "#d62728", 3.0);
  o << "</svg>\n";
  return o.str();
}

}  // namespace

WarpDemoResult run_warp_demo(const WarpDemoOptions& opts) {
  const Image input = read_pgm(opts.image);
  const LandmarkSet gt = read_landmarks(opts.landmarks);

  std::optional<Dataset> ds;
  std::optional<PreparedData> data;
  AlignContext ctx;
  WarpDemoResult result;
  if (opts.method.kind == MethodKind::Affine2D || opts.method.kind == MethodKind::FullAlign) {
    if (!opts.manifest) throw std::invalid_argument("warp-demo: " + opts.method.name() + " needs --manifest for its template");
    ds = load_dataset(*opts.manifest);
    data = prepare_data(*ds);
    ctx = data->context();
    result.target = opts.method.kind == MethodKind::Affine2D ? data->five_point : data->dense;
  }
  std::optional<Model> model;
  if (opts.method.learned()) {
    if (!opts.checkpoint) throw std::invalid_argument("warp-demo: " + opts.method.name() + " needs --checkpoint");
    model.emplace(model_from_checkpoint(nn::read_checkpoint(*opts.checkpoint), input.height));
    if (model->config().method.name() != opts.method.name())
      throw std::invalid_argument("warp-demo: checkpoint was trained with " + model->config().method.name());
    ctx.predict = [&model](const Image& im) { return model->predict(im); };
    result.target = model->current_template();
  }

  const AlignedSample aligned = apply_method(opts.method, input, gt, ctx);
  result.warped = aligned.warped;
  result.original = gt;
  result.deformed = aligned.deformed;

  if (opts.out.has_parent_path()) std::filesystem::create_directories(opts.out.parent_path());
  write_pgm(opts.out, result.warped);
  result.svg_path = opts.out;
  result.svg_path.replace_extension(".svg");
  write_text_file(result.svg_path, overlay_svg(input, result, aligned.backward_map, opts.method.name()));
  return result;
}

}  // namespace balign::bench
