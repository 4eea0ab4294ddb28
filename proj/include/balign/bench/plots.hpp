#pragma once

#include <string>
#include <vector>

namespace balign::bench {

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;  // drawn next to the marker when non-empty
};

struct PlotSeries {
  std::string name;
  std::vector<PlotPoint> points;
  bool connect = false;  // polyline through the points in order
  double marker_radius = 3.5;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  /// Categorical axis: tick i is drawn at x = i with this text. Numeric ticks
  /// are used when empty.
  std::vector<std::string> x_categories;
};

/// Self-contained SVG document. A pure function of the spec, so identical
/// inputs give identical bytes.
std::string render_svg(const PlotSpec& spec);

/// "Nice" tick values covering [lo, hi] (about `target` of them).
std::vector<double> nice_ticks(double lo, double hi, int target = 5);

}  // namespace balign::bench
