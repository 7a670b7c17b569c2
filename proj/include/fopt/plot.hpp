#pragma once

// Dependency-free SVG emitters: eigenvector heatmaps, learning curves and
// bar tables.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "fopt/grid.hpp"

namespace fopt::plot {

struct Rgb {
  int r = 0;
  int g = 0;
  int b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Nine-stop diverging ramp, blue (negative) through white to red.
const std::array<Rgb, 9>& ramp_stops();
/// t in [-1, 1], piecewise linear between stops; clamped outside.
Rgb diverging(double t);
std::string hex_color(Rgb c);

/// Row-major height x width field, symmetric colour scale at max |v|.
/// NaN cells are grey; pinned cells get a black ring.
std::string heatmap_svg(const std::vector<double>& field, int height, int width, const std::string& title,
                        const std::vector<grid::Cell>& pinned = {});

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> lo;  // optional band, same length as y
  std::vector<double> hi;
};
std::string curves_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                       const std::string& ylabel);

struct Bar {
  std::string label;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};
std::string bars_svg(const std::vector<Bar>& bars, const std::string& title, const std::string& ylabel);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fopt::plot
