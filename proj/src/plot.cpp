#include "fopt/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fopt::plot {

const std::array<Rgb, 9>& ramp_stops() {
  static const std::array<Rgb, 9> stops = {{{0x21, 0x66, 0xac},
                                            {0x43, 0x93, 0xc3},
                                            {0x92, 0xc5, 0xde},
                                            {0xd1, 0xe5, 0xf0},
                                            {0xf7, 0xf7, 0xf7},
                                            {0xfd, 0xdb, 0xc7},
                                            {0xf4, 0xa5, 0x82},
                                            {0xd6, 0x60, 0x4d},
                                            {0xb2, 0x18, 0x2b}}};
  return stops;
}

Rgb diverging(double t) {
  const auto& s = ramp_stops();
  if (!std::isfinite(t)) return {0x99, 0x99, 0x99};
  t = std::clamp(t, -1.0, 1.0);
  const double pos = (t + 1.0) * 4.0;  // 0..8
  const int i = std::min(7, static_cast<int>(std::floor(pos)));
  const double w = pos - i;
  auto mix = [w](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * w)); };
  return {mix(s[i].r, s[i + 1].r), mix(s[i].g, s[i + 1].g), mix(s[i].b, s[i + 1].b)};
}

std::string hex_color(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string header(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n";
}

const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

}  // namespace

std::string heatmap_svg(const std::vector<double>& field, int height, int width, const std::string& title,
                        const std::vector<grid::Cell>& pinned) {
  const int cell = 24, pad = 30;
  double scale = 0.0;
  for (double v : field) {
    if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
  }
  std::ostringstream os;
  const int w = width * cell + 2 * pad, h = height * cell + 2 * pad;
  os << header(w, h);
  os << "<text x=\"" << pad << "\" y=\"18\">" << esc(title) << "</text>\n";
  for (int x = 0; x < height; ++x) {
    for (int y = 0; y < width; ++y) {
      const double v = field[static_cast<std::size_t>(x) * width + y];
      const double t = !std::isfinite(v) ? v : (scale > 0 ? v / scale : 0.0);
      os << "<rect x=\"" << pad + y * cell << "\" y=\"" << pad + x * cell << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"" << hex_color(diverging(t)) << "\"/>\n";
    }
  }
  for (auto c : pinned) {
    os << "<circle cx=\"" << pad + c.y * cell + cell / 2 << "\" cy=\"" << pad + c.x * cell + cell / 2 << "\" r=\""
       << cell / 3 << "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  os << "<text x=\"" << pad << "\" y=\"" << h - 8 << "\">scale +-" << num(scale) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string curves_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                       const std::string& ylabel) {
  const int w = 520, h = 340, l = 60, r = 130, t = 30, b = 45;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1e-9;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) x0 = x1 = s.x[i];
      any = true;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y1 = std::max(y1, s.hi.empty() ? s.y[i] : s.hi[i]);
      y0 = std::min(y0, s.lo.empty() ? s.y[i] : s.lo[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  auto px = [&](double x) { return l + (x - x0) / (x1 - x0) * (w - l - r); };
  auto py = [&](double y) { return h - b - (y - y0) / (y1 - y0) * (h - t - b); };
  std::ostringstream os;
  os << header(w, h);
  os << "<text x=\"" << l << "\" y=\"18\">" << esc(title) << "</text>\n";
  os << "<line x1=\"" << l << "\" y1=\"" << h - b << "\" x2=\"" << w - r << "\" y2=\"" << h - b << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << l << "\" y1=\"" << t << "\" x2=\"" << l << "\" y2=\"" << h - b << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (l + w - r) / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << esc(xlabel) << "</text>\n";
  os << "<text x=\"14\" y=\"" << (t + h - b) / 2 << "\" transform=\"rotate(-90 14 " << (t + h - b) / 2
     << ")\" text-anchor=\"middle\">" << esc(ylabel) << "</text>\n";
  for (double v : {y0, (y0 + y1) / 2, y1}) {
    os << "<text x=\"" << l - 4 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  for (double v : {x0, x1}) {
    os << "<text x=\"" << num(px(v)) << "\" y=\"" << h - b + 14 << "\" text-anchor=\"middle\">" << num(v) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* col = kPalette[k % 6];
    if (!s.lo.empty() && s.lo.size() == s.x.size()) {
      os << "<polygon fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) os << num(px(s.x[i])) << "," << num(py(s.hi[i])) << " ";
      for (std::size_t i = s.x.size(); i-- > 0;) os << num(px(s.x[i])) << "," << num(py(s.lo[i])) << " ";
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << num(px(s.x[i])) << "," << num(py(s.y[i])) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << w - r + 8 << "\" y=\"" << t + 14 * (k + 1) << "\" fill=\"" << col << "\">" << esc(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bars_svg(const std::vector<Bar>& bars, const std::string& title, const std::string& ylabel) {
  const int bw = 48, l = 60, t = 30, b = 40, plot_h = 240;
  const int w = l + static_cast<int>(bars.size()) * (bw + 16) + 20, h = t + plot_h + b;
  double top = 1e-9;
  for (const auto& bar : bars) top = std::max({top, bar.value, bar.hi});
  auto py = [&](double y) { return t + plot_h - y / top * plot_h; };
  std::ostringstream os;
  os << header(w, h);
  os << "<text x=\"" << l << "\" y=\"18\">" << esc(title) << "</text>\n";
  os << "<text x=\"14\" y=\"" << t + plot_h / 2 << "\" transform=\"rotate(-90 14 " << t + plot_h / 2
     << ")\" text-anchor=\"middle\">" << esc(ylabel) << "</text>\n";
  os << "<line x1=\"" << l << "\" y1=\"" << t + plot_h << "\" x2=\"" << w - 10 << "\" y2=\"" << t + plot_h
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& bar = bars[i];
    const int x = l + 8 + static_cast<int>(i) * (bw + 16);
    const double v = std::max(0.0, bar.value);
    os << "<rect x=\"" << x << "\" y=\"" << num(py(v)) << "\" width=\"" << bw << "\" height=\"" << num(t + plot_h - py(v))
       << "\" fill=\"" << kPalette[i % 6] << "\"/>\n";
    os << "<line x1=\"" << x + bw / 2 << "\" y1=\"" << num(py(bar.lo)) << "\" x2=\"" << x + bw / 2 << "\" y2=\""
       << num(py(bar.hi)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << x + bw / 2 << "\" y=\"" << t + plot_h + 14 << "\" text-anchor=\"middle\">" << esc(bar.label)
       << "</text>\n";
    os << "<text x=\"" << x + bw / 2 << "\" y=\"" << num(py(v) - 4) << "\" text-anchor=\"middle\">" << num(bar.value)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

}  // namespace fopt::plot
