#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/format.hpp"
#include "ace/metrics.hpp"

namespace ace {

struct NamedCurve {
  std::string name;
  RCCurve curve;
  double aurc_x1000 = 0.0;
  bool dashed = false;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string coord(double v) { return format_fixed(v, 2); }

}  // namespace detail

/// Static RC-curve chart: coverage on x (0..1), selective risk on y, one
/// polyline per curve and a legend of name + AURC x 1000. Output depends only
/// on the inputs.
inline void render_rc_svg(std::ostream& os, const std::vector<NamedCurve>& curves,
                          const std::string& title = "") {
  using detail::coord;
  if (curves.empty()) throw ConfigError("render_rc_svg needs at least one curve");
  double max_risk = 0.0;
  for (const auto& c : curves) {
    if (c.curve.points.empty()) throw ConfigError("curve '" + c.name + "' is empty");
    for (const auto& p : c.curve.points) max_risk = std::max(max_risk, p.risk);
  }
  // y range rounded up to the next 0.1
  const double y_max = std::max(0.1, std::ceil(max_risk * 10.0 - 1e-9) / 10.0);

  constexpr double width = 640, height = 420;
  constexpr double left = 60, right = 200, top = 40, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  auto px = [&](double coverage) { return left + coverage * plot_w; };
  auto py = [&](double risk) { return top + plot_h - risk / y_max * plot_h; };

  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  if (!title.empty()) {
    os << "<text x=\"" << coord(left + plot_w / 2) << "\" y=\"24\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"15\">" << detail::xml_escape(title) << "</text>\n";
  }

  // Axes, ticks and grid.
  os << "<g stroke=\"#000\" stroke-width=\"1\">\n"
     << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(top + plot_h) << "\" x2=\"" << coord(left + plot_w)
     << "\" y2=\"" << coord(top + plot_h) << "\"/>\n"
     << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(top) << "\" x2=\"" << coord(left)
     << "\" y2=\"" << coord(top + plot_h) << "\"/>\n</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#000\">\n";
  for (int i = 0; i <= 10; i += 2) {
    const double c = i / 10.0;
    os << "<line x1=\"" << coord(px(c)) << "\" y1=\"" << coord(top + plot_h) << "\" x2=\"" << coord(px(c))
       << "\" y2=\"" << coord(top + plot_h + 5) << "\" stroke=\"#000\"/>\n"
       << "<text x=\"" << coord(px(c)) << "\" y=\"" << coord(top + plot_h + 18)
       << "\" text-anchor=\"middle\">" << format_fixed(c, 1) << "</text>\n";
  }
  const int y_ticks = static_cast<int>(std::lround(y_max * 10.0));
  const int y_step = y_ticks > 5 ? 2 : 1;
  for (int i = 0; i <= y_ticks; i += y_step) {
    const double r = i / 10.0;
    os << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(py(r)) << "\" x2=\"" << coord(left + plot_w)
       << "\" y2=\"" << coord(py(r)) << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << coord(left - 8) << "\" y=\"" << coord(py(r) + 4) << "\" text-anchor=\"end\">"
       << format_fixed(r, 1) << "</text>\n";
  }
  os << "<text x=\"" << coord(left + plot_w / 2) << "\" y=\"" << coord(height - 12)
     << "\" text-anchor=\"middle\">Coverage</text>\n"
     << "<text x=\"16\" y=\"" << coord(top + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << coord(top + plot_h / 2) << ")\">Selective risk</text>\n</g>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const char* color = palette[i % std::size(palette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (c.dashed) os << " stroke-dasharray=\"5,3\"";
    os << " points=\"";
    for (std::size_t k = 0; k < c.curve.points.size(); ++k) {
      const auto& p = c.curve.points[k];
      if (k) os << ' ';
      os << coord(px(p.coverage)) << ',' << coord(py(p.risk));
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(i);
    const double lx = left + plot_w + 12;
    os << "<line x1=\"" << coord(lx) << "\" y1=\"" << coord(ly - 4) << "\" x2=\"" << coord(lx + 18)
       << "\" y2=\"" << coord(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << coord(lx + 24) << "\" y=\"" << coord(ly)
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::xml_escape(c.name) << "</text>\n"
       << "<text x=\"" << coord(lx + 150) << "\" y=\"" << coord(ly)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"" << color << "\">"
       << format_fixed(c.aurc_x1000, 1) << "</text>\n";
  }
  os << "</svg>\n";
}

inline void render_rc_svg(const std::string& path, const std::vector<NamedCurve>& curves,
                          const std::string& title = "") {
  std::ostringstream buffer;
  render_rc_svg(buffer, curves, title);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << buffer.str();
}

}  // namespace ace
