#pragma once

#include <iomanip>
#include <sstream>

#include "sepnet/tensor.hpp"

namespace sepnet {

struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

namespace svgdetail {

inline std::string num(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

inline double nice_step(double range) {
  if (range <= 0) return 1;
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10 * mag;
}

}  // namespace svgdetail

// Minimal deterministic SVG line chart: fixed canvas, axes with ticks,
// one polyline per series, legend at the top right.
inline std::string render_line_chart(const std::vector<PlotSeries>& series,
                                     const std::string& title,
                                     const std::string& x_label,
                                     const std::string& y_label) {
  constexpr double W = 720, H = 480, ml = 70, mr = 150, mt = 50, mb = 55;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"18\" "
         "font-family=\"sans-serif\">" << title << "</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  const double xs = svgdetail::nice_step(xmax - xmin);
  for (double t = std::ceil(xmin / xs) * xs; t <= xmax + 1e-9; t += xs) {
    out << "<line x1=\"" << svgdetail::num(px(t)) << "\" y1=\"" << mt + ph << "\" x2=\""
        << svgdetail::num(px(t)) << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << svgdetail::num(px(t)) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << t
        << "</text>\n";
  }
  const double ys = svgdetail::nice_step(ymax - ymin);
  for (double t = std::ceil(ymin / ys) * ys; t <= ymax + 1e-9; t += ys) {
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << svgdetail::num(py(t)) << "\" x2=\"" << ml
        << "\" y2=\"" << svgdetail::num(py(t)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << svgdetail::num(py(t) + 4)
        << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\">" << t
        << "</text>\n";
  }
  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\">" << x_label
      << "</text>\n";
  out << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << y_label << "</text>\n";
  // series
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) out << ' ';
      out << svgdetail::num(px(s.x[i])) << ',' << svgdetail::num(py(s.y[i]));
    }
    out << "\"/>\n";
  }
  // legend
  double ly = mt + 10;
  for (const auto& s : series) {
    out << "<line x1=\"" << ml + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 40
        << "\" y2=\"" << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + pw + 46 << "\" y=\"" << ly + 4
        << "\" font-size=\"12\" font-family=\"sans-serif\">" << s.label << "</text>\n";
    ly += 20;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace sepnet
