#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "transcp/common.hpp"

namespace transcp {

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Minimal SVG scatter/line plot, enough for sweep outputs.
inline void write_svg_plot(const std::string& path, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel,
                           const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, L = 70, R = 20, Tm = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 0.0, ymax = -1e300;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymax <= ymin) ymax = ymin + 1;
  ymax *= 1.05;
  if (xmax == xmin) xmax = xmin + 1;
  auto px = [&](double x) {
    return L + (x - xmin) / (xmax - xmin) * (W - L - R);
  };
  auto py = [&](double y) {
    return H - B - (y - ymin) / (ymax - ymin) * (H - Tm - B);
  };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e"};
  std::ofstream os(path, std::ios::trunc);
  TCP_CHECK(os.good(), "cannot open plot file for writing: ", path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
     << H << "'>\n"
     << "<rect width='100%' height='100%' fill='white'/>\n"
     << "<text x='" << W / 2 << "' y='20' text-anchor='middle' "
        "font-size='15'>"
     << title << "</text>\n"
     << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R
     << "' y2='" << H - B << "' stroke='black'/>\n"
     << "<line x1='" << L << "' y1='" << Tm << "' x2='" << L << "' y2='"
     << H - B << "' stroke='black'/>\n"
     << "<text x='" << W / 2 << "' y='" << H - 12
     << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n"
     << "<text x='18' y='" << H / 2
     << "' text-anchor='middle' font-size='12' transform='rotate(-90 18 "
     << H / 2 << ")'>" << ylabel << "</text>\n";
  // Axis ticks at the extremes.
  os << "<text x='" << L << "' y='" << H - B + 16
     << "' font-size='10' text-anchor='middle'>" << xmin << "</text>\n"
     << "<text x='" << W - R << "' y='" << H - B + 16
     << "' font-size='10' text-anchor='middle'>" << xmax << "</text>\n"
     << "<text x='" << L - 6 << "' y='" << py(ymin)
     << "' font-size='10' text-anchor='end'>" << ymin << "</text>\n"
     << "<text x='" << L - 6 << "' y='" << py(ymax / 1.05)
     << "' font-size='10' text-anchor='end'>" << ymax / 1.05 << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % 5];
    const auto& pts = series[si].points;
    if (pts.size() > 1) {
      os << "<polyline fill='none' stroke='" << color << "' points='";
      for (auto [x, y] : pts) os << px(x) << "," << py(y) << " ";
      os << "'/>\n";
    }
    for (auto [x, y] : pts)
      os << "<circle cx='" << px(x) << "' cy='" << py(y)
         << "' r='3.5' fill='" << color << "'/>\n";
    os << "<text x='" << W - R - 150 << "' y='" << Tm + 16 * double(si + 1)
       << "' font-size='12' fill='" << color << "'>" << series[si].label
       << "</text>\n";
  }
  os << "</svg>\n";
  TCP_CHECK(os.good(), "failed writing plot: ", path);
}

}  // namespace transcp
