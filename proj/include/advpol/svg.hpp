#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advpol/io.hpp"

namespace advpol::svg {

inline std::string escape(const std::string& s) {
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

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::string header(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(w, 0) + "\" height=\"" + fixed(h, 0) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline std::string text(double x, double y, const std::string& s, const char* anchor = "middle") {
  return "<text x=\"" + fixed(x) + "\" y=\"" + fixed(y) + "\" text-anchor=\"" + anchor + "\">" + escape(s) +
         "</text>\n";
}

/// Heatmap of values in [0, 1], rows x cols, with percentages in the cells.
inline std::string heatmap(const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels,
                           const std::vector<std::vector<double>>& values, const std::string& title) {
  const double cell = 70, left = 150, top = 60;
  const double w = left + cell * static_cast<double>(col_labels.size()) + 20;
  const double h = top + cell * static_cast<double>(row_labels.size()) + 20;
  std::string s = header(w, h) + text(w / 2, 20, title);
  for (std::size_t c = 0; c < col_labels.size(); ++c)
    s += text(left + cell * (static_cast<double>(c) + 0.5), top - 10, col_labels[c]);
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    const double y = top + cell * static_cast<double>(r);
    s += text(left - 8, y + cell / 2 + 4, row_labels[r], "end");
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double v = std::clamp(values[r][c], 0.0, 1.0);
      const int red = static_cast<int>(255 - 80 * v), gb = static_cast<int>(255 - 220 * v);
      s += "<rect x=\"" + fixed(left + cell * static_cast<double>(c)) + "\" y=\"" + fixed(y) + "\" width=\"" +
           fixed(cell) + "\" height=\"" + fixed(cell) + "\" fill=\"rgb(" + std::to_string(red) + "," +
           std::to_string(gb) + "," + std::to_string(gb) + ")\" stroke=\"white\"/>\n";
      s += text(left + cell * (static_cast<double>(c) + 0.5), y + cell / 2 + 4, fixed(100 * values[r][c], 0));
    }
  }
  return s + "</svg>\n";
}

struct Series {
  std::string label;
  std::vector<double> x, y, lo, hi;  // lo/hi optional band
};

/// Line plot with optional confidence bands; y axis fixed to [0, 1].
inline std::string line_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                             const std::string& ylabel) {
  const double w = 560, h = 360, l = 60, r = 20, t = 40, b = 50;
  double xmax = 1e-12;
  for (const auto& s : series)
    for (double v : s.x) xmax = std::max(xmax, v);
  auto px = [&](double v) { return l + (w - l - r) * v / xmax; };
  auto py = [&](double v) { return h - b - (h - t - b) * std::clamp(v, 0.0, 1.0); };
  std::string s = header(w, h) + text(w / 2, 20, title);
  s += "<line x1=\"" + fixed(l) + "\" y1=\"" + fixed(h - b) + "\" x2=\"" + fixed(w - r) + "\" y2=\"" + fixed(h - b) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fixed(l) + "\" y1=\"" + fixed(t) + "\" x2=\"" + fixed(l) + "\" y2=\"" + fixed(h - b) +
       "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) s += text(l - 6, py(k / 4.0) + 4, fixed(k / 4.0), "end");
  s += text(w - r, h - b + 16, fixed(xmax, 0), "end") + text((l + w - r) / 2, h - 10, xlabel);
  s += "<text x=\"15\" y=\"" + fixed((t + h - b) / 2) + "\" transform=\"rotate(-90 15 " + fixed((t + h - b) / 2) +
       ")\" text-anchor=\"middle\">" + escape(ylabel) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& se = series[i];
    if (!se.lo.empty() && se.lo.size() == se.x.size()) {
      std::string pts;
      for (std::size_t j = 0; j < se.x.size(); ++j) pts += fixed(px(se.x[j])) + "," + fixed(py(se.hi[j])) + " ";
      for (std::size_t j = se.x.size(); j-- > 0;) pts += fixed(px(se.x[j])) + "," + fixed(py(se.lo[j])) + " ";
      s += "<polygon points=\"" + pts + "\" fill=\"" + palette(i) + "\" fill-opacity=\"0.2\"/>\n";
    }
    std::string pts;
    for (std::size_t j = 0; j < se.x.size(); ++j) pts += fixed(px(se.x[j])) + "," + fixed(py(se.y[j])) + " ";
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + palette(i) + "\" stroke-width=\"2\"/>\n";
    s += text(w - r - 5, t + 15 * static_cast<double>(i + 1), se.label, "end");
  }
  return s + "</svg>\n";
}

/// Scatter plot coloured by label.
inline std::string scatter(const std::vector<std::string>& labels, const std::vector<double>& x,
                           const std::vector<double>& y, const std::string& title) {
  const double w = 520, h = 520, m = 40;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!x.empty()) {
    x0 = *std::min_element(x.begin(), x.end());
    x1 = *std::max_element(x.begin(), x.end());
    y0 = *std::min_element(y.begin(), y.end());
    y1 = *std::max_element(y.begin(), y.end());
  }
  const double sx = (w - 2 * m) / std::max(x1 - x0, 1e-12), sy = (h - 2 * m) / std::max(y1 - y0, 1e-12);
  std::map<std::string, std::size_t> color;
  for (const auto& l : labels) color.emplace(l, color.size());
  std::string s = header(w, h + 20 * static_cast<double>(color.size())) + text(w / 2, 20, title);
  for (std::size_t i = 0; i < x.size(); ++i)
    s += "<circle cx=\"" + fixed(m + (x[i] - x0) * sx) + "\" cy=\"" + fixed(h - m - (y[i] - y0) * sy) +
         "\" r=\"2.5\" fill=\"" + palette(color[labels[i]]) + "\" fill-opacity=\"0.7\"/>\n";
  for (const auto& [label, idx] : color) {
    const double yy = h + 20 * static_cast<double>(idx);
    s += "<circle cx=\"" + fixed(m) + "\" cy=\"" + fixed(yy - 4) + "\" r=\"4\" fill=\"" + palette(idx) + "\"/>\n";
    s += text(m + 10, yy, label, "start");
  }
  return s + "</svg>\n";
}

/// Bar chart with error bars; values may be negative.
inline std::string bars(const std::vector<std::string>& labels, const std::vector<double>& v,
                        const std::vector<double>& lo, const std::vector<double>& hi, const std::string& title) {
  const double w = 120 + 80 * static_cast<double>(labels.size()), h = 360, t = 40, b = 50, l = 80;
  double vmin = 0, vmax = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    vmin = std::min({vmin, v[i], lo[i]});
    vmax = std::max({vmax, v[i], hi[i]});
  }
  const double span = std::max(vmax - vmin, 1e-12);
  auto py = [&](double val) { return t + (h - t - b) * (vmax - val) / span; };
  std::string s = header(w, h) + text(w / 2, 20, title);
  s += text(l - 6, py(vmax) + 4, fixed(vmax, 1), "end") + text(l - 6, py(vmin) + 4, fixed(vmin, 1), "end");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = l + 20 + 80 * static_cast<double>(i);
    const double y_top = std::min(py(v[i]), py(0.0)), y_bot = std::max(py(v[i]), py(0.0));
    s += "<rect x=\"" + fixed(x) + "\" y=\"" + fixed(y_top) + "\" width=\"50\" height=\"" +
         fixed(std::max(y_bot - y_top, 0.5)) + "\" fill=\"" + palette(i) + "\"/>\n";
    s += "<line x1=\"" + fixed(x + 25) + "\" y1=\"" + fixed(py(lo[i])) + "\" x2=\"" + fixed(x + 25) + "\" y2=\"" +
         fixed(py(hi[i])) + "\" stroke=\"black\"/>\n";
    s += text(x + 25, h - b + 16, labels[i]);
  }
  return s + "</svg>\n";
}

}  // namespace advpol::svg
