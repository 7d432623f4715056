#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace bitslab {

struct LineSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Boxes drawn from quartiles only (no whiskers).
struct BoxSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> q25, median, q75;
};

/// Minimal standalone SVG chart; the plotted numbers are repeated in comments.
struct SvgChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<LineSeries> lines;
  std::vector<BoxSeries> boxes;
  double width = 720.0;
  double height = 440.0;

  std::string render() const {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    const double left = 70, right = 170, top = 40, bottom = 55;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    auto extend = [&](const std::vector<double>& xs, const std::vector<double>& ys) {
      for (double v : xs) if (std::isfinite(v)) { x0 = std::min(x0, v); x1 = std::max(x1, v); }
      for (double v : ys) if (std::isfinite(v)) { y0 = std::min(y0, v); y1 = std::max(y1, v); }
    };
    for (const auto& s : lines) extend(s.x, s.y);
    for (const auto& b : boxes) {
      extend(b.x, b.q25);
      extend(b.x, b.q75);
    }
    if (!(x0 < x1)) { x0 = std::isfinite(x0) ? x0 - 1 : 0; x1 = x0 + 2; }
    if (!(y0 < y1)) { y0 = std::isfinite(y0) ? y0 - 1 : 0; y1 = y0 + 2; }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
    auto sy = [&](double v) { return top + (y1 - v) / (y1 - y0) * ph; };
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.6g", v);
      return std::string(buf);
    };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 5; ++i) {
      const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
      o << "<line x1=\"" << sx(xv) << "\" y1=\"" << top + ph << "\" x2=\"" << sx(xv) << "\" y2=\"" << top + ph + 5
        << "\" stroke=\"#333\"/><text x=\"" << sx(xv) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << num(xv) << "</text>\n";
      o << "<line x1=\"" << left - 5 << "\" y1=\"" << sy(yv) << "\" x2=\"" << left << "\" y2=\"" << sy(yv)
        << "\" stroke=\"#333\"/><text x=\"" << left - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">"
        << num(yv) << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
    o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";

    std::size_t k = 0;
    auto legend = [&](const std::string& label, const char* color) {
      const double ly = top + 16.0 * static_cast<double>(k);
      o << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\"" << color
        << "\"/><text x=\"" << left + pw + 30 << "\" y=\"" << ly + 10 << "\">" << label << "</text>\n";
    };
    for (const auto& b : boxes) {
      const char* color = palette[k % 6];
      o << "<!-- data " << b.label << ": x,q25,median,q75\n";
      for (std::size_t i = 0; i < b.x.size(); ++i)
        o << num(b.x[i]) << "," << num(b.q25[i]) << "," << num(b.median[i]) << "," << num(b.q75[i]) << "\n";
      o << "-->\n";
      const double w = std::max(1.0, 0.6 * pw / std::max<double>(1.0, static_cast<double>(b.x.size())));
      for (std::size_t i = 0; i < b.x.size(); ++i) {
        o << "<rect x=\"" << sx(b.x[i]) - w / 2 << "\" y=\"" << sy(b.q75[i]) << "\" width=\"" << w << "\" height=\""
          << std::max(0.5, sy(b.q25[i]) - sy(b.q75[i])) << "\" fill=\"" << color << "\" fill-opacity=\"0.35\" stroke=\""
          << color << "\" stroke-width=\"0.5\"/>\n";
        o << "<line x1=\"" << sx(b.x[i]) - w / 2 << "\" y1=\"" << sy(b.median[i]) << "\" x2=\"" << sx(b.x[i]) + w / 2
          << "\" y2=\"" << sy(b.median[i]) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
      }
      legend(b.label, color);
      ++k;
    }
    for (const auto& s : lines) {
      const char* color = palette[k % 6];
      o << "<!-- data " << s.label << ": x,y\n";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << num(s.x[i]) << "," << num(s.y[i]) << "\n";
      o << "-->\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i)
        if (std::isfinite(s.y[i])) o << sx(s.x[i]) << "," << sy(s.y[i]) << " ";
      o << "\"/>\n";
      legend(s.label, color);
      ++k;
    }
    o << "</svg>\n";
    return o.str();
  }
};

}  // namespace bitslab
