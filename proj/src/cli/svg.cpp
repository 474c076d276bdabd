#include "nlid/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace nlid::cli {

namespace {

constexpr double kWidth = 800.0, kHeight = 360.0;
constexpr double kLeft = 70.0, kRight = 20.0, kTop = 40.0, kBottom = 50.0;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string escape(const std::string& s) {
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

}  // namespace

std::string line_plot_svg(const std::string& title, const Eigen::VectorXd& x, const std::vector<Series>& series) {
  double x0 = x.size() ? x.minCoeff() : 0.0, x1 = x.size() ? x.maxCoeff() : 1.0;
  double y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (Eigen::Index i = 0; i < s.values.size(); ++i) {
      if (!std::isfinite(s.values(i))) continue;
      y0 = std::min(y0, s.values(i));
      y1 = std::max(y1, s.values(i));
    }
  }
  if (!(y0 <= y1)) y0 = 0.0, y1 = 1.0;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return kTop + (1.0 - (v - y0) / (y1 - y0)) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\">"
      << escape(title) << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\" "
        << "font-family=\"sans-serif\" font-size=\"11\">" << fmt(yv, "%.4g") << "</text>\n";
    out << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"11\">" << fmt(xv, "%.4g") << "</text>\n";
  }
  std::size_t color = 0;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" << kColors[color % 6] << "\" points=\"";
    const Eigen::Index n = std::min(x.size(), s.values.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(s.values(i))) continue;
      out << (i ? " " : "") << fmt(px(x(i))) << "," << fmt(py(s.values(i)));
    }
    out << "\"/>\n";
    const double ly = kHeight - 14.0;
    const double lx = kLeft + 160.0 * static_cast<double>(color);
    out << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 20 << "\" y2=\"" << ly - 4
        << "\" stroke=\"" << kColors[color % 6] << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << lx + 26 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape(s.label) << "</text>\n";
    ++color;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace nlid::cli
