#include "svg.hpp"

#include <array>
#include <iomanip>
#include <sstream>

namespace cysgan::cli {

namespace {

constexpr double kWidth = 480, kHeight = 360, kLeft = 50, kTop = 20, kPlot = 280;

double px(double recall) { return kLeft + recall * kPlot; }
double py(double precision) { return kTop + (1.0 - precision) * kPlot; }

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

}  // namespace

std::string pr_curve_svg(const std::vector<std::pair<std::string, APReport>>& curves) {
  static const std::array<const char*, 6> colors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kPlot << "\" height=\"" << kPlot
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    s << "<text x=\"" << px(v) << "\" y=\"" << kTop + kPlot + 15 << "\" font-size=\"10\" text-anchor=\"middle\">" << v
      << "</text>\n";
    s << "<text x=\"" << kLeft - 5 << "\" y=\"" << py(v) + 3 << "\" font-size=\"10\" text-anchor=\"end\">" << v
      << "</text>\n";
  }
  s << "<text x=\"" << px(0.5) << "\" y=\"" << kTop + kPlot + 32 << "\" font-size=\"12\" text-anchor=\"middle\">recall</text>\n";
  s << "<text x=\"12\" y=\"" << py(0.5) << "\" font-size=\"12\" transform=\"rotate(-90 12 " << py(0.5)
    << ")\" text-anchor=\"middle\">precision</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& [name, report] = curves[c];
    const char* color = colors[c % colors.size()];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    double prev_r = 0;
    double prev_p = report.precision_recall_curve.empty() ? 0 : report.precision_recall_curve.front().precision;
    s << px(prev_r) << ',' << py(prev_p);
    for (const PrPoint& p : report.precision_recall_curve) {
      s << ' ' << px(p.recall) << ',' << py(prev_p) << ' ' << px(p.recall) << ',' << py(p.precision);
      prev_r = p.recall;
      prev_p = p.precision;
    }
    s << "\"/>\n";
    const double ly = kTop + 12 + 16.0 * static_cast<double>(c);
    s << "<line x1=\"" << kLeft + kPlot + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + kPlot + 25 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << color << "\"/>\n";
    s << "<text x=\"" << kLeft + kPlot + 30 << "\" y=\"" << ly << "\" font-size=\"10\">" << escape(name) << " ("
      << std::setprecision(3) << report.ap50 << std::setprecision(2) << ")</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace cysgan::cli
