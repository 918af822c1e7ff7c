#include "bb/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "bb/error.hpp"

namespace bb::plot {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
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

// Rounds the axis maximum up to 1, 2 or 5 times a power of ten.
double nice_ceiling(double v) {
  if (!(v > 0.0)) return 1.0;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * p >= v) return m * p;
  }
  return 10.0 * p;
}

}  // namespace

std::string line_chart_svg(const std::vector<eval::CurveSet>& curves, Metric metric,
                           const ChartOptions& options) {
  const double left = 60, right = 150, top = 36, bottom = 44;
  const double pw = options.width - left - right;
  const double ph = options.height - top - bottom;

  auto mean_of = [&](const eval::CurveSet& c) -> const std::vector<double>& {
    return metric == Metric::mse ? c.mse_mean : c.cd_mean;
  };
  auto se_of = [&](const eval::CurveSet& c) -> const std::vector<double>& {
    return metric == Metric::mse ? c.mse_se : c.cd_se;
  };

  int x_max = 1;
  double y_max = 0.0;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.frame_index.size(); ++i) {
      x_max = std::max(x_max, c.frame_index[i]);
      const double top_value = mean_of(c)[i] + se_of(c)[i];
      if (std::isfinite(top_value)) y_max = std::max(y_max, top_value);
    }
  }
  y_max = nice_ceiling(y_max);
  const int x_min = 1;
  auto sx = [&](double x) {
    return x_max == x_min ? left + pw / 2 : left + (x - x_min) / (x_max - x_min) * pw;
  };
  auto sy = [&](double y) { return top + ph - std::clamp(y / y_max, 0.0, 1.0) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\""
      << options.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!options.title.empty()) {
    svg << "<text x=\"" << num(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << escape(options.title) << "</text>\n";
  }

  for (int t = 0; t <= 5; ++t) {
    const double v = y_max * t / 5.0;
    svg << "<line x1=\"" << num(left) << "\" x2=\"" << num(left + pw) << "\" y1=\"" << num(sy(v))
        << "\" y2=\"" << num(sy(v)) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << num(left - 6) << "\" y=\"" << num(sy(v) + 4)
        << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  const int x_step = std::max(1, (x_max - x_min) / 10);
  for (int x = x_min; x <= x_max; x += x_step) {
    svg << "<text x=\"" << num(sx(x)) << "\" y=\"" << num(top + ph + 16)
        << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  svg << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw)
      << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(options.height - 8)
      << "\" text-anchor=\"middle\">predicted frame</text>\n";
  svg << "<text transform=\"translate(16 " << num(top + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">"
      << (metric == Metric::mse ? "scaled MSE" : "centroid distance [px]") << "</text>\n";

  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c = curves[ci];
    const char* color = kPalette[ci % std::size(kPalette)];
    const auto& mean = mean_of(c);
    const auto& se = se_of(c);

    // Split into runs of available points.
    std::vector<std::vector<std::size_t>> runs(1);
    for (std::size_t i = 0; i < c.frame_index.size(); ++i) {
      if (std::isfinite(mean[i])) {
        runs.back().push_back(i);
      } else if (!runs.back().empty()) {
        runs.emplace_back();
      }
    }
    for (const auto& run : runs) {
      if (run.empty()) continue;
      svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i : run) svg << num(sx(c.frame_index[i])) << ',' << num(sy(mean[i] + se[i])) << ' ';
      for (auto it = run.rbegin(); it != run.rend(); ++it) {
        svg << num(sx(c.frame_index[*it])) << ',' << num(sy(mean[*it] - se[*it])) << ' ';
      }
      svg << "\"/>\n";
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i : run) svg << num(sx(c.frame_index[i])) << ',' << num(sy(mean[i])) << ' ';
      svg << "\"/>\n";
    }
    const double ly = top + 12 + 18.0 * ci;
    svg << "<line x1=\"" << num(left + pw + 10) << "\" x2=\"" << num(left + pw + 30) << "\" y1=\""
        << num(ly) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(left + pw + 34) << "\" y=\"" << num(ly + 4) << "\">" << escape(c.name)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_svg(const std::string& svg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write plot '" + path.string() + "'");
  out << svg;
}

}  // namespace bb::plot
