#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bb/eval.hpp"

namespace bb::plot {

enum class Metric { mse, centroid };

struct ChartOptions {
  std::string title;
  int width = 640;
  int height = 400;
};

/// Standalone SVG line chart of one metric against frame index, one line per
/// curve set with a shaded band of +-1 standard error. Points that are not
/// available (NaN) break the line.
std::string line_chart_svg(const std::vector<eval::CurveSet>& curves, Metric metric,
                           const ChartOptions& options = {});

void write_svg(const std::string& svg, const std::filesystem::path& path);

}  // namespace bb::plot
