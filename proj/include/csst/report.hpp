#pragma once

// Aggregation of several evaluated runs into one comparison table and an
// optional grouped bar chart.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace csst {

struct RunMetrics {
  std::string label;
  std::vector<std::pair<std::string, std::optional<double>>> values;  // file order

  std::optional<double> get(const std::string& metric) const;
};

/// Reads <dir>/metrics.csv. Throws std::runtime_error if it is missing or
/// malformed.
RunMetrics load_run_metrics(const std::filesystem::path& dir, std::string label);

/// metric,<label 1>,<label 2>,... over the union of metrics in first-seen
/// order; absent values are empty cells.
std::string comparison_csv(std::span<const RunMetrics> runs);

struct ChartMetric {
  std::string name;
  double scale = 1.0;  // AI and CI are fractions; x100 puts them on the percent axis
};

/// Grouped bars: one group per metric, one bar per run, on a 0-100 axis.
/// Absent values leave a gap.
std::string bar_chart_svg(std::span<const RunMetrics> runs, std::span<const ChartMetric> metrics,
                          const std::string& title);

/// Metrics charted by default.
const std::vector<ChartMetric>& default_chart_metrics();

/// Writes comparison.csv and, when `svg`, comparison.svg into `out`.
void write_report(const std::filesystem::path& out, std::span<const RunMetrics> runs, bool svg);

}  // namespace csst
