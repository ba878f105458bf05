#include <fstream>

#include <gtest/gtest.h>

#include "csst/report.hpp"
#include "fixtures.hpp"

using namespace csst;
using csst::testing::scratch_dir;
using csst::testing::slurp;

namespace {

std::filesystem::path run_dir(const std::string& name, const std::string& csv) {
  const auto dir = scratch_dir("report_" + name);
  std::ofstream(dir / "metrics.csv") << csv;
  return dir;
}

}  // namespace

TEST(LoadRunMetrics, ReadsValuesAndBlanks) {
  const auto r = load_run_metrics(run_dir("read", "metric,value\naccuracy,61.5\nacc_tail,\nci,0.25\n"), "base");
  EXPECT_EQ(r.label, "base");
  ASSERT_EQ(r.values.size(), 3u);
  EXPECT_EQ(r.get("accuracy"), 61.5);
  EXPECT_FALSE(r.get("acc_tail").has_value());
  EXPECT_FALSE(r.get("missing").has_value());
  EXPECT_EQ(r.values[2].first, "ci");
}

TEST(LoadRunMetrics, RejectsMalformedFiles) {
  EXPECT_THROW(load_run_metrics(scratch_dir("report_none"), "x"), std::runtime_error);
  EXPECT_THROW(load_run_metrics(run_dir("hdr", "name,value\n"), "x"), std::runtime_error);
  EXPECT_THROW(load_run_metrics(run_dir("comma", "metric,value\naccuracy 3\n"), "x"), std::runtime_error);
  EXPECT_THROW(load_run_metrics(run_dir("num", "metric,value\naccuracy,3q\n"), "x"), std::runtime_error);
}

TEST(ComparisonCsv, UnionInFirstSeenOrder) {
  const std::vector<RunMetrics> runs{
      {"a", {{"accuracy", 50.0}, {"ci", 0.5}}},
      {"b", {{"accuracy", 60.25}, {"cs_1", 40.0}, {"ci", std::nullopt}}},
  };
  EXPECT_EQ(comparison_csv(runs), "metric,a,b\naccuracy,50,60.25\nci,0.5,\ncs_1,,40\n");
}

TEST(BarChart, OneRectPerPresentValue) {
  const std::vector<RunMetrics> runs{
      {"base", {{"accuracy", 50.0}, {"ci", 0.4}}},
      {"a<b", {{"accuracy", 150.0}}},
  };
  const std::vector<ChartMetric> metrics{{"accuracy", 1}, {"ci", 100}};
  const std::string svg = bar_chart_svg(runs, metrics, "cmp");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t bars = 0;
  for (auto p = svg.find("<title>"); p != std::string::npos; p = svg.find("<title>", p + 1)) ++bars;
  EXPECT_EQ(bars, 3u);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
  EXPECT_NE(svg.find("ci x100"), std::string::npos);
  // clamped at the top of the axis: full plot height
  EXPECT_NE(svg.find("height=\"220.0\""), std::string::npos);
}

TEST(WriteReport, WritesCsvAndOptionalSvg) {
  const std::vector<RunMetrics> runs{{"base", {{"accuracy", 50.0}}}};
  const auto out = scratch_dir("report_out");
  write_report(out / "plain", runs, false);
  EXPECT_TRUE(std::filesystem::exists(out / "plain" / "comparison.csv"));
  EXPECT_FALSE(std::filesystem::exists(out / "plain" / "comparison.svg"));
  write_report(out / "both", runs, true);
  EXPECT_EQ(slurp(out / "both" / "comparison.csv"), comparison_csv(runs));
  EXPECT_TRUE(std::filesystem::exists(out / "both" / "comparison.svg"));
}

TEST(DefaultChart, ScalesFractionsOntoPercent) {
  for (const auto& m : default_chart_metrics()) {
    const bool fraction = m.name == "ci" || m.name.rfind("ai_", 0) == 0;
    EXPECT_EQ(m.scale, fraction ? 100.0 : 1.0) << m.name;
  }
}
