#include "csst/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csst {

std::optional<double> RunMetrics::get(const std::string& metric) const {
  for (const auto& [name, v] : values)
    if (name == metric) return v;
  return std::nullopt;
}

RunMetrics load_run_metrics(const std::filesystem::path& dir, std::string label) {
  const auto path = dir / "metrics.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RunMetrics run;
  run.label = std::move(label);
  std::string line;
  if (!std::getline(in, line) || line != "metric,value") {
    throw std::runtime_error(path.string() + ": expected header 'metric,value'");
  }
  for (int n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": no comma");
    const std::string name = line.substr(0, comma), text = line.substr(comma + 1);
    std::optional<double> v;
    if (!text.empty()) {
      double x = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": bad value '" + text + "'");
      }
      v = x;
    }
    run.values.emplace_back(name, v);
  }
  return run;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v, int digits = 1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
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

std::string label(const ChartMetric& m) {
  return m.scale == 1.0 ? m.name : m.name + " x" + num(m.scale);
}

}  // namespace

std::string comparison_csv(std::span<const RunMetrics> runs) {
  std::vector<std::string> metrics;
  for (const auto& r : runs)
    for (const auto& [name, v] : r.values)
      if (std::find(metrics.begin(), metrics.end(), name) == metrics.end()) metrics.push_back(name);

  std::ostringstream out;
  out << "metric";
  for (const auto& r : runs) out << ',' << r.label;
  out << '\n';
  for (const auto& m : metrics) {
    out << m;
    for (const auto& r : runs) {
      const auto v = r.get(m);
      out << ',' << (v ? num(*v) : std::string());
    }
    out << '\n';
  }
  return out.str();
}

const std::vector<ChartMetric>& default_chart_metrics() {
  static const std::vector<ChartMetric> m{{"accuracy", 1}, {"acc_tail", 1}, {"acc_head", 1},
                                          {"ai_1", 100}, {"ci", 100},     {"cs_1", 1}};
  return m;
}

std::string bar_chart_svg(std::span<const RunMetrics> runs, std::span<const ChartMetric> metrics,
                          const std::string& title) {
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};
  const double bar = 18, gap = 24, left = 50, top = 40, plot_h = 220;
  const double group_w = bar * static_cast<double>(std::max<std::size_t>(runs.size(), 1)) + gap;
  const double width = left + group_w * static_cast<double>(metrics.size()) + 20;
  const double legend_y = top + plot_h + 40;
  const double height = legend_y + 20 * static_cast<double>(runs.size()) + 10;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\""
    << fixed(height, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << fixed(left, 0) << "\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = top + plot_h * (1.0 - tick / 100.0);
    s << "<line x1=\"" << fixed(left, 0) << "\" y1=\"" << fixed(y) << "\" x2=\"" << fixed(width - 20, 0)
      << "\" y2=\"" << fixed(y) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << fixed(left - 6, 0) << "\" y=\"" << fixed(y + 4) << "\" text-anchor=\"end\">" << tick
      << "</text>\n";
  }
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    const double x0 = left + gap / 2 + group_w * static_cast<double>(m);
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto v = runs[r].get(metrics[m].name);
      if (!v) continue;
      const double h = plot_h * std::clamp(*v * metrics[m].scale, 0.0, 100.0) / 100.0;
      const double x = x0 + bar * static_cast<double>(r);
      s << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(top + plot_h - h) << "\" width=\"" << fixed(bar - 2)
        << "\" height=\"" << fixed(h) << "\" fill=\"" << palette[r % 6] << "\"><title>"
        << escape(runs[r].label + " " + metrics[m].name + " = " + num(*v)) << "</title></rect>\n";
    }
    s << "<text x=\"" << fixed(x0 + (group_w - gap) / 2) << "\" y=\"" << fixed(top + plot_h + 16)
      << "\" text-anchor=\"middle\">" << escape(label(metrics[m])) << "</text>\n";
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const double y = legend_y + 20 * static_cast<double>(r);
    s << "<rect x=\"" << fixed(left, 0) << "\" y=\"" << fixed(y - 10) << "\" width=\"12\" height=\"12\" fill=\""
      << palette[r % 6] << "\"/>\n";
    s << "<text x=\"" << fixed(left + 18, 0) << "\" y=\"" << fixed(y) << "\">" << escape(runs[r].label)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_report(const std::filesystem::path& out, std::span<const RunMetrics> runs, bool svg) {
  if (runs.empty()) throw std::invalid_argument("report: no runs");
  std::filesystem::create_directories(out);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream f(out / name, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (out / name).string());
    f << body;
  };
  write("comparison.csv", comparison_csv(runs));
  if (svg) write("comparison.svg", bar_chart_svg(runs, default_chart_metrics(), "Test metrics by run"));
}

}  // namespace csst
