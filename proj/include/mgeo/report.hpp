#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mgeo {

/// One line of every CSV this tool writes: model,condition,token_set,layer,metric,value
struct CsvRow {
  std::string model;
  std::string condition;
  std::string token_set;
  int layer = 0;
  std::string metric;
  double value = 0.0;  // NaN is written as "nan" (undefined statistic)

  bool operator==(const CsvRow&) const = default;
};

inline constexpr const char* kCsvHeader = "model,condition,token_set,layer,metric,value";

/// Values are printed with %.9g so identical rows give identical bytes.
std::string format_csv(std::span<const CsvRow> rows);
void write_csv(const std::filesystem::path& path, std::span<const CsvRow> rows);
std::vector<CsvRow> parse_csv(const std::string& text);
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label = "layer";
  std::string y_label;
  std::vector<ChartSeries> series;
  std::vector<std::pair<double, std::string>> markers;  // vertical lines at x, with a label
};

/// Self-contained SVG; the plotted data is repeated in an XML comment.
std::string render_svg(const LineChart& chart);

/// One chart per (model, metric): series are (condition, token_set) pairs.
/// Effect curves named input_month and output_prediction under the same
/// condition get a phase-change marker when one exists.
std::vector<std::pair<std::string, LineChart>> build_charts(std::span<const CsvRow> rows);

}  // namespace mgeo
