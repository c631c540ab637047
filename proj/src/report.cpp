#include "mgeo/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mgeo/interventions.hpp"
#include "mgeo/tensor.hpp"

namespace mgeo {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string xml_escape(const std::string& s) {
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

std::string format_csv(std::span<const CsvRow> rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.model) + "," + csv_field(r.condition) + "," + csv_field(r.token_set) + "," +
           std::to_string(r.layer) + "," + csv_field(r.metric) + "," +
           (std::isnan(r.value) ? std::string("nan") : fmt("%.9g", r.value)) + "\n";
  }
  return out;
}

void write_csv(const std::filesystem::path& path, std::span<const CsvRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << format_csv(rows);
}

std::vector<CsvRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw Error(std::string("CSV header must be '") + kCsvHeader + "'");
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw Error("CSV line " + std::to_string(lineno) + " does not have 6 fields");
    CsvRow r{f[0], f[1], f[2], 0, f[4], 0.0};
    try {
      r.layer = std::stoi(f[3]);
      r.value = f[5] == "nan" ? std::nan("") : std::stod(f[5]);
    } catch (const std::exception&) {
      throw Error("CSV line " + std::to_string(lineno) + " has a non-numeric layer or value");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open CSV '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string render_svg(const LineChart& chart) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double W = 640, H = 400, left = 70, right = 180, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = (y1 - y0) * 0.05;
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<!-- data\n";
  for (const auto& s : chart.series) {
    o << "series " << xml_escape(s.name) << ":";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << " (" << fmt("%.9g", s.x[i]) << "," << fmt("%.9g", s.y[i]) << ")";
    o << "\n";
  }
  for (const auto& [x, label] : chart.markers) o << "marker " << xml_escape(label) << ": " << fmt("%.9g", x) << "\n";
  o << "-->\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(chart.title)
    << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0;
    o << "<text x=\"" << left - 6 << "\" y=\"" << fmt("%.2f", sy(yv) + 4) << "\" text-anchor=\"end\">"
      << fmt("%.3g", yv) << "</text>\n";
    const double xv = x0 + (x1 - x0) * t / 4.0;
    o << "<text x=\"" << fmt("%.2f", sx(xv)) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
      << fmt("%.3g", xv) << "</text>\n";
  }
  if (y0 < 0 && y1 > 0)
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fmt("%.2f", sy(0)) << "\" y2=\""
      << fmt("%.2f", sy(0)) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"3,3\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(chart.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(chart.y_label) << "</text>\n";

  for (const auto& [x, label] : chart.markers) {
    o << "<line x1=\"" << fmt("%.2f", sx(x)) << "\" x2=\"" << fmt("%.2f", sx(x)) << "\" y1=\"" << top << "\" y2=\""
      << top + ph << "\" stroke=\"blue\" stroke-width=\"2\"><title>" << xml_escape(label) << "</title></line>\n";
  }
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      o << (first ? "" : " ") << fmt("%.2f", sx(s.x[i])) << "," << fmt("%.2f", sy(s.y[i]));
      first = false;
    }
    o << "\"/>\n";
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    o << "<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly - 4 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::pair<std::string, LineChart>> build_charts(std::span<const CsvRow> rows) {
  // (model, metric) -> (condition, token_set) -> layer -> value; std::map keeps output order stable
  std::map<std::pair<std::string, std::string>, std::map<std::pair<std::string, std::string>, std::map<int, double>>>
      groups;
  for (const auto& r : rows) {
    if (r.metric == "phase_change") continue;
    groups[{r.model, r.metric}][{r.condition, r.token_set}][r.layer] = r.value;
  }

  std::vector<std::pair<std::string, LineChart>> charts;
  for (const auto& [key, series] : groups) {
    LineChart c;
    c.title = key.first + ": " + key.second;
    c.y_label = key.second;
    for (const auto& [name, pts] : series) {
      ChartSeries s;
      s.name = name.first + "/" + name.second;
      for (const auto& [layer, v] : pts) {
        s.x.push_back(layer);
        s.y.push_back(v);
      }
      c.series.push_back(std::move(s));
    }
    for (const auto& [name, pts] : series) {
      if (name.second != "input_month") continue;
      auto out = series.find({name.first, "output_prediction"});
      if (out == series.end()) continue;
      EffectCurve in_c, out_c;
      for (const auto& [layer, v] : pts) {
        in_c.layers.push_back(layer);
        in_c.values.push_back(v);
      }
      for (const auto& [layer, v] : out->second) {
        out_c.layers.push_back(layer);
        out_c.values.push_back(v);
      }
      if (in_c.layers != out_c.layers) continue;
      if (auto phase = detect_phase_change(in_c, out_c)) c.markers.emplace_back(*phase, "phase change (" + name.first + ")");
    }
    std::string file = key.first + "_" + key.second;
    for (auto& ch : file)
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    charts.emplace_back(file + ".svg", std::move(c));
  }
  return charts;
}

}  // namespace mgeo
