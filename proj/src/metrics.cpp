#include "metadro/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "metadro/error.hpp"
#include "metadro/store_io.hpp"

namespace metadro {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw IngestError("metrics csv: unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::pair<double, double> parse_pm(std::string_view cell) {
  static constexpr std::array<std::string_view, 3> seps = {"±", "$\\pm$", "+-"};
  cell = trim(cell);
  for (auto sep : seps) {
    const auto at = cell.find(sep);
    if (at == std::string_view::npos) continue;
    return {parse_double(trim(cell.substr(0, at))), parse_double(trim(cell.substr(at + sep.size())))};
  }
  throw ValidationError("table row: cell '" + std::string(cell) + "' has no ± separator");
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

Interval confidence_interval(std::span<const double> samples) {
  Interval r;
  if (samples.empty()) return r;
  const double n = static_cast<double>(samples.size());
  double sum = 0.0;
  for (double x : samples) sum += x;
  r.mean = sum / n;
  if (samples.size() < 2) return r;
  double ss = 0.0;
  for (double x : samples) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / (n - 1.0));
  r.half_width = 1.96 * r.std / std::sqrt(n);
  return r;
}

bool same_csv_fields(const MetricsRecord& a, const MetricsRecord& b) {
  return a.iteration == b.iteration && a.avg == b.avg && a.avg_hw == b.avg_hw && a.worst == b.worst &&
         a.worst_hw == b.worst_hw && a.best == b.best && a.best_hw == b.best_hw && a.middle == b.middle &&
         a.middle_hw == b.middle_hw && a.worst_group == b.worst_group && a.best_group == b.best_group &&
         a.middle_group == b.middle_group;
}

std::string format_table_row(const MetricsRecord& r, int precision) {
  auto cell = [&](double v, double hw) { return fixed(v, precision) + "±" + fixed(hw, precision); };
  return cell(r.avg, r.avg_hw) + ", " + cell(r.worst, r.worst_hw) + ", " + cell(r.best, r.best_hw) + ", " +
         cell(r.middle, r.middle_hw);
}

MetricsRecord parse_table_row(std::string_view row) {
  std::vector<std::string_view> cells;
  // Accept both ", " and LaTeX " & " column separators.
  std::size_t start = 0;
  for (std::size_t i = 0; i <= row.size(); ++i) {
    if (i == row.size() || row[i] == ',' || row[i] == '&') {
      cells.push_back(row.substr(start, i - start));
      start = i + 1;
    }
  }
  if (cells.size() != 4)
    throw ValidationError("table row: expected 4 cells, got " + std::to_string(cells.size()));
  MetricsRecord r;
  std::tie(r.avg, r.avg_hw) = parse_pm(cells[0]);
  std::tie(r.worst, r.worst_hw) = parse_pm(cells[1]);
  std::tie(r.best, r.best_hw) = parse_pm(cells[2]);
  std::tie(r.middle, r.middle_hw) = parse_pm(cells[3]);
  for (double v : {r.avg, r.worst, r.best, r.middle})
    if (v < 0.0 || v > 1.0) throw ValidationError("table row: accuracy outside [0, 1]");
  for (double v : {r.avg_hw, r.worst_hw, r.best_hw, r.middle_hw})
    if (v < 0.0) throw ValidationError("table row: negative half-width");
  return r;
}

MetricsFormat parse_metrics_format(std::string_view name) {
  if (name == "csv") return MetricsFormat::Csv;
  if (name == "json") return MetricsFormat::Json;
  throw ValidationError("metrics format must be csv or json, got '" + std::string(name) + "'");
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> history) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : history) {
    out << r.iteration;
    for (double v : {r.avg, r.avg_hw, r.worst, r.worst_hw, r.best, r.best_hw, r.middle, r.middle_hw})
      out << ',' << format_double(v);
    out << ',' << quote(r.worst_group) << ',' << quote(r.best_group) << ',' << quote(r.middle_group) << '\n';
  }
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("metrics csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsCsvHeader) throw IngestError("metrics csv: header mismatch");
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 12)
      throw IngestError("metrics csv line " + std::to_string(line_no) + ": expected 12 fields");
    MetricsRecord r;
    try {
      r.iteration = std::stol(f[0]);
      r.avg = parse_double(f[1]);
      r.avg_hw = parse_double(f[2]);
      r.worst = parse_double(f[3]);
      r.worst_hw = parse_double(f[4]);
      r.best = parse_double(f[5]);
      r.best_hw = parse_double(f[6]);
      r.middle = parse_double(f[7]);
      r.middle_hw = parse_double(f[8]);
    } catch (const std::exception& e) {
      throw IngestError("metrics csv line " + std::to_string(line_no) + ": " + e.what());
    }
    r.worst_group = f[9];
    r.best_group = f[10];
    r.middle_group = f[11];
    out.push_back(std::move(r));
  }
  return out;
}

void write_metrics_json(std::ostream& out, std::span<const MetricsRecord> history) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : history) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["avg"] = r.avg;
    j["avg_hw"] = r.avg_hw;
    j["worst"] = r.worst;
    j["worst_hw"] = r.worst_hw;
    j["best"] = r.best;
    j["best_hw"] = r.best_hw;
    j["middle"] = r.middle;
    j["middle_hw"] = r.middle_hw;
    j["worst_group"] = r.worst_group;
    j["best_group"] = r.best_group;
    j["middle_group"] = r.middle_group;
    j["avg_std"] = r.avg_std;
    j["group_losses"] = nlohmann::ordered_json::object();
    for (const auto& [g, l] : r.group_losses) j["group_losses"][g] = l;
    arr.push_back(std::move(j));
  }
  out << arr.dump(2) << '\n';
}

std::vector<MetricsRecord> read_metrics_json(std::istream& in) {
  std::vector<MetricsRecord> out;
  try {
    const auto arr = nlohmann::json::parse(in);
    if (!arr.is_array()) throw IngestError("metrics json: top level must be an array");
    for (const auto& j : arr) {
      MetricsRecord r;
      r.iteration = j.at("iteration").get<long>();
      r.avg = j.at("avg").get<double>();
      r.avg_hw = j.at("avg_hw").get<double>();
      r.worst = j.at("worst").get<double>();
      r.worst_hw = j.at("worst_hw").get<double>();
      r.best = j.at("best").get<double>();
      r.best_hw = j.at("best_hw").get<double>();
      r.middle = j.at("middle").get<double>();
      r.middle_hw = j.at("middle_hw").get<double>();
      r.worst_group = j.at("worst_group").get<std::string>();
      r.best_group = j.at("best_group").get<std::string>();
      r.middle_group = j.at("middle_group").get<std::string>();
      r.avg_std = j.value("avg_std", 0.0);
      if (j.contains("group_losses"))
        for (const auto& [g, l] : j["group_losses"].items()) r.group_losses[g] = l.get<double>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(std::string("metrics json: ") + e.what());
  }
  return out;
}

void export_metrics(std::span<const MetricsRecord> history, const std::filesystem::path& path,
                    MetricsFormat format) {
  if (history.empty()) throw ValidationError("export_metrics: empty history");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  if (format == MetricsFormat::Csv)
    write_metrics_csv(out, history);
  else
    write_metrics_json(out, history);
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<MetricsRecord> import_metrics(const std::filesystem::path& path, MetricsFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return format == MetricsFormat::Csv ? read_metrics_csv(in) : read_metrics_json(in);
}

}  // namespace metadro
