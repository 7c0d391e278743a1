#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metadro {

/// Mean with a 95% normal-approximation half-width, 1.96 * s / sqrt(n), where
/// s is the sample standard deviation. Fewer than two samples give zero width.
struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
  double std = 0.0;
};

Interval confidence_interval(std::span<const double> samples);

/// One evaluation snapshot in the avg / worst / best / middle layout.
struct MetricsRecord {
  long iteration = 0;
  double avg = 0.0;
  double avg_hw = 0.0;
  double worst = 0.0;
  double worst_hw = 0.0;
  double best = 0.0;
  double best_hw = 0.0;
  double middle = 0.0;
  double middle_hw = 0.0;
  std::string worst_group;
  std::string best_group;
  std::string middle_group;
  // JSON only.
  double avg_std = 0.0;
  std::map<std::string, double> group_losses;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Fields carried by the CSV export; JSON additionally keeps avg_std and
/// group_losses.
bool same_csv_fields(const MetricsRecord& a, const MetricsRecord& b);

inline constexpr std::string_view kMetricsCsvHeader =
    "iteration,avg,avg_hw,worst,worst_hw,best,best_hw,middle,middle_hw,worst_group,best_group,"
    "middle_group";

/// "0.714±0.029, 0.594±0.020, 0.963±0.007, 0.631±0.021" (avg, worst, best, middle).
std::string format_table_row(const MetricsRecord& record, int precision = 3);
/// Inverse of format_table_row; also accepts "+-" and "$\pm$" separators.
MetricsRecord parse_table_row(std::string_view row);

enum class MetricsFormat { Csv, Json };
MetricsFormat parse_metrics_format(std::string_view name);

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> history);
std::vector<MetricsRecord> read_metrics_csv(std::istream& in);
void write_metrics_json(std::ostream& out, std::span<const MetricsRecord> history);
std::vector<MetricsRecord> read_metrics_json(std::istream& in);

void export_metrics(std::span<const MetricsRecord> history, const std::filesystem::path& path,
                    MetricsFormat format);
std::vector<MetricsRecord> import_metrics(const std::filesystem::path& path, MetricsFormat format);

}  // namespace metadro
