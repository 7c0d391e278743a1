#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metadro/autodiff.hpp"

namespace metadro {

enum class DroMode { Erm, Dro, GroupAdjusted };
/// Which n_g feeds the 1/sqrt(n_g) adjustment.
enum class CountSource { Cumulative, Batch };

DroMode parse_dro_mode(std::string_view name);  // erm | dro | adjusted
std::string_view to_string(DroMode mode);
CountSource parse_count_source(std::string_view name);  // cumulative | batch
std::string_view to_string(CountSource source);

struct DroConfig {
  DroMode mode = DroMode::Erm;
  double l2 = 0.0;
  double adjust_scale = 1.0;
  CountSource counts = CountSource::Cumulative;

  void validate() const;
};

struct GroupSummary {
  double mean_loss = 0.0;
  std::size_t count = 0;

  friend bool operator==(const GroupSummary&, const GroupSummary&) = default;
};
using GroupSummaries = std::map<std::string, GroupSummary>;

/// Per-group arithmetic mean of (group, loss) pairs.
GroupSummaries partition_by_group(std::span<const std::pair<std::string, double>> losses);

/// Per-example loss column of one task with the matching query group codes.
struct QueryLosses {
  ad::Var losses;  // m x 1
  std::span<const std::string> groups;
};

struct GroupLoss {
  ad::Var mean_loss;  // 1x1, differentiable
  std::size_t count = 0;
};
using GroupLosses = std::map<std::string, GroupLoss>;

/// Groups every query example of the meta batch, across all tasks, and takes
/// the per-group mean as a differentiable scalar.
GroupLosses partition_by_group(ad::Tape& tape, std::span<const QueryLosses> batch);
GroupSummaries summarize(const GroupLosses& groups);

/// Global running loss totals per group.
class GroupStats {
 public:
  struct Entry {
    double loss_sum = 0.0;
    std::size_t count = 0;
    double mean() const { return count ? loss_sum / static_cast<double>(count) : 0.0; }

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t count(const std::string& group) const;
  bool empty() const { return entries_.empty(); }

  /// Batch contributions added on top of these totals; `*this` is unchanged.
  GroupStats updated(const GroupSummaries& batch) const;

  static GroupStats from_entries(std::map<std::string, Entry> entries);

  friend bool operator==(const GroupStats&, const GroupStats&) = default;

 private:
  std::map<std::string, Entry> entries_;
};

inline GroupStats update_stats(const GroupStats& stats, const GroupSummaries& batch) {
  return stats.updated(batch);
}

struct RobustObjective {
  ad::Var value;
  /// Argmax group in dro / adjusted modes; empty for erm.
  std::optional<std::string> selected;
  /// Score each group competed with (mean loss, plus the adjustment if any).
  std::map<std::string, double> scores;
};

/// erm:      count-weighted mean over all query examples
/// dro:      max_g mean_loss_g
/// adjusted: max_g mean_loss_g + C / sqrt(n_g), n_g = cumulative count
///           including this batch (or the batch count alone)
/// then + l2 * sum ||theta||^2 when l2 > 0. Ties pick the smallest label.
/// The max is taken on values, so only the selected group's loss carries
/// gradient.
RobustObjective robust_objective(const GroupLosses& groups, const GroupStats& stats,
                                 const DroConfig& config, std::span<const ad::Var> params);

struct GroupRanking {
  std::string worst;
  std::string best;
  std::string middle;

  friend bool operator==(const GroupRanking&, const GroupRanking&) = default;
};

/// Worst = highest running mean loss, best = lowest, middle = lower median.
/// Ties break toward the smaller label. Throws RankingError when no group has
/// a positive count.
GroupRanking rank_groups(const GroupStats& stats);

/// CSV with header `group,n,mean_loss`.
void write_group_stats_csv(std::ostream& out, const GroupStats& stats);

}  // namespace metadro
