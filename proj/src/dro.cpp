#include "metadro/dro.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <ostream>

#include "metadro/error.hpp"
#include "metadro/store_io.hpp"

namespace metadro {

using ad::Tensor;
using ad::Var;

DroMode parse_dro_mode(std::string_view name) {
  if (name == "erm") return DroMode::Erm;
  if (name == "dro") return DroMode::Dro;
  if (name == "adjusted" || name == "group_adjusted_dro") return DroMode::GroupAdjusted;
  throw ValidationError("mode must be erm, dro or adjusted, got '" + std::string(name) + "'");
}

std::string_view to_string(DroMode mode) {
  switch (mode) {
    case DroMode::Erm: return "erm";
    case DroMode::Dro: return "dro";
    case DroMode::GroupAdjusted: return "adjusted";
  }
  return "?";
}

CountSource parse_count_source(std::string_view name) {
  if (name == "cumulative") return CountSource::Cumulative;
  if (name == "batch") return CountSource::Batch;
  throw ValidationError("count source must be cumulative or batch, got '" + std::string(name) + "'");
}

std::string_view to_string(CountSource source) {
  return source == CountSource::Cumulative ? "cumulative" : "batch";
}

void DroConfig::validate() const {
  if (!std::isfinite(l2) || l2 < 0) throw ValidationError("l2 must be finite and >= 0");
  if (!std::isfinite(adjust_scale) || adjust_scale < 0)
    throw ValidationError("adjust_scale must be finite and >= 0");
}

GroupSummaries partition_by_group(std::span<const std::pair<std::string, double>> losses) {
  if (losses.empty()) throw ValidationError("partition_by_group: no losses");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [group, loss] : losses) {
    auto& [sum, n] = acc[group];
    sum += loss;
    ++n;
  }
  GroupSummaries out;
  for (const auto& [group, a] : acc) out[group] = {a.first / static_cast<double>(a.second), a.second};
  return out;
}

GroupLosses partition_by_group(ad::Tape& tape, std::span<const QueryLosses> batch) {
  if (batch.empty()) throw ValidationError("partition_by_group: empty meta batch");
  std::map<std::string, std::size_t> counts;
  for (const auto& task : batch) {
    if (static_cast<std::size_t>(task.losses.rows()) != task.groups.size() || task.losses.cols() != 1)
      throw DimensionError("partition_by_group: losses must be m x 1 with one group per row");
    for (const auto& g : task.groups) ++counts[g];
  }

  GroupLosses out;
  for (const auto& [group, n] : counts) {
    const double w = 1.0 / static_cast<double>(n);
    Var total;
    for (const auto& task : batch) {
      Tensor weights = Tensor::Zero(1, task.losses.rows());
      bool any = false;
      for (std::size_t i = 0; i < task.groups.size(); ++i)
        if (task.groups[i] == group) {
          weights(0, static_cast<Eigen::Index>(i)) = w;
          any = true;
        }
      if (!any) continue;
      Var part = ad::matmul(tape.constant(std::move(weights)), task.losses);
      total = total.valid() ? ad::add(total, part) : part;
    }
    out[group] = {total, n};
  }
  return out;
}

GroupSummaries summarize(const GroupLosses& groups) {
  GroupSummaries out;
  for (const auto& [g, l] : groups) out[g] = {l.mean_loss.scalar(), l.count};
  return out;
}

std::size_t GroupStats::count(const std::string& group) const {
  auto it = entries_.find(group);
  return it == entries_.end() ? 0 : it->second.count;
}

GroupStats GroupStats::updated(const GroupSummaries& batch) const {
  GroupStats next = *this;
  for (const auto& [group, s] : batch) {
    auto& e = next.entries_[group];
    e.loss_sum += s.mean_loss * static_cast<double>(s.count);
    e.count += s.count;
  }
  return next;
}

GroupStats GroupStats::from_entries(std::map<std::string, Entry> entries) {
  GroupStats s;
  s.entries_ = std::move(entries);
  return s;
}

RobustObjective robust_objective(const GroupLosses& groups, const GroupStats& stats,
                                 const DroConfig& config, std::span<const Var> params) {
  config.validate();
  if (groups.empty()) throw ValidationError("robust_objective: no groups");
  ad::Tape& tape = groups.begin()->second.mean_loss.tape();

  RobustObjective result;
  if (config.mode == DroMode::Erm) {
    std::size_t total = 0;
    for (const auto& [g, l] : groups) total += l.count;
    for (const auto& [g, l] : groups) {
      Var part = ad::scale(l.mean_loss, static_cast<double>(l.count) / static_cast<double>(total));
      result.value = result.value.valid() ? ad::add(result.value, part) : part;
      result.scores[g] = l.mean_loss.scalar();
    }
  } else {
    const bool adjusted = config.mode == DroMode::GroupAdjusted;
    const GroupLosses::value_type* best = nullptr;
    double best_score = 0.0;
    double best_adjust = 0.0;
    for (const auto& entry : groups) {
      const auto& [g, l] = entry;
      double adjust = 0.0;
      if (adjusted) {
        const std::size_t n = config.counts == CountSource::Cumulative ? stats.count(g) + l.count : l.count;
        assert(n >= 1);
        if (n == 0) throw NumericError("robust_objective: group '" + g + "' has n_g = 0");
        adjust = config.adjust_scale / std::sqrt(static_cast<double>(n));
      }
      const double score = l.mean_loss.scalar() + adjust;
      result.scores[g] = score;
      // std::map iterates in label order, so strict > keeps the smallest label on ties.
      if (!best || score > best_score) {
        best = &entry;
        best_score = score;
        best_adjust = adjust;
      }
    }
    result.selected = best->first;
    result.value = best->second.mean_loss;
    if (adjusted && best_adjust != 0.0) result.value = ad::add(result.value, tape.scalar(best_adjust));
  }

  if (config.l2 > 0.0 && !params.empty()) {
    Var reg;
    for (const auto& p : params) {
      Var sq = ad::squared_norm(p);
      reg = reg.valid() ? ad::add(reg, sq) : sq;
    }
    result.value = ad::add(result.value, ad::scale(reg, config.l2));
  }
  return result;
}

GroupRanking rank_groups(const GroupStats& stats) {
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [g, e] : stats.entries())
    if (e.count > 0) ranked.emplace_back(e.mean(), g);
  if (ranked.empty()) throw RankingError("rank_groups: no group has observations");
  std::sort(ranked.begin(), ranked.end());

  GroupRanking r;
  r.best = ranked.front().second;
  const double top = ranked.back().first;
  r.worst = std::find_if(ranked.begin(), ranked.end(), [&](const auto& x) { return x.first == top; })->second;
  r.middle = ranked[(ranked.size() - 1) / 2].second;
  return r;
}

void write_group_stats_csv(std::ostream& out, const GroupStats& stats) {
  out << "group,n,mean_loss\n";
  for (const auto& [g, e] : stats.entries())
    out << g << ',' << e.count << ',' << format_double(e.mean()) << '\n';
}

}  // namespace metadro
