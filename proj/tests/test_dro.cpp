#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "metadro/dro.hpp"
#include "metadro/error.hpp"

using namespace metadro;
using ad::Tensor;
using ad::Var;

namespace {

GroupLosses constant_groups(ad::Tape& tape, const std::map<std::string, std::pair<double, std::size_t>>& m) {
  GroupLosses out;
  for (const auto& [g, v] : m) out[g] = {tape.parameter(Tensor::Constant(1, 1, v.first)), v.second};
  return out;
}

GroupStats stats_with_means(const std::map<std::string, double>& means) {
  std::map<std::string, GroupStats::Entry> e;
  for (const auto& [g, m] : means) e[g] = {m * 10.0, 10};
  return GroupStats::from_entries(e);
}

}  // namespace

TEST_CASE("partition_by_group examples") {
  std::vector<std::pair<std::string, double>> losses = {{"A", 0.5}, {"A", 0.7}, {"B", 0.9}};
  auto parts = partition_by_group(losses);
  REQUIRE(parts.size() == 2);
  CHECK(std::abs(parts["A"].mean_loss - 0.6) < 1e-15);
  CHECK(parts["A"].count == 2);
  CHECK(parts["B"] == GroupSummary{0.9, 1});

  std::vector<std::pair<std::string, double>> one = {{"Z", 1.0}, {"Z", 3.0}};
  CHECK(partition_by_group(one).size() == 1);

  std::vector<std::pair<std::string, double>> none;
  CHECK_THROWS_AS(partition_by_group(none), ValidationError);
}

TEST_CASE("tape partition matches an independent group-by") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    ad::Tape tape;
    std::vector<std::vector<std::string>> groups(4);
    std::vector<QueryLosses> batch;
    std::map<std::string, std::vector<double>> oracle;
    for (int t = 0; t < 4; ++t) {
      const int m = 3 + static_cast<int>(gen() % 4);
      Tensor col(m, 1);
      for (int i = 0; i < m; ++i) {
        col(i, 0) = u(gen);
        groups[t].push_back("g" + std::to_string(gen() % 5));
        oracle[groups[t].back()].push_back(col(i, 0));
      }
      batch.push_back({tape.parameter(col), groups[t]});
    }
    auto parts = partition_by_group(tape, batch);
    REQUIRE(parts.size() == oracle.size());
    for (const auto& [g, xs] : oracle) {
      double s = 0;
      for (double x : xs) s += x;
      CHECK(std::abs(parts.at(g).mean_loss.scalar() - s / xs.size()) < 1e-12);
      CHECK(parts.at(g).count == xs.size());
    }
  }
}

TEST_CASE("robust_objective examples") {
  ad::Tape tape;
  GroupStats fresh;
  std::vector<Var> none;

  auto groups = constant_groups(tape, {{"A", {0.5, 1}}, {"B", {0.9, 1}}});
  auto dro = robust_objective(groups, fresh, {DroMode::Dro, 0.0, 1.0}, none);
  CHECK(dro.value.scalar() == 0.9);
  CHECK(dro.selected == "B");

  // n_A = 4, n_B = 16 after the batch is counted.
  auto adj_groups = constant_groups(tape, {{"A", {0.5, 4}}, {"B", {0.6, 16}}});
  auto adj = robust_objective(adj_groups, fresh, {DroMode::GroupAdjusted, 0.0, 1.0}, none);
  CHECK(adj.value.scalar() == 1.0);
  CHECK(adj.selected == "A");
  CHECK(adj.scores.at("B") == 0.85);

  // Cumulative counts include history: 12 seen before + 4 now = 16.
  std::map<std::string, GroupStats::Entry> hist = {{"A", {6.0, 12}}};
  auto cum = robust_objective(adj_groups, GroupStats::from_entries(hist),
                              {DroMode::GroupAdjusted, 0.0, 1.0}, none);
  CHECK(cum.scores.at("A") == 0.75);
  CHECK(cum.selected == "B");
  auto per_batch = robust_objective(adj_groups, GroupStats::from_entries(hist),
                                    {DroMode::GroupAdjusted, 0.0, 1.0, CountSource::Batch}, none);
  CHECK(per_batch.selected == "A");

  auto single = constant_groups(tape, {{"A", {0.7, 3}}});
  CHECK(robust_objective(single, fresh, {DroMode::Dro, 0.0, 1.0}, none).value.scalar() == 0.7);

  auto erm = robust_objective(adj_groups, fresh, {DroMode::Erm, 0.0, 1.0}, none);
  CHECK_FALSE(erm.selected.has_value());
  CHECK(std::abs(erm.value.scalar() - (0.5 * 4 + 0.6 * 16) / 20) < 1e-15);

  auto tie = constant_groups(tape, {{"b", {0.4, 1}}, {"a", {0.4, 1}}});
  CHECK(robust_objective(tie, fresh, {DroMode::Dro, 0.0, 1.0}, none).selected == "a");

  CHECK_THROWS_AS(robust_objective(GroupLosses{}, fresh, {}, none), ValidationError);
  CHECK_THROWS_AS(DroConfig({DroMode::Dro, -1.0, 1.0}).validate(), ValidationError);
}

TEST_CASE("robust_objective invariants") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    ad::Tape tape;
    std::map<std::string, std::pair<double, std::size_t>> m;
    const int k = 1 + static_cast<int>(gen() % 5);
    for (int g = 0; g < k; ++g) m["g" + std::to_string(g)] = {u(gen), 1 + gen() % 20};
    auto groups = constant_groups(tape, m);
    Var theta = tape.parameter(Tensor::Constant(2, 2, u(gen)));
    std::vector<Var> params = {theta};
    GroupStats stats = stats_with_means({{"g0", 0.3}});

    auto erm = robust_objective(groups, stats, {DroMode::Erm, 0.0, 1.0}, params);
    auto dro = robust_objective(groups, stats, {DroMode::Dro, 0.0, 1.0}, params);
    auto adj0 = robust_objective(groups, stats, {DroMode::GroupAdjusted, 0.0, 0.0}, params);
    CHECK(dro.value.scalar() >= erm.value.scalar() - 1e-15);
    CHECK(adj0.value.scalar() == dro.value.scalar());
    CHECK(adj0.selected == dro.selected);
    if (k == 1) CHECK(std::abs(dro.value.scalar() - erm.value.scalar()) < 1e-12);

    auto reg = robust_objective(groups, stats, {DroMode::GroupAdjusted, 5.0, 1.0}, params);
    auto plain = robust_objective(groups, stats, {DroMode::GroupAdjusted, 0.0, 1.0}, params);
    CHECK(reg.selected == plain.selected);
    CHECK(std::abs(reg.value.scalar() - plain.value.scalar() - 5.0 * theta.value().squaredNorm()) < 1e-12);

    // Only the selected group's loss receives gradient.
    std::vector<Var> leaves;
    for (const auto& [g, l] : groups) leaves.push_back(l.mean_loss);
    auto grads = ad::grad(dro.value, leaves);
    std::size_t i = 0;
    for (const auto& [g, l] : groups) {
      CHECK(grads[i].scalar() == (g == *dro.selected ? 1.0 : 0.0));
      ++i;
    }
  }
}

TEST_CASE("update_stats") {
  GroupStats fresh;
  CHECK(fresh.updated({}) == fresh);

  auto one = fresh.updated({{"A", {0.6, 2}}});
  CHECK(one.count("A") == 2);
  CHECK(std::abs(one.entries().at("A").mean() - 0.6) < 1e-15);
  CHECK(fresh.empty());

  GroupSummaries b1 = {{"A", {1.0, 2}}, {"B", {0.5, 4}}};
  GroupSummaries b2 = {{"A", {3.0, 1}}, {"C", {0.25, 8}}};
  auto sequential = fresh.updated(b1).updated(b2);
  auto reversed = fresh.updated(b2).updated(b1);
  CHECK(sequential == reversed);
  CHECK(sequential.count("A") == 3);
  CHECK(sequential.entries().at("A").loss_sum == 5.0);
  CHECK(sequential.count("missing") == 0);
}

TEST_CASE("rank_groups") {
  auto three = rank_groups(stats_with_means({{"A", 0.2}, {"B", 0.5}, {"C", 0.9}}));
  CHECK(three == GroupRanking{"C", "A", "B"});

  auto single = rank_groups(stats_with_means({{"only", 0.4}}));
  CHECK(single == GroupRanking{"only", "only", "only"});

  auto four = rank_groups(stats_with_means({{"w", 0.1}, {"x", 0.2}, {"y", 0.3}, {"z", 0.4}}));
  CHECK(four.middle == "x");

  auto tied = rank_groups(stats_with_means({{"b", 0.5}, {"a", 0.5}}));
  CHECK(tied.worst == "a");
  CHECK(tied.best == "a");

  CHECK_THROWS_AS(rank_groups(GroupStats{}), RankingError);
}

TEST_CASE("group stats csv") {
  std::ostringstream out;
  write_group_stats_csv(out, GroupStats{}.updated({{"A", {0.5, 2}}, {"B", {0.25, 4}}}));
  CHECK(out.str() == "group,n,mean_loss\nA,2,0.5\nB,4,0.25\n");
}

TEST_CASE("mode parsing") {
  CHECK(parse_dro_mode("adjusted") == DroMode::GroupAdjusted);
  CHECK(parse_dro_mode("erm") == DroMode::Erm);
  CHECK_THROWS_AS(parse_dro_mode("max"), ValidationError);
  CHECK(parse_count_source("batch") == CountSource::Batch);
}
