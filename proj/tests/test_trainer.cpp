#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "metadro/error.hpp"
#include "metadro/metrics.hpp"
#include "metadro/synth.hpp"
#include "metadro/trainer.hpp"

using namespace metadro;
namespace fs = std::filesystem;

namespace {

SynthSpec small_synth(std::uint64_t seed = 0) {
  SynthSpec s;
  s.dim = 6;
  s.classes = 8;
  s.groups_per_class = 2;
  s.records_per_class = 30;
  s.mean_scale = 4.0;
  s.shift = 2.0;
  s.minority_fraction = 0.2;
  s.seed = seed;
  return s;
}

TrainConfig small_config(ModelKind model = ModelKind::ProtoNet) {
  TrainConfig c;
  c.task = {3, 2, 2};
  c.meta_batch = 4;
  c.outer_lr = 0.05;
  c.iterations = 20;
  c.eval_interval = 0;
  c.eval_tasks = 10;
  c.hidden = {5};
  c.model = model;
  c.split = SplitMode::Records;
  c.val_fraction = 0.0;
  c.test_fraction = 0.3;
  return c;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("metadro_trainer_" + std::to_string(::getpid()) + "_" + name);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MetricsRecord sample_record(long it) {
  MetricsRecord r;
  r.iteration = it;
  r.avg = 0.1 + 0.01 * it;
  r.avg_hw = 1.0 / 3.0;
  r.avg_std = 0.2;
  r.worst = 0.125;
  r.worst_hw = 0.0;
  r.best = 1.0;
  r.best_hw = 0.03;
  r.middle = 0.6;
  r.middle_hw = 0.07;
  r.worst_group = "c1_g1";
  r.best_group = "weird, \"quoted\" group";
  r.middle_group = "c0_g0";
  r.group_losses = {{"c0_g0", 0.4}, {"c1_g1", 2.5}};
  return r;
}

}  // namespace

TEST_CASE("confidence interval") {
  const std::vector<double> mixed = {1, 0, 1, 0};
  const auto ci = confidence_interval(mixed);
  CHECK(ci.mean == 0.5);
  CHECK(std::abs(ci.half_width - 1.96 * std::sqrt((1.0 / 3.0) / 4.0)) < 1e-15);
  CHECK(std::abs(ci.half_width - 0.566) < 5e-4);

  const std::vector<double> perfect = {1, 1, 1};
  CHECK(confidence_interval(perfect).mean == 1.0);
  CHECK(confidence_interval(perfect).half_width == 0.0);

  const std::vector<double> one = {0.7};
  CHECK(confidence_interval(one).half_width == 0.0);
}

TEST_CASE("table row format") {
  const std::string row = "0.714±0.029, 0.594±0.020, 0.963±0.007, 0.631±0.021";
  const auto r = parse_table_row(row);
  CHECK(r.avg == 0.714);
  CHECK(r.avg_hw == 0.029);
  CHECK(r.worst == 0.594);
  CHECK(r.best_hw == 0.007);
  CHECK(r.middle == 0.631);
  CHECK(format_table_row(r) == row);

  const auto latex = parse_table_row("0.714$\\pm$0.029 & 0.594$\\pm$0.020 & 0.963$\\pm$0.007 & 0.631$\\pm$0.021");
  CHECK(latex == r);

  CHECK_THROWS_AS(parse_table_row("0.714±0.029, 0.594±0.020"), ValidationError);
  CHECK_THROWS_AS(parse_table_row("0.714, 0.594±0.020, 0.963±0.007, 0.631±0.021"), ValidationError);
  CHECK_THROWS_AS(parse_table_row("1.714±0.029, 0.594±0.020, 0.963±0.007, 0.631±0.021"), ValidationError);
}

TEST_CASE("metrics export") {
  const std::vector<MetricsRecord> one = {sample_record(5)};
  std::ostringstream out;
  write_metrics_csv(out, one);
  const std::string text = out.str();
  CHECK(text.substr(0, text.find('\n')) == kMetricsCsvHeader);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);

  const std::vector<MetricsRecord> history = {sample_record(1), sample_record(2), sample_record(3)};
  const auto csv = temp_path("m.csv");
  const auto json = temp_path("m.json");
  export_metrics(history, csv, MetricsFormat::Csv);
  export_metrics(history, json, MetricsFormat::Json);
  const auto from_csv = import_metrics(csv, MetricsFormat::Csv);
  const auto from_json = import_metrics(json, MetricsFormat::Json);
  REQUIRE(from_csv.size() == 3);
  CHECK(from_json == history);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(same_csv_fields(from_csv[i], history[i]));
    CHECK(same_csv_fields(from_csv[i], from_json[i]));
  }
  fs::remove(csv);
  fs::remove(json);

  CHECK_THROWS_AS(export_metrics(std::vector<MetricsRecord>{}, csv, MetricsFormat::Csv), ValidationError);
  CHECK_THROWS_AS(export_metrics(history, "/nonexistent_dir/x/m.csv", MetricsFormat::Csv), IoError);

  std::istringstream bad("iteration,avg\n1,0.5\n");
  CHECK_THROWS_AS(read_metrics_csv(bad), IngestError);
}

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.outer_lr = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.meta_batch = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.eval_tasks = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.val_fraction = 0.6;
  c.test_fraction = 0.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("split_store") {
  const auto store = generate(small_synth());
  auto c = small_config();
  c.split = SplitMode::Classes;
  c.val_fraction = 0.25;
  c.test_fraction = 0.25;
  const auto s = split_store(store, c);
  CHECK(s.train.size() + s.val.size() + s.test.size() == store.size());
  CHECK(s.train_pool.size() == 4);
  CHECK(s.val_pool.size() == 2);
  CHECK(s.test_pool.size() == 2);
  for (const auto& label : s.test_pool) {
    CHECK(s.train.class_index().count(label) == 0);
    CHECK(s.val.class_index().count(label) == 0);
  }

  c.split = SplitMode::Records;
  c.val_fraction = 0.0;
  c.test_fraction = 0.3;
  const auto r = split_store(store, c);
  CHECK(r.train.size() + r.test.size() == store.size());
  CHECK(r.val.empty());
  // Every (class, group) cell is dealt separately, so every group reaches test.
  CHECK(r.test.group_index().size() == store.group_index().size());
  CHECK(r.train_pool.size() == 8);
  std::set<std::string> ids;
  for (const auto& rec : r.train.records()) ids.insert(rec.id);
  for (const auto& rec : r.test.records()) CHECK(ids.insert(rec.id).second);

  const auto again = split_store(store, c);
  CHECK(again.test.records() == r.test.records());
}

TEST_CASE("stratum restricts the class pool") {
  const auto store = generate(small_synth());
  auto c = small_config();
  c.stratum = StratumSpec{StratumKind::Popular, 4, 0};
  const auto s = split_store(store, c);
  CHECK(s.train.class_index().size() == 4);
}

TEST_CASE("erm with l2 = 0 is the plain mean query loss") {
  const auto store = generate(small_synth(3));
  for (auto model : {ModelKind::ProtoNet, ModelKind::Maml}) {
    auto c = small_config(model);
    c.dro = {DroMode::Erm, 0.0, 1.0};
    const auto params = init_parameters(c, 6);
    Rng rng(11);
    const auto batch = sample_meta_batch(store, c.task, store.classes(), 5, rng);
    const auto step = batch_step(params, c, GroupStats{}, batch);

    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& ep : batch) {
      ad::Tape tape;
      auto vars = bind_parameters(tape, params);
      ad::Var losses;
      if (model == ModelKind::ProtoNet) {
        losses = protonet_query_losses(tape, vars, ep);
      } else {
        auto adapted = inner_adapt(vars, [&](std::span<const ad::Var> p) { return maml_support_loss(p, ep); }, c.maml);
        losses = maml_query_losses(adapted, ep);
      }
      sum += losses.value().sum();
      n += static_cast<std::size_t>(losses.rows());
    }
    CHECK(std::abs(step.objective - sum / static_cast<double>(n)) < 1e-12);
    CHECK_FALSE(step.selected.has_value());
  }
}

TEST_CASE("batch_step gradient matches finite differences") {
  const auto store = generate(small_synth(5));
  for (auto mode : {DroMode::Erm, DroMode::GroupAdjusted}) {
    for (auto model : {ModelKind::ProtoNet, ModelKind::Maml}) {
      auto c = small_config(model);
      c.dro = {mode, 0.01, 1.0};
      const auto params = init_parameters(c, 6);
      Rng rng(2);
      const auto batch = sample_meta_batch(store, c.task, store.classes(), 3, rng);
      const auto step = batch_step(params, c, GroupStats{}, batch);
      std::vector<ad::Tensor> x;
      for (const auto& p : params) x.push_back(p.value);
      auto f = [&](const std::vector<ad::Tensor>& v) {
        ParameterSet p = params;
        for (std::size_t i = 0; i < p.size(); ++i) p[i].value = v[i];
        return batch_step(p, c, GroupStats{}, batch).objective;
      };
      CHECK(testing::relative_error(step.gradient, testing::central_differences(f, x)) < 1e-4);
    }
  }
}

TEST_CASE("meta_train history and determinism") {
  const auto store = generate(small_synth(1));
  auto c = small_config(ModelKind::Maml);
  c.dro.mode = DroMode::GroupAdjusted;

  const auto a = meta_train(c, store);
  REQUIRE(a.history.size() == 1);
  CHECK(a.history.back().iteration == c.iterations);
  CHECK(a.log.size() == static_cast<std::size_t>(c.iterations));
  CHECK(a.log.back().selected.has_value());

  const auto b = meta_train(c, store);
  CHECK(a.history == b.history);
  CHECK(a.params == b.params);
  CHECK(a.stats == b.stats);

  c.eval_interval = 100;  // never reached
  CHECK(meta_train(c, store).history.size() == 1);
  c.eval_interval = 5;
  std::vector<long> seen;
  const auto periodic = meta_train(c, store, [&](const MetricsRecord& r, const IterationLog&) { seen.push_back(r.iteration); });
  CHECK(seen == std::vector<long>{5, 10, 15, 20});
  CHECK(periodic.history.back() == a.history.back());

  for (const auto& r : a.history) {
    for (double v : {r.avg, r.worst, r.best, r.middle}) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : {r.avg_hw, r.worst_hw, r.best_hw, r.middle_hw}) CHECK(v >= 0.0);
  }
}

TEST_CASE("running stats count every query") {
  const auto store = generate(small_synth(2));
  auto c = small_config();
  const auto r = meta_train(c, store);
  std::size_t total = 0;
  for (const auto& [g, e] : r.stats.entries()) total += e.count;
  CHECK(total == static_cast<std::size_t>(c.iterations * c.meta_batch * c.task.n_way * c.task.q_query));
}

TEST_CASE("huge l2 shrinks parameters every iteration") {
  const auto store = generate(small_synth(4));
  auto c = small_config();
  c.dro = {DroMode::Dro, 1e6, 1.0};
  c.outer_lr = 1e-7;
  const auto r = meta_train(c, store);
  double prev = squared_norm(init_parameters(c, 6));
  for (const auto& log : r.log) {
    CHECK(log.param_norm < prev);
    prev = log.param_norm;
  }
}

TEST_CASE("non-finite training aborts with diagnostics") {
  const auto store = generate(small_synth());
  auto c = small_config();
  c.outer_lr = 1e200;
  try {
    meta_train(c, store);
    FAIL("expected TrainingAbort");
  } catch (const TrainingAbort& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration") != std::string::npos);
    CHECK(msg.find("_g") != std::string::npos);
  }
}

TEST_CASE("meta_test") {
  SynthSpec s = small_synth();
  s.noise = 1e-6;
  s.shift = 0.0;
  const auto store = generate(s);
  auto c = small_config();
  c.hidden = {};
  const ParameterSet none;
  const auto pool = store.classes();
  const auto perfect = meta_test(none, c, store, pool, 20);
  CHECK(perfect.avg == 1.0);
  CHECK(perfect.avg_hw == 0.0);
  CHECK(perfect.worst == 1.0);

  CHECK_THROWS_AS(meta_test(none, c, store, pool, 1), ValidationError);
  const std::vector<std::string> tiny = {pool[0], pool[1]};
  CHECK_THROWS_AS(meta_test(none, c, store, tiny, 5), EpisodeError);
}

TEST_CASE("meta_test leaves parameters alone and is recomputable") {
  const auto store = generate(small_synth(6));
  for (auto model : {ModelKind::ProtoNet, ModelKind::Maml}) {
    auto c = small_config(model);
    const auto trained = meta_train(c, store);
    const auto ck = temp_path("before.ck");
    const auto ck2 = temp_path("after.ck");
    save_checkpoint(ck, {trained.params, trained.stats});
    const auto ev = meta_test_detailed(trained.params, c, store, store.classes(), 30);
    save_checkpoint(ck2, {trained.params, trained.stats});
    CHECK(slurp(ck) == slurp(ck2));
    fs::remove(ck);
    fs::remove(ck2);

    std::vector<double> acc;
    std::map<std::string, std::pair<int, int>> by_group;
    for (const auto& t : ev.tasks) {
      int hits = 0;
      for (std::size_t i = 0; i < t.labels.size(); ++i) {
        hits += t.predictions[i] == t.labels[i];
        auto& [ok, n] = by_group[t.groups[i]];
        ok += t.predictions[i] == t.labels[i];
        ++n;
      }
      acc.push_back(static_cast<double>(hits) / static_cast<double>(t.labels.size()));
    }
    const auto ci = confidence_interval(acc);
    CHECK(ev.record.avg == ci.mean);
    CHECK(ev.record.avg_hw == ci.half_width);
    const auto& [ok, n] = by_group.at(ev.record.worst_group);
    CHECK(ev.record.worst == static_cast<double>(ok) / n);

    // Same seed, same episodes.
    CHECK(meta_test(trained.params, c, store, store.classes(), 30) == ev.record);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto store = generate(small_synth(8));
  auto c = small_config(ModelKind::Maml);
  const auto r = meta_train(c, store);
  const auto path = temp_path("rt.ck");
  save_checkpoint(path, {r.params, r.stats});
  const auto back = load_checkpoint(path);
  CHECK(back.params == r.params);
  CHECK(back.stats == r.stats);
  CHECK(evaluate_checkpoint(back.params, c, store, c.eval_tasks, c.iterations) == r.history.back());
  fs::remove(path);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ck")), IoError);
  auto wrong = c;
  wrong.hidden = {7};
  CHECK_THROWS_AS(evaluate_checkpoint(back.params, wrong, store, 5), ValidationError);
}
