#include "metadro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "metadro/error.hpp"
#include "metadro/rng.hpp"
#include "metadro/store_io.hpp"

namespace metadro {

using ad::Tensor;
using ad::Var;

namespace {

constexpr std::uint64_t kSplitTag = 0x5311;
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kBatchTag = 0xba7c;
constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr std::string_view kStatsPrefix = "groupstats/";

struct TaskForward {
  Var logits;
  Var losses;
};

TaskForward forward_task(ad::Tape& tape, std::span<const Var> params, const TrainConfig& config,
                         const Episode& ep, bool training) {
  Var logits;
  if (config.model == ModelKind::ProtoNet) {
    Var protos = prototypes(tape, params, ep);
    logits = protonet_logits(params, protos, tape.constant(ep.query));
  } else {
    MamlConfig cfg = config.maml;
    // Adapted values are the same either way; evaluation needs no meta-gradient.
    if (!training) cfg.order = MamlOrder::First;
    auto adapted = inner_adapt(
        params, [&](std::span<const Var> p) { return maml_support_loss(p, ep); }, cfg);
    logits = maml_query_logits(adapted, ep);
  }
  return {logits, ad::cross_entropy_rows(logits, ep.query_labels)};
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::string> pool_of(const EmbeddingStore& store, int per_class) {
  std::vector<std::string> pool;
  for (const auto& [label, idx] : store.class_index())
    if (idx.size() >= static_cast<std::size_t>(per_class)) pool.push_back(label);
  return pool;
}

std::size_t portion(double fraction, std::size_t n) {
  return std::min(n, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
}

std::string describe_stats(const GroupStats& stats) {
  std::ostringstream out;
  out << '{';
  bool first = true;
  for (const auto& [g, e] : stats.entries()) {
    out << (first ? "" : ", ") << g << ": " << format_double(e.mean()) << " (n=" << e.count << ')';
    first = false;
  }
  out << '}';
  return out.str();
}

[[noreturn]] void abort_training(int iteration, const GroupStats& stats, const std::string& what) {
  throw TrainingAbort("training aborted at iteration " + std::to_string(iteration) + ": " + what +
                      "; running group losses " + describe_stats(stats));
}

double bernoulli_half_width(double p, std::size_t n) {
  if (n < 2) return 0.0;
  const double nd = static_cast<double>(n);
  const double s = std::sqrt(std::max(0.0, p * (1.0 - p)) * nd / (nd - 1.0));
  return 1.96 * s / std::sqrt(nd);
}

}  // namespace

ModelKind parse_model_kind(std::string_view name) {
  if (name == "protonet") return ModelKind::ProtoNet;
  if (name == "maml") return ModelKind::Maml;
  throw ValidationError("model must be protonet or maml, got '" + std::string(name) + "'");
}

std::string_view to_string(ModelKind kind) { return kind == ModelKind::ProtoNet ? "protonet" : "maml"; }

SplitMode parse_split_mode(std::string_view name) {
  if (name == "classes") return SplitMode::Classes;
  if (name == "records") return SplitMode::Records;
  throw ValidationError("split must be classes or records, got '" + std::string(name) + "'");
}

std::string_view to_string(SplitMode mode) { return mode == SplitMode::Classes ? "classes" : "records"; }

void TrainConfig::validate() const {
  task.validate();
  if (meta_batch < 1) throw ValidationError("meta_batch must be >= 1");
  if (!std::isfinite(outer_lr) || outer_lr <= 0) throw ValidationError("outer_lr must be finite and > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (eval_interval < 0) throw ValidationError("eval_interval must be >= 0");
  if (eval_tasks < 2) throw ValidationError("eval_tasks must be >= 2");
  for (int h : hidden)
    if (h < 1) throw ValidationError("hidden widths must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must be in [0, 1)");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must be in (0, 1)");
  if (val_fraction + test_fraction >= 1.0) throw ValidationError("val_fraction + test_fraction must be < 1");
  if (stratum && (stratum->top_count < 1 || stratum->min_notes < 0))
    throw ValidationError("top_count must be >= 1 and min_notes >= 0");
  dro.validate();
  maml.validate();
}

EmbeddingStore apply_stratum(const EmbeddingStore& store, const TrainConfig& config) {
  if (!config.stratum) return store;
  std::vector<std::size_t> keep;
  for (const auto& label : select_classes(store, *config.stratum)) {
    const auto& idx = store.class_records(label);
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  return store.subset(keep);
}

DataSplit split_store(const EmbeddingStore& full, const TrainConfig& config) {
  const EmbeddingStore store = apply_stratum(full, config);
  Rng rng = Rng(config.seed).substream(kSplitTag);
  std::vector<std::size_t> train, val, test;
  auto deal = [&](std::vector<std::size_t> units, auto&& emit) {
    shuffle(units, rng);
    const std::size_t n_test = portion(config.test_fraction, units.size());
    const std::size_t n_val = std::min(units.size() - n_test, portion(config.val_fraction, units.size()));
    for (std::size_t i = 0; i < units.size(); ++i)
      emit(units[i], i < n_test ? test : i < n_test + n_val ? val : train);
  };

  if (config.split == SplitMode::Classes) {
    const auto classes = store.classes();
    std::vector<std::size_t> ids(classes.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    deal(ids, [&](std::size_t c, std::vector<std::size_t>& part) {
      const auto& idx = store.class_records(classes[c]);
      part.insert(part.end(), idx.begin(), idx.end());
    });
  } else {
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < store.size(); ++i)
      cells[{store.record(i).label, store.record(i).group}].push_back(i);
    for (auto& [key, idx] : cells)
      deal(idx, [](std::size_t i, std::vector<std::size_t>& part) { part.push_back(i); });
  }
  for (auto* part : {&train, &val, &test}) std::sort(part->begin(), part->end());

  DataSplit s{store.subset(train), store.subset(val), store.subset(test), {}, {}, {}};
  const int per_class = config.task.per_class();
  s.train_pool = pool_of(s.train, per_class);
  s.val_pool = pool_of(s.val, per_class);
  s.test_pool = pool_of(s.test, per_class);
  return s;
}

MlpEncoder encoder_for(const TrainConfig& config, int input_dim) {
  MlpEncoder enc{{input_dim}};
  enc.widths.insert(enc.widths.end(), config.hidden.begin(), config.hidden.end());
  return enc;
}

MlpEncoder network_for(const TrainConfig& config, int input_dim) {
  const MlpEncoder enc = encoder_for(config, input_dim);
  return config.model == ModelKind::Maml ? maml_network(enc, config.task.n_way) : enc;
}

ParameterSet init_parameters(const TrainConfig& config, int input_dim) {
  Rng rng = Rng(config.seed).substream(kInitTag);
  return network_for(config, input_dim).init(rng);
}

BatchStep batch_step(const ParameterSet& params, const TrainConfig& config, const GroupStats& stats,
                     std::span<const Episode> batch) {
  ad::Tape tape;
  const auto vars = bind_parameters(tape, params);
  std::vector<QueryLosses> per_task;
  per_task.reserve(batch.size());
  for (const auto& ep : batch) per_task.push_back({forward_task(tape, vars, config, ep, true).losses, ep.query_groups});
  const GroupLosses groups = partition_by_group(tape, per_task);
  const RobustObjective obj = robust_objective(groups, stats, config.dro, vars);

  BatchStep step;
  step.objective = obj.value.scalar();
  if (!std::isfinite(step.objective)) throw NumericError("non-finite objective");
  step.selected = obj.selected;
  step.scores = obj.scores;
  step.groups = summarize(groups);
  if (!vars.empty()) step.gradient = values(ad::grad(obj.value, vars, ad::GradMode::Detached));
  return step;
}

TrainResult meta_train(const TrainConfig& config, const EmbeddingStore& store, const EvalCallback& on_eval) {
  config.validate();
  const DataSplit split = split_store(store, config);
  const auto need = static_cast<std::size_t>(config.task.n_way);
  for (const auto& [name, pool] : {std::pair{"training", &split.train_pool}, std::pair{"test", &split.test_pool}})
    if (pool->size() < need)
      throw EpisodeError(std::string(name) + " split has " + std::to_string(pool->size()) + " classes with at least " +
                         std::to_string(config.task.per_class()) + " records, need " + std::to_string(need));
  const bool use_val = split.val_pool.size() >= need;
  const EmbeddingStore& periodic_store = use_val ? split.val : split.test;
  const auto& periodic_pool = use_val ? split.val_pool : split.test_pool;

  TrainResult result;
  result.params = init_parameters(config, static_cast<int>(store.dim()));
  std::vector<Tensor> velocity;
  for (const auto& p : result.params) velocity.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));

  Rng batch_rng = Rng(config.seed).substream(kBatchTag);
  for (int it = 1; it <= config.iterations; ++it) {
    const auto batch = sample_meta_batch(split.train, config.task, split.train_pool, config.meta_batch, batch_rng);
    BatchStep step;
    try {
      step = batch_step(result.params, config, result.stats, batch);
    } catch (const NumericError& e) {
      abort_training(it, result.stats, e.what());
    }
    for (std::size_t i = 0; i < result.params.size(); ++i) {
      velocity[i] = config.momentum * velocity[i] + step.gradient[i];
      result.params[i].value -= config.outer_lr * velocity[i];
      if (!result.params[i].value.allFinite())
        abort_training(it, result.stats, "parameter " + result.params[i].name + " became non-finite");
    }
    result.stats = result.stats.updated(step.groups);

    IterationLog entry{it, step.objective, step.selected, squared_norm(result.params)};
    result.log.push_back(entry);

    const bool last = it == config.iterations;
    if (last || (config.eval_interval > 0 && it % config.eval_interval == 0)) {
      MetricsRecord rec = last ? meta_test(result.params, config, split.test, split.test_pool, config.eval_tasks, it)
                               : meta_test(result.params, config, periodic_store, periodic_pool,
                                           config.eval_tasks, it);
      result.history.push_back(rec);
      if (on_eval) on_eval(rec, entry);
    }
  }
  return result;
}

Evaluation meta_test_detailed(const ParameterSet& params, const TrainConfig& config, const EmbeddingStore& store,
                              std::span<const std::string> pool, int tasks, long iteration) {
  if (tasks < 2) throw ValidationError("meta_test: tasks must be >= 2, got " + std::to_string(tasks));
  Rng rng = Rng(config.seed).substream(kEvalTag);
  const auto episodes = sample_meta_batch(store, config.task, pool, tasks, rng);

  struct Acc {
    double loss_sum = 0.0;
    std::size_t count = 0;
    std::size_t correct = 0;
  };
  std::map<std::string, Acc> by_group;
  Evaluation ev;
  std::vector<double> accuracies;
  for (const auto& ep : episodes) {
    ad::Tape tape;
    const auto vars = bind_parameters(tape, params);
    const TaskForward fwd = forward_task(tape, vars, config, ep, false);
    TaskOutcome out;
    out.predictions = predict(fwd.logits.value());
    out.labels = ep.query_labels;
    out.groups = ep.query_groups;
    const Tensor& losses = fwd.losses.value();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
      const bool ok = out.predictions[i] == out.labels[i];
      hits += ok;
      out.losses.push_back(losses(static_cast<Eigen::Index>(i), 0));
      auto& a = by_group[out.groups[i]];
      a.loss_sum += out.losses.back();
      ++a.count;
      a.correct += ok;
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(out.labels.size());
    accuracies.push_back(out.accuracy);
    ev.tasks.push_back(std::move(out));
  }

  MetricsRecord& r = ev.record;
  r.iteration = iteration;
  const Interval ci = confidence_interval(accuracies);
  r.avg = ci.mean;
  r.avg_hw = ci.half_width;
  r.avg_std = ci.std;

  std::map<std::string, GroupStats::Entry> entries;
  for (const auto& [g, a] : by_group) {
    entries[g] = {a.loss_sum, a.count};
    r.group_losses[g] = a.loss_sum / static_cast<double>(a.count);
  }
  const GroupRanking rank = rank_groups(GroupStats::from_entries(entries));
  auto accuracy = [&](const std::string& g, double& value, double& hw) {
    const Acc& a = by_group.at(g);
    value = static_cast<double>(a.correct) / static_cast<double>(a.count);
    hw = bernoulli_half_width(value, a.count);
  };
  accuracy(rank.worst, r.worst, r.worst_hw);
  accuracy(rank.best, r.best, r.best_hw);
  accuracy(rank.middle, r.middle, r.middle_hw);
  r.worst_group = rank.worst;
  r.best_group = rank.best;
  r.middle_group = rank.middle;
  return ev;
}

MetricsRecord meta_test(const ParameterSet& params, const TrainConfig& config, const EmbeddingStore& store,
                        std::span<const std::string> pool, int tasks, long iteration) {
  return meta_test_detailed(params, config, store, pool, tasks, iteration).record;
}

MetricsRecord evaluate_checkpoint(const ParameterSet& params, const TrainConfig& config,
                                  const EmbeddingStore& store, int tasks, long iteration) {
  config.validate();
  network_for(config, static_cast<int>(store.dim())).check(params);
  const DataSplit split = split_store(store, config);
  return meta_test(params, config, split.test, split.test_pool, tasks, iteration);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::vector<NamedTensor> tensors = checkpoint.params;
  for (const auto& [g, e] : checkpoint.stats.entries()) {
    Tensor t(1, 2);
    t << e.loss_sum, static_cast<double>(e.count);
    tensors.push_back({std::string(kStatsPrefix) + g, t});
  }
  write_tensors(path, tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint c;
  std::map<std::string, GroupStats::Entry> entries;
  for (auto& t : read_tensors(path)) {
    if (!t.name.starts_with(kStatsPrefix)) {
      c.params.push_back(std::move(t));
      continue;
    }
    if (t.value.rows() != 1 || t.value.cols() != 2)
      throw IngestError("checkpoint: group stats tensor '" + t.name + "' must be 1 x 2");
    const double count = t.value(0, 1);
    if (!(count >= 0) || count != std::floor(count))
      throw IngestError("checkpoint: bad count in '" + t.name + "'");
    entries[t.name.substr(kStatsPrefix.size())] = {t.value(0, 0), static_cast<std::size_t>(count)};
  }
  c.stats = GroupStats::from_entries(std::move(entries));
  return c;
}

}  // namespace metadro
