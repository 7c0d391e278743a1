#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metadro/dataset.hpp"
#include "metadro/dro.hpp"
#include "metadro/episodes.hpp"
#include "metadro/metrics.hpp"
#include "metadro/models.hpp"

namespace metadro {

enum class ModelKind { ProtoNet, Maml };
ModelKind parse_model_kind(std::string_view name);  // protonet | maml
std::string_view to_string(ModelKind kind);

/// classes: train/val/test hold disjoint classes.
/// records: every class appears in all splits; records are split per
///          (class, group) so each group is represented where possible.
enum class SplitMode { Classes, Records };
SplitMode parse_split_mode(std::string_view name);  // classes | records
std::string_view to_string(SplitMode mode);

struct TrainConfig {
  TaskSpec task;
  int meta_batch = 16;
  double outer_lr = 0.01;
  double momentum = 0.0;
  int iterations = 1000;
  /// Evaluate every this many iterations; 0 evaluates only at the end.
  int eval_interval = 100;
  int eval_tasks = 100;
  std::uint64_t seed = 0;
  DroConfig dro;
  ModelKind model = ModelKind::ProtoNet;
  MamlConfig maml;
  /// Encoder widths after the input: hidden layers then the embedding layer.
  /// An empty list gives the identity encoder.
  std::vector<int> hidden = {64};
  SplitMode split = SplitMode::Classes;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  /// Restricts the store to a frequency stratum before splitting.
  std::optional<StratumSpec> stratum;

  void validate() const;
};

struct DataSplit {
  EmbeddingStore train;
  EmbeddingStore val;
  EmbeddingStore test;
  /// Classes with at least K+Q records in each part.
  std::vector<std::string> train_pool;
  std::vector<std::string> val_pool;
  std::vector<std::string> test_pool;
};

/// Records of the configured stratum's classes, or the whole store.
EmbeddingStore apply_stratum(const EmbeddingStore& store, const TrainConfig& config);

/// Deterministic in (store, config.split, fractions, seed). Applies the
/// stratum first.
DataSplit split_store(const EmbeddingStore& store, const TrainConfig& config);

MlpEncoder encoder_for(const TrainConfig& config, int input_dim);
/// Parameter layout of the configured model (MAML adds an N-wide head).
MlpEncoder network_for(const TrainConfig& config, int input_dim);
ParameterSet init_parameters(const TrainConfig& config, int input_dim);

struct BatchStep {
  double objective = 0.0;
  std::optional<std::string> selected;
  std::map<std::string, double> scores;
  GroupSummaries groups;
  std::vector<ad::Tensor> gradient;  // one per parameter, same order
};

/// Forward pass, group partition, robust objective and its gradient for one
/// meta batch. Throws NumericError on non-finite values.
BatchStep batch_step(const ParameterSet& params, const TrainConfig& config, const GroupStats& stats,
                     std::span<const Episode> batch);

struct IterationLog {
  int iteration = 0;
  double objective = 0.0;
  std::optional<std::string> selected;
  double param_norm = 0.0;  // sum of squared entries after the update
};

struct TrainResult {
  ParameterSet params;
  GroupStats stats;
  std::vector<MetricsRecord> history;
  std::vector<IterationLog> log;
};

using EvalCallback = std::function<void(const MetricsRecord&, const IterationLog&)>;

/// Runs `iterations` of: sample meta batch, per-query losses, group partition,
/// robust objective, SGD step, stats update. Periodic evaluations use the
/// validation split when it can host an episode, otherwise the test split; the
/// final record always uses the test split. Throws TrainingAbort with the
/// iteration and group losses when a value turns non-finite.
TrainResult meta_train(const TrainConfig& config, const EmbeddingStore& store,
                       const EvalCallback& on_eval = {});

struct TaskOutcome {
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<std::string> groups;
  std::vector<double> losses;
  double accuracy = 0.0;
};

struct Evaluation {
  MetricsRecord record;
  std::vector<TaskOutcome> tasks;
};

/// T >= 2 episodes from `pool`, drawn with a generator fixed by the seed, so
/// repeated calls see the same tasks. Parameters are never updated; MAML
/// adapts a copy per task.
Evaluation meta_test_detailed(const ParameterSet& params, const TrainConfig& config,
                              const EmbeddingStore& store, std::span<const std::string> pool, int tasks,
                              long iteration = 0);
MetricsRecord meta_test(const ParameterSet& params, const TrainConfig& config, const EmbeddingStore& store,
                        std::span<const std::string> pool, int tasks, long iteration = 0);

/// Splits `store` as training did and evaluates on its test part.
MetricsRecord evaluate_checkpoint(const ParameterSet& params, const TrainConfig& config,
                                  const EmbeddingStore& store, int tasks, long iteration = 0);

struct Checkpoint {
  ParameterSet params;
  GroupStats stats;
};

/// Parameters plus one "groupstats/<group>" tensor [loss_sum, count] per group.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metadro
