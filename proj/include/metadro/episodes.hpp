#pragma once

#include <span>
#include <string>
#include <vector>

#include "metadro/autodiff.hpp"
#include "metadro/dataset.hpp"
#include "metadro/rng.hpp"

namespace metadro {

/// N-way K-shot Q-query task shape.
struct TaskSpec {
  int n_way = 2;
  int k_shot = 1;
  int q_query = 1;

  void validate() const;
  int per_class() const { return k_shot + q_query; }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// One few-shot task. Rows are grouped by episode label: the support matrix
/// holds K rows for label 0, then K for label 1, and so on; the query matrix
/// likewise holds Q rows per label. Only query rows carry group codes.
struct Episode {
  TaskSpec spec;
  ad::Tensor support;
  std::vector<int> support_labels;
  std::vector<std::string> support_ids;
  ad::Tensor query;
  std::vector<int> query_labels;
  std::vector<std::string> query_groups;
  std::vector<std::string> query_ids;
  /// Episode label -> original class label.
  std::vector<std::string> class_map;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Draws N classes from `pool` without replacement, then K+Q records per
/// class without replacement (first K to support, next Q to query).
///
/// Throws EpisodeError when the pool holds fewer than N classes or when any
/// pooled class has fewer than K+Q records; the message names the class.
Episode sample_episode(const EmbeddingStore& store, const TaskSpec& spec,
                       std::span<const std::string> pool, Rng& rng);

/// `batch_size` independent episodes; episode i is drawn from the i-th
/// `rng.split()` child, so the batch is reproducible under any scheduling.
std::vector<Episode> sample_meta_batch(const EmbeddingStore& store, const TaskSpec& spec,
                                       std::span<const std::string> pool, int batch_size,
                                       Rng& rng);

}  // namespace metadro
