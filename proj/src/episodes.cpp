#include "metadro/episodes.hpp"

#include <numeric>

#include "metadro/error.hpp"

namespace metadro {

void TaskSpec::validate() const {
  if (n_way < 2) throw ValidationError("n_way must be >= 2, got " + std::to_string(n_way));
  if (k_shot < 1) throw ValidationError("k_shot must be >= 1, got " + std::to_string(k_shot));
  if (q_query < 1) throw ValidationError("q_query must be >= 1, got " + std::to_string(q_query));
}

namespace {

void check_pool(const EmbeddingStore& store, const TaskSpec& spec,
                std::span<const std::string> pool) {
  if (pool.size() < static_cast<std::size_t>(spec.n_way))
    throw EpisodeError("class pool has " + std::to_string(pool.size()) + " classes, " +
                       std::to_string(spec.n_way) + "-way episodes need at least that many");
  for (const auto& label : pool) {
    const auto have = store.class_count(label);
    if (have < static_cast<std::size_t>(spec.per_class()))
      throw EpisodeError("class '" + label + "' has " + std::to_string(have) + " records, need " +
                         std::to_string(spec.per_class()) + " (k_shot + q_query)");
  }
}

Episode draw(const EmbeddingStore& store, const TaskSpec& spec,
             std::span<const std::string> pool, Rng& rng) {
  const auto n = static_cast<std::size_t>(spec.n_way);
  const auto k = static_cast<std::size_t>(spec.k_shot);
  const auto q = static_cast<std::size_t>(spec.q_query);

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

  Episode ep;
  ep.spec = spec;
  ep.support.resize(static_cast<Eigen::Index>(n * k), store.dim());
  ep.query.resize(static_cast<Eigen::Index>(n * q), store.dim());
  for (std::size_t label = 0; label < n; ++label) {
    const std::string& cls = pool[order[label]];
    ep.class_map.push_back(cls);
    std::vector<std::size_t> members = store.class_records(cls);
    for (std::size_t i = 0; i < k + q; ++i)
      std::swap(members[i], members[i + rng.below(members.size() - i)]);

    for (std::size_t i = 0; i < k; ++i) {
      const auto& r = store.record(members[i]);
      ep.support.row(static_cast<Eigen::Index>(label * k + i)) = r.vector;
      ep.support_labels.push_back(static_cast<int>(label));
      ep.support_ids.push_back(r.id);
    }
    for (std::size_t i = 0; i < q; ++i) {
      const auto& r = store.record(members[k + i]);
      ep.query.row(static_cast<Eigen::Index>(label * q + i)) = r.vector;
      ep.query_labels.push_back(static_cast<int>(label));
      ep.query_groups.push_back(r.group);
      ep.query_ids.push_back(r.id);
    }
  }
  return ep;
}

}  // namespace

Episode sample_episode(const EmbeddingStore& store, const TaskSpec& spec,
                       std::span<const std::string> pool, Rng& rng) {
  spec.validate();
  check_pool(store, spec, pool);
  return draw(store, spec, pool, rng);
}

std::vector<Episode> sample_meta_batch(const EmbeddingStore& store, const TaskSpec& spec,
                                       std::span<const std::string> pool, int batch_size,
                                       Rng& rng) {
  if (batch_size < 1) throw ValidationError("meta batch size must be >= 1");
  spec.validate();
  check_pool(store, spec, pool);
  std::vector<Episode> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    Rng child = rng.split();
    batch.push_back(draw(store, spec, pool, child));
  }
  return batch;
}

}  // namespace metadro
