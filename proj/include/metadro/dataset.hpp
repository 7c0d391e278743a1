#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace metadro {

/// One precomputed note embedding. An empty patient id is stored as nullopt.
struct EmbeddingRecord {
  std::string id;
  std::optional<std::string> patient_id;
  Eigen::RowVectorXd vector;
  std::string label;
  std::string group;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// Validated, immutable collection of records with class and group indices.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  /// Validates records (shared dimension, unique ids, non-empty labels) and
  /// builds the indices. `dim` is only consulted when `records` is empty.
  explicit EmbeddingStore(std::vector<EmbeddingRecord> records, Eigen::Index dim = 0);

  const std::vector<EmbeddingRecord>& records() const { return records_; }
  const EmbeddingRecord& record(std::size_t i) const { return records_.at(i); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  Eigen::Index dim() const { return dim_; }

  /// Class label -> record indices in store order.
  const std::map<std::string, std::vector<std::size_t>>& class_index() const { return by_class_; }
  const std::map<std::string, std::vector<std::size_t>>& group_index() const { return by_group_; }
  const std::vector<std::size_t>& class_records(const std::string& label) const;

  std::vector<std::string> classes() const;
  std::size_t class_count(const std::string& label) const;

  /// New store holding `indices` in the given order.
  EmbeddingStore subset(std::span<const std::size_t> indices) const;

 private:
  std::vector<EmbeddingRecord> records_;
  Eigen::Index dim_ = 0;
  std::map<std::string, std::vector<std::size_t>> by_class_;
  std::map<std::string, std::vector<std::size_t>> by_group_;
};

enum class StratumKind { Popular, SemiRare, Random };

struct StratumSpec {
  StratumKind kind = StratumKind::Random;
  int top_count = 50;
  int min_notes = 10;
};

StratumKind parse_stratum(std::string_view name);
std::string_view to_string(StratumKind kind);

/// Frequency-stratified class pool.
///
///  - Popular: the `top_count` most frequent classes.
///  - SemiRare: among classes with more than `min_notes` records, the
///    `top_count` least frequent.
///  - Random: every class with more than `min_notes` records.
///
/// Equal counts are ordered by label. Throws ValidationError when nothing
/// qualifies.
std::vector<std::string> select_classes(const EmbeddingStore& store, const StratumSpec& spec);

/// Caps every class at `cap` records, chosen uniformly under `seed`. With a
/// per-patient cap, records beyond that many per (class, patient) are dropped
/// first, keeping the earliest in store order. Surviving records keep their
/// original relative order.
EmbeddingStore cap_per_class(const EmbeddingStore& store, int cap,
                             std::optional<int> per_patient_cap, std::uint64_t seed);

/// Lowercase, replace non-alphanumerics with spaces, drop stopwords, keep the
/// first `max_tokens` tokens and join them with single spaces.
std::string clean_text(std::string_view text, const std::set<std::string>& stopwords,
                       std::size_t max_tokens = 512);

}  // namespace metadro
