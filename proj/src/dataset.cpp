#include "metadro/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <unordered_set>

#include "metadro/error.hpp"
#include "metadro/rng.hpp"

namespace metadro {

EmbeddingStore::EmbeddingStore(std::vector<EmbeddingRecord> records, Eigen::Index dim)
    : records_(std::move(records)), dim_(dim) {
  if (!records_.empty()) dim_ = records_.front().vector.size();
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto& r = records_[i];
    if (r.patient_id && r.patient_id->empty()) r.patient_id.reset();
    if (r.vector.size() != dim_)
      throw IngestError("record '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
                        ", expected " + std::to_string(dim_));
    if (r.label.empty()) throw IngestError("record '" + r.id + "' has an empty class label");
    if (!seen.insert(r.id).second) throw IngestError("duplicate record id '" + r.id + "'");
    if (!r.vector.allFinite()) throw IngestError("record '" + r.id + "' has non-finite values");
    if (r.group.empty()) r.group = r.label;
    by_class_[r.label].push_back(i);
    by_group_[r.group].push_back(i);
  }
}

const std::vector<std::size_t>& EmbeddingStore::class_records(const std::string& label) const {
  auto it = by_class_.find(label);
  if (it == by_class_.end()) throw ValidationError("unknown class '" + label + "'");
  return it->second;
}

std::vector<std::string> EmbeddingStore::classes() const {
  std::vector<std::string> out;
  out.reserve(by_class_.size());
  for (const auto& [label, _] : by_class_) out.push_back(label);
  return out;
}

std::size_t EmbeddingStore::class_count(const std::string& label) const {
  auto it = by_class_.find(label);
  return it == by_class_.end() ? 0 : it->second.size();
}

EmbeddingStore EmbeddingStore::subset(std::span<const std::size_t> indices) const {
  std::vector<EmbeddingRecord> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(records_.at(i));
  return EmbeddingStore(std::move(picked), dim_);
}

StratumKind parse_stratum(std::string_view name) {
  if (name == "popular") return StratumKind::Popular;
  if (name == "semi_rare") return StratumKind::SemiRare;
  if (name == "random") return StratumKind::Random;
  throw ValidationError("unknown stratum '" + std::string(name) + "'");
}

std::string_view to_string(StratumKind kind) {
  switch (kind) {
    case StratumKind::Popular: return "popular";
    case StratumKind::SemiRare: return "semi_rare";
    case StratumKind::Random: return "random";
  }
  return "?";
}

std::vector<std::string> select_classes(const EmbeddingStore& store, const StratumSpec& spec) {
  if (spec.top_count < 1) throw ValidationError("stratum top count must be >= 1");
  if (spec.min_notes < 0) throw ValidationError("stratum min notes must be >= 0");
  if (store.empty()) throw ValidationError("select_classes: empty store");

  struct Entry {
    std::string label;
    std::size_t count;
  };
  std::vector<Entry> entries;
  for (const auto& [label, idx] : store.class_index()) {
    if (spec.kind != StratumKind::Popular && idx.size() <= static_cast<std::size_t>(spec.min_notes))
      continue;
    entries.push_back({label, idx.size()});
  }

  const std::size_t top = static_cast<std::size_t>(spec.top_count);
  switch (spec.kind) {
    case StratumKind::Popular:
      std::stable_sort(entries.begin(), entries.end(),
                       [](const Entry& a, const Entry& b) { return a.count > b.count; });
      if (entries.size() > top) entries.resize(top);
      break;
    case StratumKind::SemiRare:
      std::stable_sort(entries.begin(), entries.end(),
                       [](const Entry& a, const Entry& b) { return a.count < b.count; });
      if (entries.size() > top) entries.resize(top);
      break;
    case StratumKind::Random:
      break;
  }
  if (entries.empty())
    throw ValidationError("stratum '" + std::string(to_string(spec.kind)) +
                          "' selects no classes (min notes " + std::to_string(spec.min_notes) +
                          ")");
  std::vector<std::string> out;
  for (auto& e : entries) out.push_back(std::move(e.label));
  return out;
}

EmbeddingStore cap_per_class(const EmbeddingStore& store, int cap,
                             std::optional<int> per_patient_cap, std::uint64_t seed) {
  if (cap < 1) throw ValidationError("cap must be >= 1");
  if (per_patient_cap && *per_patient_cap < 1) throw ValidationError("per-patient cap must be >= 1");

  const Rng base(seed);
  std::vector<std::size_t> keep;
  std::uint64_t class_tag = 0;
  for (const auto& [label, indices] : store.class_index()) {
    std::vector<std::size_t> pool;
    if (per_patient_cap) {
      std::map<std::string, int> per_patient;
      for (auto i : indices) {
        const auto& pid = store.record(i).patient_id;
        if (pid && ++per_patient[*pid] > *per_patient_cap) continue;
        pool.push_back(i);
      }
    } else {
      pool = indices;
    }

    if (pool.size() > static_cast<std::size_t>(cap)) {
      Rng rng = base.substream(class_tag);
      // Partial Fisher-Yates: the first `cap` slots become a uniform sample.
      for (std::size_t j = 0; j < static_cast<std::size_t>(cap); ++j)
        std::swap(pool[j], pool[j + rng.below(pool.size() - j)]);
      pool.resize(cap);
    }
    keep.insert(keep.end(), pool.begin(), pool.end());
    ++class_tag;
  }
  std::sort(keep.begin(), keep.end());
  return store.subset(keep);
}

std::string clean_text(std::string_view text, const std::set<std::string>& stopwords,
                       std::size_t max_tokens) {
  std::string out;
  std::size_t kept = 0;
  std::string token;
  auto flush = [&] {
    if (!token.empty() && kept < max_tokens && !stopwords.contains(token)) {
      if (!out.empty()) out.push_back(' ');
      out += token;
      ++kept;
    }
    token.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace metadro
