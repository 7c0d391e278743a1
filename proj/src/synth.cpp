#include "metadro/synth.hpp"

#include <cmath>
#include <string>

#include "metadro/error.hpp"
#include "metadro/rng.hpp"

namespace metadro {

namespace {

constexpr std::uint64_t kMeanTag = 1;
constexpr std::uint64_t kDirectionTag = 2;
constexpr std::uint64_t kNoiseTag = 3;

Eigen::RowVectorXd unit_gaussian(Rng& rng, int dim) {
  Eigen::RowVectorXd v(dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (int j = 0; j < dim; ++j) v[j] = rng.normal();
    norm = v.norm();
  }
  return v / norm;
}

int minority_count(const SynthSpec& spec) {
  const long m = std::lround(spec.minority_fraction * spec.records_per_class);
  return static_cast<int>(std::max(1L, std::min<long>(m, spec.records_per_class)));
}

}  // namespace

void SynthSpec::validate() const {
  if (dim < 1) throw ValidationError("synth: dim must be >= 1");
  if (classes < 1) throw ValidationError("synth: classes must be >= 1");
  if (groups_per_class < 1) throw ValidationError("synth: groups_per_class must be >= 1");
  if (records_per_class < 1) throw ValidationError("synth: records_per_class must be >= 1");
  if (!std::isfinite(mean_scale) || mean_scale < 0) throw ValidationError("synth: mean_scale must be finite and >= 0");
  if (!std::isfinite(noise) || noise <= 0) throw ValidationError("synth: noise must be finite and > 0");
  if (!std::isfinite(shift)) throw ValidationError("synth: shift must be finite");
  if (!(minority_fraction > 0.0 && minority_fraction <= 1.0))
    throw ValidationError("synth: minority_fraction must be in (0, 1]");
}

std::string synth_label(const SynthSpec& spec, int cls) {
  const std::size_t width = std::to_string(std::max(spec.classes - 1, 9)).size();
  std::string n = std::to_string(cls);
  return "c" + std::string(width > n.size() ? width - n.size() : 0, '0') + n;
}

std::string synth_group(const SynthSpec& spec, int cls, int group) {
  return synth_label(spec, cls) + "_g" + std::to_string(group);
}

SynthTruth synth_truth(const SynthSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  SynthTruth t{Eigen::MatrixXd(spec.classes, spec.dim), Eigen::MatrixXd(spec.classes, spec.dim)};
  for (int c = 0; c < spec.classes; ++c) {
    Rng mean_rng = root.substream(kMeanTag).substream(static_cast<std::uint64_t>(c));
    Rng dir_rng = root.substream(kDirectionTag).substream(static_cast<std::uint64_t>(c));
    t.means.row(c) = spec.mean_scale * unit_gaussian(mean_rng, spec.dim);
    t.directions.row(c) = unit_gaussian(dir_rng, spec.dim);
  }
  return t;
}

EmbeddingStore generate(const SynthSpec& spec) {
  const SynthTruth truth = synth_truth(spec);
  const Rng root(spec.seed);
  const int minority = minority_count(spec);
  const int G = spec.groups_per_class;

  std::vector<EmbeddingRecord> records;
  records.reserve(static_cast<std::size_t>(spec.classes) * spec.records_per_class);
  for (int c = 0; c < spec.classes; ++c) {
    Rng noise_rng = root.substream(kNoiseTag).substream(static_cast<std::uint64_t>(c));
    const std::string label = synth_label(spec, c);
    const Eigen::RowVectorXd shifted = truth.means.row(c) + spec.shift * truth.directions.row(c);
    for (int i = 0; i < spec.records_per_class; ++i) {
      const bool is_minority = i < minority;
      int group = G - 1;
      if (!is_minority && G > 1) group = (i - minority) % (G - 1);
      EmbeddingRecord r;
      r.id = label + "_r" + std::to_string(i);
      r.label = label;
      r.group = synth_group(spec, c, group);
      r.vector = is_minority ? shifted : Eigen::RowVectorXd(truth.means.row(c));
      for (int j = 0; j < spec.dim; ++j) r.vector[j] += spec.noise * noise_rng.normal();
      records.push_back(std::move(r));
    }
  }
  return EmbeddingStore(std::move(records), spec.dim);
}

}  // namespace metadro
