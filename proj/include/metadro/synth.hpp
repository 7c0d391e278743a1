#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "metadro/dataset.hpp"

namespace metadro {

/// Gaussian class clusters with a translated minority group per class.
struct SynthSpec {
  int dim = 16;
  int classes = 20;
  int groups_per_class = 2;
  int records_per_class = 100;
  double mean_scale = 5.0;   // s: class means lie on the sphere of this radius
  double noise = 1.0;        // sigma
  double shift = 0.0;        // delta
  double minority_fraction = 0.1;  // rho
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Configured class means (row c) and unit shift directions (row c).
struct SynthTruth {
  Eigen::MatrixXd means;
  Eigen::MatrixXd directions;
};

SynthTruth synth_truth(const SynthSpec& spec);

/// Labels "c00", "c01", ... (zero padded so lexical order is class order);
/// group ids "<label>_g<j>". The last group of each class is the minority:
/// it holds max(1, round(rho * R)) records shifted by delta along the class
/// direction. Remaining records go round-robin to the other groups. With a
/// single group per class, the minority records share that group.
EmbeddingStore generate(const SynthSpec& spec);

std::string synth_label(const SynthSpec& spec, int cls);
std::string synth_group(const SynthSpec& spec, int cls, int group);

}  // namespace metadro
