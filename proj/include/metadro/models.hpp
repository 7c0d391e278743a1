#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "metadro/autodiff.hpp"
#include "metadro/episodes.hpp"
#include "metadro/rng.hpp"
#include "metadro/store_io.hpp"

namespace metadro {

/// Ordered named parameters; layer i contributes "layer{i}.weight" (in x out)
/// and "layer{i}.bias" (1 x out).
using ParameterSet = std::vector<NamedTensor>;

/// Fully connected stack d -> hidden... -> e with ReLU between layers.
/// A single width means the identity map (no parameters).
struct MlpEncoder {
  std::vector<int> widths;

  std::size_t layer_count() const { return widths.empty() ? 0 : widths.size() - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  /// He-scaled Gaussian weights, zero biases.
  ParameterSet init(Rng& rng) const;
  /// Throws ValidationError if `params` does not match the widths.
  void check(const ParameterSet& params) const;
};

/// Puts every tensor on `tape` as a trainable parameter.
std::vector<ad::Var> bind_parameters(ad::Tape& tape, const ParameterSet& params);
std::vector<ad::Tensor> values(std::span<const ad::Var> vars);

/// Forward pass over (weight, bias) pairs; ReLU on all but the last layer.
ad::Var mlp_forward(std::span<const ad::Var> params, ad::Var x);

double squared_norm(const ParameterSet& params);

// ---------------------------------------------------------------------------
// Prototypical network

/// N x e matrix whose row n is the mean encoded support vector of label n.
ad::Var prototypes(ad::Tape& tape, std::span<const ad::Var> encoder, const Episode& episode);

/// Negative squared distances from each encoded query row to each prototype.
ad::Var protonet_logits(std::span<const ad::Var> encoder, ad::Var prototypes, ad::Var queries);

/// Per-query cross entropy (NQ x 1) against the episode labels.
ad::Var protonet_query_losses(ad::Tape& tape, std::span<const ad::Var> encoder, const Episode& episode);
ad::Var protonet_loss(ad::Tape& tape, std::span<const ad::Var> encoder, const Episode& episode);

/// Row-wise argmax, lowest index on ties.
std::vector<int> predict(const ad::Tensor& logits);

// ---------------------------------------------------------------------------
// MAML

enum class MamlOrder { First, Second };

MamlOrder parse_maml_order(std::string_view name);
std::string_view to_string(MamlOrder order);

struct MamlConfig {
  double inner_lr = 0.1;
  int inner_steps = 1;
  MamlOrder order = MamlOrder::Second;

  void validate() const;
};

using LossFn = std::function<ad::Var(std::span<const ad::Var>)>;

/// `inner_steps` SGD steps on `support_loss` starting from `params`.
/// Second order keeps the update on the tape; first order treats each step's
/// gradient as a constant. `params` are never modified.
std::vector<ad::Var> inner_adapt(std::span<const ad::Var> params, const LossFn& support_loss,
                                 const MamlConfig& config);

struct MetaTask {
  LossFn support_loss;
  LossFn query_loss;
};

/// Gradient w.r.t. theta of sum_i query_loss_i(inner_adapt(theta, support_loss_i)).
std::vector<ad::Tensor> maml_meta_gradient(std::span<const ad::Tensor> theta,
                                           std::span<const MetaTask> tasks,
                                           const MamlConfig& config);

/// Classifier network for an N-way task: the encoder widths followed by a
/// linear head of width N.
MlpEncoder maml_network(const MlpEncoder& encoder, int n_way);

ad::Var maml_support_loss(std::span<const ad::Var> params, const Episode& episode);
ad::Var maml_query_logits(std::span<const ad::Var> params, const Episode& episode);
ad::Var maml_query_losses(std::span<const ad::Var> params, const Episode& episode);

/// Meta-gradient for a batch of episodes with plain support/query cross entropy.
std::vector<ad::Tensor> maml_meta_gradient(const ParameterSet& theta,
                                           std::span<const Episode> batch,
                                           const MamlConfig& config);

}  // namespace metadro
