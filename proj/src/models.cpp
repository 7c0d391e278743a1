#include "metadro/models.hpp"

#include <cmath>

#include "metadro/error.hpp"

namespace metadro {

using ad::Tensor;
using ad::Var;

ParameterSet MlpEncoder::init(Rng& rng) const {
  if (widths.empty()) throw ValidationError("encoder needs at least an input width");
  ParameterSet params;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    if (in < 1 || out < 1) throw ValidationError("layer widths must be >= 1");
    const bool last = l + 1 == layer_count();
    const double sd = std::sqrt((last ? 1.0 : 2.0) / in);
    Tensor w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = sd * rng.normal();
    params.push_back({"layer" + std::to_string(l) + ".weight", std::move(w)});
    params.push_back({"layer" + std::to_string(l) + ".bias", Tensor::Zero(1, out)});
  }
  return params;
}

void MlpEncoder::check(const ParameterSet& params) const {
  if (params.size() != 2 * layer_count())
    throw ValidationError("expected " + std::to_string(2 * layer_count()) + " tensors, got " +
                          std::to_string(params.size()));
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const auto& w = params[2 * l].value;
    const auto& b = params[2 * l + 1].value;
    if (w.rows() != widths[l] || w.cols() != widths[l + 1] || b.rows() != 1 ||
        b.cols() != widths[l + 1])
      throw ValidationError("parameter shapes of layer " + std::to_string(l) +
                            " do not match widths");
  }
}

std::vector<Var> bind_parameters(ad::Tape& tape, const ParameterSet& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p.value));
  return vars;
}

std::vector<Tensor> values(std::span<const Var> vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

Var mlp_forward(std::span<const Var> params, Var x) {
  if (params.size() % 2 != 0) throw ValidationError("mlp_forward: params must be (weight, bias) pairs");
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    x = ad::add_row_bias(ad::matmul(x, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) x = ad::relu(x);
  }
  return x;
}

double squared_norm(const ParameterSet& params) {
  double s = 0;
  for (const auto& p : params) s += p.value.squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------

namespace {

ad::Tape& tape_of(std::span<const Var> params, const char* what) {
  if (params.empty())
    throw UsageError(std::string(what) + ": needs at least one parameter to locate the tape");
  return params.front().tape();
}

}  // namespace

Var prototypes(ad::Tape& tape, std::span<const Var> encoder, const Episode& episode) {
  const int n = episode.spec.n_way;
  Tensor averager = Tensor::Zero(n, episode.support.rows());
  std::vector<int> counts(n, 0);
  for (int l : episode.support_labels) ++counts[l];
  for (std::size_t i = 0; i < episode.support_labels.size(); ++i) {
    const int l = episode.support_labels[i];
    averager(l, static_cast<Eigen::Index>(i)) = 1.0 / counts[l];
  }
  Var embedded = mlp_forward(encoder, tape.constant(episode.support));
  return ad::matmul(tape.constant(std::move(averager)), embedded);
}

Var protonet_logits(std::span<const Var> encoder, Var protos, Var queries) {
  return ad::scale(ad::sq_dist(mlp_forward(encoder, queries), protos), -1.0);
}

Var protonet_query_losses(ad::Tape& tape, std::span<const Var> encoder, const Episode& episode) {
  Var protos = prototypes(tape, encoder, episode);
  Var logits = protonet_logits(encoder, protos, tape.constant(episode.query));
  return ad::cross_entropy_rows(logits, episode.query_labels);
}

Var protonet_loss(ad::Tape& tape, std::span<const Var> encoder, const Episode& episode) {
  return ad::mean(protonet_query_losses(tape, encoder, episode));
}

std::vector<int> predict(const Tensor& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------

MamlOrder parse_maml_order(std::string_view name) {
  if (name == "first") return MamlOrder::First;
  if (name == "second") return MamlOrder::Second;
  throw ValidationError("order must be 'first' or 'second', got '" + std::string(name) + "'");
}

std::string_view to_string(MamlOrder order) {
  return order == MamlOrder::First ? "first" : "second";
}

void MamlConfig::validate() const {
  if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr))
    throw ValidationError("inner_lr must be finite and >= 0");
  if (inner_steps < 1) throw ValidationError("inner_steps must be >= 1");
}

std::vector<Var> inner_adapt(std::span<const Var> params, const LossFn& support_loss,
                             const MamlConfig& config) {
  config.validate();
  const auto mode = config.order == MamlOrder::Second ? ad::GradMode::Differentiable
                                                      : ad::GradMode::Detached;
  std::vector<Var> current(params.begin(), params.end());
  for (int step = 0; step < config.inner_steps; ++step) {
    Var loss = support_loss(current);
    auto g = ad::grad(loss, current, mode);
    for (std::size_t i = 0; i < current.size(); ++i)
      current[i] = ad::sub(current[i], ad::scale(g[i], config.inner_lr));
  }
  return current;
}

std::vector<Tensor> maml_meta_gradient(std::span<const Tensor> theta,
                                       std::span<const MetaTask> tasks,
                                       const MamlConfig& config) {
  if (tasks.empty()) throw ValidationError("maml_meta_gradient: empty meta batch");
  ad::Tape tape;
  std::vector<Var> params;
  for (const auto& t : theta) params.push_back(tape.parameter(t));
  Var total;
  for (const auto& task : tasks) {
    auto adapted = inner_adapt(params, task.support_loss, config);
    Var loss = task.query_loss(adapted);
    total = total.valid() ? ad::add(total, loss) : loss;
  }
  return values(ad::grad(total, params, ad::GradMode::Detached));
}

MlpEncoder maml_network(const MlpEncoder& encoder, int n_way) {
  MlpEncoder net = encoder;
  net.widths.push_back(n_way);
  return net;
}

Var maml_support_loss(std::span<const Var> params, const Episode& episode) {
  ad::Tape& tape = tape_of(params, "maml_support_loss");
  Var logits = mlp_forward(params, tape.constant(episode.support));
  return ad::softmax_cross_entropy(logits, episode.support_labels);
}

Var maml_query_logits(std::span<const Var> params, const Episode& episode) {
  ad::Tape& tape = tape_of(params, "maml_query_logits");
  return mlp_forward(params, tape.constant(episode.query));
}

Var maml_query_losses(std::span<const Var> params, const Episode& episode) {
  return ad::cross_entropy_rows(maml_query_logits(params, episode), episode.query_labels);
}

std::vector<Tensor> maml_meta_gradient(const ParameterSet& theta, std::span<const Episode> batch,
                                       const MamlConfig& config) {
  std::vector<Tensor> values;
  for (const auto& p : theta) values.push_back(p.value);
  std::vector<MetaTask> tasks;
  for (const auto& ep : batch) {
    tasks.push_back({[&ep](std::span<const Var> p) { return maml_support_loss(p, ep); },
                     [&ep](std::span<const Var> p) { return ad::mean(maml_query_losses(p, ep)); }});
  }
  return maml_meta_gradient(values, tasks, config);
}

}  // namespace metadro
