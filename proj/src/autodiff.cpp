#include "metadro/autodiff.hpp"

#include <optional>
#include <sstream>

#include "metadro/error.hpp"

namespace metadro::ad {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

void same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape())
    throw UsageError(std::string(op) + ": operands live on different tapes");
}

Tensor evaluate(const Tape::Node& n, const Tensor& a, const Tensor* b) {
  switch (n.op) {
    case Op::MatMul:
      return a * (*b);
    case Op::Transpose:
      return a.transpose();
    case Op::Add:
      return a + *b;
    case Op::Sub:
      return a - *b;
    case Op::Mul:
      return a.cwiseProduct(*b);
    case Op::Scale:
      return n.coeff * a;
    case Op::BroadcastRows:
      return a.replicate(n.extent, 1);
    case Op::SumRows:
      return a.colwise().sum();
    case Op::BroadcastCols:
      return a.replicate(1, n.extent);
    case Op::SumCols:
      return a.rowwise().sum();
    case Op::Fill:
      return Tensor::Constant(n.extent, n.extent2, a(0, 0));
    case Op::Sum:
      return Tensor::Constant(1, 1, a.sum());
    case Op::Relu:
      return a.cwiseMax(0.0);
    case Op::LogSumExpRows: {
      Tensor out(a.rows(), 1);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        out(i, 0) = m + std::log((a.row(i).array() - m).exp().sum());
      }
      return out;
    }
    case Op::SoftmaxRows: {
      Tensor out(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        out.row(i) = (a.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
      }
      return out;
    }
    case Op::Gather: {
      Tensor out(a.rows(), 1);
      for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, 0) = a(i, n.indices[i]);
      return out;
    }
    case Op::Scatter: {
      Tensor out = Tensor::Zero(a.rows(), n.extent);
      for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, n.indices[i]) = a(i, 0);
      return out;
    }
    case Op::SqDist: {
      Tensor out(a.rows(), b->rows());
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b->rows(); ++j)
          out(i, j) = (a.row(i) - b->row(j)).squaredNorm();
      return out;
    }
    case Op::Leaf:
    case Op::Constant:
      break;
  }
  throw UsageError("evaluate: leaf nodes carry their own value");
}

Tape::Node unary(Op op, Var a) {
  Tape::Node n;
  n.op = op;
  n.lhs = a.id();
  n.arity = 1;
  return n;
}

Tape::Node binary(Op op, Var a, Var b) {
  Tape::Node n;
  n.op = op;
  n.lhs = a.id();
  n.rhs = b.id();
  n.arity = 2;
  return n;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::SumRows: return "sum_rows";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::SumCols: return "sum_cols";
    case Op::Fill: return "fill";
    case Op::Sum: return "sum";
    case Op::Relu: return "relu";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::Gather: return "gather";
    case Op::Scatter: return "scatter";
    case Op::SqDist: return "sq_dist";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->node(id_).value; }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw UsageError("scalar(): node is " + shape_str(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::parameter(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = true;
  n.value = std::move(value);
  if (!n.value.allFinite()) throw NumericError("parameter: non-finite value");
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  if (!n.value.allFinite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::scalar(double v) { return constant(Tensor::Constant(1, 1, v)); }

Var Tape::var(std::size_t id) {
  if (id >= nodes_.size()) throw UsageError("var: no node " + std::to_string(id));
  return Var(this, id);
}

Var Tape::record(Node n) {
  const Tensor& a = nodes_.at(n.lhs).value;
  const Tensor* b = n.arity == 2 ? &nodes_.at(n.rhs).value : nullptr;
  n.value = evaluate(n, a, b);
  if (!n.value.allFinite())
    throw NumericError(std::string(op_name(n.op)) + ": produced a non-finite value");
  n.requires_grad = nodes_[n.lhs].requires_grad || (b && nodes_[n.rhs].requires_grad);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (n.op == Op::Leaf || n.op == Op::Constant) {
      values.push_back(n.value);
    } else {
      values.push_back(evaluate(n, values[n.lhs], n.arity == 2 ? &values[n.rhs] : nullptr));
    }
  }
  return values;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  return a.tape().record(binary(Op::MatMul, a, b));
}

Var transpose(Var a) { return a.tape().record(unary(Op::Transpose, a)); }

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.value(), b.value());
  return a.tape().record(binary(Op::Add, a, b));
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
  return a.tape().record(binary(Op::Sub, a, b));
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a.value(), b.value());
  return a.tape().record(binary(Op::Mul, a, b));
}

Var scale(Var a, double c) {
  auto n = unary(Op::Scale, a);
  n.coeff = c;
  return a.tape().record(std::move(n));
}

Var broadcast_rows(Var row, Eigen::Index rows) {
  if (row.rows() != 1 || rows < 0)
    throw DimensionError("broadcast_rows: expected a 1xn row, got " + shape_str(row.value()));
  auto n = unary(Op::BroadcastRows, row);
  n.extent = rows;
  return row.tape().record(std::move(n));
}

Var sum_rows(Var a) { return a.tape().record(unary(Op::SumRows, a)); }

Var broadcast_cols(Var col, Eigen::Index cols) {
  if (col.cols() != 1 || cols < 0)
    throw DimensionError("broadcast_cols: expected an mx1 column, got " +
                         shape_str(col.value()));
  auto n = unary(Op::BroadcastCols, col);
  n.extent = cols;
  return col.tape().record(std::move(n));
}

Var sum_cols(Var a) { return a.tape().record(unary(Op::SumCols, a)); }

Var fill(Var s, Eigen::Index rows, Eigen::Index cols) {
  if (s.value().size() != 1) throw DimensionError("fill: expected a 1x1 scalar");
  auto n = unary(Op::Fill, s);
  n.extent = rows;
  n.extent2 = cols;
  return s.tape().record(std::move(n));
}

Var sum(Var a) { return a.tape().record(unary(Op::Sum, a)); }

Var relu(Var a) { return a.tape().record(unary(Op::Relu, a)); }

Var logsumexp_rows(Var a) {
  if (a.cols() == 0) throw DimensionError("logsumexp_rows: zero columns");
  return a.tape().record(unary(Op::LogSumExpRows, a));
}

Var softmax_rows(Var a) {
  if (a.cols() == 0) throw DimensionError("softmax_rows: zero columns");
  return a.tape().record(unary(Op::SoftmaxRows, a));
}

Var gather(Var a, std::span<const Eigen::Index> indices) {
  if (static_cast<Eigen::Index>(indices.size()) != a.rows())
    throw DimensionError("gather: need one index per row");
  for (auto i : indices)
    if (i < 0 || i >= a.cols()) throw ValidationError("gather: index out of range");
  auto n = unary(Op::Gather, a);
  n.indices.assign(indices.begin(), indices.end());
  return a.tape().record(std::move(n));
}

Var scatter(Var col, std::span<const Eigen::Index> indices, Eigen::Index cols) {
  if (col.cols() != 1 || static_cast<Eigen::Index>(indices.size()) != col.rows())
    throw DimensionError("scatter: need an mx1 column and one index per row");
  for (auto i : indices)
    if (i < 0 || i >= cols) throw ValidationError("scatter: index out of range");
  auto n = unary(Op::Scatter, col);
  n.indices.assign(indices.begin(), indices.end());
  n.extent = cols;
  return col.tape().record(std::move(n));
}

Var sq_dist(Var a, Var b) {
  same_tape(a, b, "sq_dist");
  if (a.cols() != b.cols()) shape_error("sq_dist", a.value(), b.value());
  return a.tape().record(binary(Op::SqDist, a, b));
}

// ---------------------------------------------------------------------------
// Compositions

Var add_row_bias(Var x, Var bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_error("add_row_bias", x.value(), bias.value());
  return add(x, broadcast_rows(bias, x.rows()));
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var l2_squared(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("l2_squared", a.value(), b.value());
  Var d = sub(a, b);
  return sum(mul(d, d));
}

Var squared_norm(Var a) { return sum(mul(a, a)); }

Var cross_entropy_rows(Var logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw DimensionError("cross_entropy: need one label per row");
  std::vector<Eigen::Index> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols())
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(logits.cols()) + ")");
    idx[i] = labels[i];
  }
  return sub(logsumexp_rows(logits), gather(logits, idx));
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  return mean(cross_entropy_rows(logits, labels));
}

// ---------------------------------------------------------------------------
// Reverse mode

std::vector<Var> grad(Var output, std::span<const Var> wrt, GradMode mode) {
  if (!output.valid()) throw UsageError("grad: invalid output");
  if (output.value().size() != 1 || output.rows() != 1)
    throw UsageError("grad: output must be a 1x1 scalar, got " + shape_str(output.value()));
  Tape& tape = output.tape();
  for (const Var& w : wrt)
    if (!w.valid() || &w.tape() != &tape) throw UsageError("grad: parameter from another tape");

  const std::size_t root = output.id();
  std::vector<std::optional<Var>> adj(root + 1);
  adj[root] = tape.scalar(1.0);

  auto accumulate = [&](std::size_t id, Var contrib) {
    adj[id] = adj[id] ? add(*adj[id], contrib) : contrib;
  };

  for (std::size_t id = root + 1; id-- > 0;) {
    if (!adj[id]) continue;
    // Node storage is a deque, so this reference survives the appends below.
    const Tape::Node& node = tape.node(id);
    if (!node.requires_grad || node.op == Op::Leaf || node.op == Op::Constant) continue;
    const Var g = *adj[id];
    const std::size_t lhs = node.lhs;
    const std::size_t rhs = node.rhs;
    const bool ga = tape.node(lhs).requires_grad;
    const bool gb = node.arity == 2 && tape.node(rhs).requires_grad;
    const Var a = tape.var(lhs);
    const Var b = node.arity == 2 ? tape.var(rhs) : Var();
    const Var out = tape.var(id);

    switch (node.op) {
      case Op::MatMul:
        if (ga) accumulate(lhs, matmul(g, transpose(b)));
        if (gb) accumulate(rhs, matmul(transpose(a), g));
        break;
      case Op::Transpose:
        accumulate(lhs, transpose(g));
        break;
      case Op::Add:
        if (ga) accumulate(lhs, g);
        if (gb) accumulate(rhs, g);
        break;
      case Op::Sub:
        if (ga) accumulate(lhs, g);
        if (gb) accumulate(rhs, scale(g, -1.0));
        break;
      case Op::Mul:
        if (ga) accumulate(lhs, mul(g, b));
        if (gb) accumulate(rhs, mul(g, a));
        break;
      case Op::Scale:
        accumulate(lhs, scale(g, node.coeff));
        break;
      case Op::BroadcastRows:
        accumulate(lhs, sum_rows(g));
        break;
      case Op::SumRows:
        accumulate(lhs, broadcast_rows(g, a.rows()));
        break;
      case Op::BroadcastCols:
        accumulate(lhs, sum_cols(g));
        break;
      case Op::SumCols:
        accumulate(lhs, broadcast_cols(g, a.cols()));
        break;
      case Op::Fill:
        accumulate(lhs, sum(g));
        break;
      case Op::Sum:
        accumulate(lhs, fill(g, a.rows(), a.cols()));
        break;
      case Op::Relu: {
        // Derivative at exactly zero is taken as zero.
        Tensor mask = (a.value().array() > 0.0).cast<double>().matrix();
        accumulate(lhs, mul(g, tape.constant(std::move(mask))));
        break;
      }
      case Op::LogSumExpRows:
        accumulate(lhs, mul(softmax_rows(a), broadcast_cols(g, a.cols())));
        break;
      case Op::SoftmaxRows: {
        Var weighted = sum_cols(mul(g, out));
        accumulate(lhs, mul(out, sub(g, broadcast_cols(weighted, a.cols()))));
        break;
      }
      case Op::Gather: {
        const std::vector<Eigen::Index> idx = node.indices;
        accumulate(lhs, scatter(g, idx, a.cols()));
        break;
      }
      case Op::Scatter: {
        const std::vector<Eigen::Index> idx = node.indices;
        accumulate(lhs, gather(g, idx));
        break;
      }
      case Op::SqDist: {
        const Eigen::Index width = a.cols();
        if (ga) {
          Var row_mass = broadcast_cols(sum_cols(g), width);
          accumulate(lhs, scale(sub(mul(a, row_mass), matmul(g, b)), 2.0));
        }
        if (gb) {
          Var col_mass = broadcast_cols(transpose(sum_rows(g)), width);
          accumulate(rhs, scale(sub(mul(b, col_mass), matmul(transpose(g), a)), 2.0));
        }
        break;
      }
      case Op::Leaf:
      case Op::Constant:
        break;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= root && adj[w.id()]) {
      result.push_back(mode == GradMode::Detached ? tape.constant(adj[w.id()]->value())
                                                  : *adj[w.id()]);
    } else {
      result.push_back(tape.constant(Tensor::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

}  // namespace metadro::ad
