#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace metadro::ad {

/// Dense row-major matrix. Vectors are 1xd rows, scalars are 1x1.
template <typename Scalar>
using TensorT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Tensor = TensorT<double>;

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  BroadcastRows,  // 1xn -> mxn
  SumRows,        // mxn -> 1xn
  BroadcastCols,  // mx1 -> mxn
  SumCols,        // mxn -> mx1
  Fill,           // 1x1 -> mxn
  Sum,            // mxn -> 1x1
  Relu,
  LogSumExpRows,  // mxn -> mx1
  SoftmaxRows,
  Gather,   // mxn, idx -> mx1
  Scatter,  // mx1, idx -> mxn
  SqDist,   // mxe, nxe -> mxn squared euclidean distances
};

const char* op_name(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  double scalar() const;  // value of a 1x1 node
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// How `grad` records its own computation.
enum class GradMode {
  Differentiable,  // results stay connected; grad of grad is exact
  Detached,        // results are returned as constants
};

/// Recording of primitive applications in topological order.
///
/// Every backward rule is written in terms of the same primitives, so the
/// gradient graph is itself recorded and can be differentiated again.
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    std::uint8_t arity = 0;
    bool requires_grad = false;
    double coeff = 0.0;                 // Scale factor
    Eigen::Index extent = 0;            // BroadcastRows/Cols, Scatter width
    Eigen::Index extent2 = 0;           // Fill cols
    std::vector<Eigen::Index> indices;  // Gather/Scatter
    Tensor value;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf; gradients flow into it.
  Var parameter(Tensor value);
  Var constant(Tensor value);
  Var scalar(double v);
  Var var(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Node& node(Var v) const { return node(v.id()); }

  /// Recompute every derived node from the stored leaves; the tape itself is
  /// not modified.
  std::vector<Tensor> replay() const;

  Var record(Node node);

 private:
  std::deque<Node> nodes_;
};

// Primitives. Shapes are checked; mismatches raise DimensionError.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var broadcast_rows(Var row, Eigen::Index rows);
Var sum_rows(Var a);
Var broadcast_cols(Var col, Eigen::Index cols);
Var sum_cols(Var a);
Var fill(Var s, Eigen::Index rows, Eigen::Index cols);
Var sum(Var a);
Var relu(Var a);
Var logsumexp_rows(Var a);
Var softmax_rows(Var a);
Var gather(Var a, std::span<const Eigen::Index> indices);
Var scatter(Var col, std::span<const Eigen::Index> indices, Eigen::Index cols);
Var sq_dist(Var a, Var b);

// Compositions of primitives.
Var add_row_bias(Var x, Var bias);
Var mean(Var a);
Var l2_squared(Var a, Var b);
Var squared_norm(Var a);

/// Per-row cross entropy, -log softmax(logits)[label], as an mx1 column.
Var cross_entropy_rows(Var logits, std::span<const int> labels);
/// Mean over the batch of `cross_entropy_rows`.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

/// Reverse-mode gradient of a scalar `output` w.r.t. each of `wrt`.
///
/// A parameter that does not influence `output` receives a zero tensor of its
/// own shape. With GradMode::Differentiable the returned vars are part of the
/// tape, so `grad` can be applied to expressions that contain them.
std::vector<Var> grad(Var output, std::span<const Var> wrt,
                      GradMode mode = GradMode::Differentiable);

}  // namespace metadro::ad
