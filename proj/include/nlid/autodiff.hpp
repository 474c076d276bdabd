#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

// Reverse-mode automatic differentiation over dense real arrays.
//
// A Tape is an append-only list of nodes. Every recorded operation computes
// its value eagerly and keeps the parent indices it needs for the backward
// sweep; parents always precede children, so the tape is acyclic and can be
// replayed front to back. Values are 64-bit floats in column-major Eigen
// matrices; scalars are 1x1 and vectors are n x 1.
//
// Derivative conventions: relu'(0) = 0, |x|'(0) = 0.

namespace nlid::ad {

using Eigen::Index;
using Eigen::MatrixXd;

enum class Op {
  leaf,
  add,
  sub,
  mul,
  matmul,
  tanh,
  sigmoid,
  relu,
  square,
  sum,
  concat,
  hconcat,
  slice,
  scale,
  abs,
  sin,
  cos,
  exp,
  log,
  transpose,
};

class Tape;

enum class Flatten { col_major, row_major };

/// Handle to one node of a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

  const MatrixXd& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Extra integer/real context carried by a node (slice bounds, scale factor).
struct OpParams {
  double factor = 1.0;
  Index row = 0;
  Index col = 0;
  Index rows = 0;
  Index cols = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node whose derivative may be requested.
  Var variable(MatrixXd value);
  Var variable(double value);
  /// Leaf node treated as data; identical to variable() except for intent.
  Var constant(MatrixXd value) { return variable(std::move(value)); }
  Var constant(double value) { return variable(value); }

  /// Appends an operation node; throws std::invalid_argument on shape mismatch.
  Var record(Op op, std::initializer_list<Var> args, const OpParams& params = {});
  Var record(Op op, std::span<const Var> args, const OpParams& params = {});

  const MatrixXd& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output. Returns one adjoint per `wrt`
  /// entry, shaped like that entry's value. Nodes not reachable from
  /// `output` get a zero gradient.
  std::vector<MatrixXd> gradient(Var output, std::span<const Var> wrt);
  std::vector<MatrixXd> gradient(Var output, std::initializer_list<Var> wrt);

  /// d vec(output) / d vec(wrt...) as an m x n matrix. The output is
  /// flattened column-major; each wrt leaf is flattened in `order`. Uses m
  /// reverse sweeps or n forward tangent sweeps, whichever is fewer; both
  /// are exact.
  MatrixXd jacobian(Var output, std::span<const Var> wrt, Flatten order = Flatten::col_major);

  /// Replaces a leaf's value (same shape). Call replay() to refresh
  /// dependent nodes.
  void set_leaf(Var leaf, const MatrixXd& value);
  /// Recomputes every non-leaf node from its parents, front to back.
  void replay();

  /// True when every recorded value is finite.
  bool all_finite() const;

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> parents;
    OpParams params;
    MatrixXd value;
  };

  void check_same_tape(Var v, const char* what) const;
  MatrixXd evaluate(Op op, const std::vector<std::size_t>& parents, const OpParams& params) const;
  void backward_node(std::size_t i, std::vector<MatrixXd>& adjoint,
                     std::vector<char>& touched) const;
  void reverse_sweep(std::size_t output, const MatrixXd& seed, std::vector<MatrixXd>& adjoint,
                     std::vector<char>& touched) const;
  void tangent_node(std::size_t i, std::vector<MatrixXd>& tangent,
                    std::vector<char>& active) const;

  std::vector<Node> nodes_;
};

// Recording helpers. Binary elementwise ops accept equal shapes, a 1x1
// operand broadcast against anything, or an n x 1 column broadcast across
// the columns of an n x k left operand (bias addition).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var square(Var a);
Var sum(Var a);
Var abs(Var a);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var log(Var a);
Var transpose(Var a);
Var scale(Var a, double factor);
/// Stacks rows (equal column counts).
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Stacks columns (equal row counts).
Var hconcat(std::span<const Var> parts);
/// Block [row, row+rows) x [col, col+cols).
Var slice(Var a, Index row, Index rows, Index col = 0, Index cols = -1);
/// Mean of all entries.
Var mean(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// Jacobian of a vector function at x (n x 1). The function records its
/// result on the tape it is given. Throws NumericalError when any value
/// recorded along the way is non-finite.
MatrixXd jacobian(const std::function<Var(Tape&, Var)>& f, const Eigen::VectorXd& x);

}  // namespace nlid::ad
