#include "nlid/autodiff.hpp"

#include "nlid/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nlid::ad {

namespace {

struct Shape {
  Index rows;
  Index cols;
};

Shape broadcast_shape(const MatrixXd& a, const MatrixXd& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  if (b.size() == 1) return {a.rows(), a.cols()};
  if (a.size() == 1) return {b.rows(), b.cols()};
  if (b.cols() == 1 && a.rows() == b.rows()) return {a.rows(), a.cols()};
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()));
}

MatrixXd expand(const MatrixXd& m, Shape s) {
  if (m.rows() == s.rows && m.cols() == s.cols) return m;
  if (m.size() == 1) return MatrixXd::Constant(s.rows, s.cols, m(0, 0));
  return m.replicate(1, s.cols);
}

// Sums a full-shape adjoint back down to an operand's (possibly broadcast) shape.
MatrixXd reduce(const MatrixXd& g, const MatrixXd& operand) {
  if (g.rows() == operand.rows() && g.cols() == operand.cols()) return g;
  if (operand.size() == 1) return MatrixXd::Constant(1, 1, g.sum());
  return g.rowwise().sum();
}

void accumulate(std::vector<MatrixXd>& adjoint, std::vector<char>& touched, std::size_t i,
                const MatrixXd& g) {
  if (touched[i]) {
    adjoint[i] += g;
  } else {
    adjoint[i] = g;
    touched[i] = 1;
  }
}

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

const MatrixXd& Var::value() const {
  if (!tape_) throw std::logic_error("Var is not bound to a tape");
  return tape_->value(*this);
}

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw std::invalid_argument("Var::scalar on non-scalar node");
  return v(0, 0);
}

Var Tape::variable(MatrixXd value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(double value) { return variable(MatrixXd::Constant(1, 1, value)); }

const MatrixXd& Tape::value(Var v) const {
  check_same_tape(v, "value");
  return nodes_[v.index()].value;
}

void Tape::check_same_tape(Var v, const char* what) const {
  if (v.tape() != this || v.index() >= nodes_.size()) {
    throw std::invalid_argument(std::string(what) + ": variable belongs to a different tape");
  }
}

Var Tape::record(Op op, std::initializer_list<Var> args, const OpParams& params) {
  return record(op, std::span<const Var>(args.begin(), args.size()), params);
}

Var Tape::record(Op op, std::span<const Var> args, const OpParams& params) {
  if (op == Op::leaf) throw std::invalid_argument("record: use variable() for leaves");
  std::vector<std::size_t> parents;
  parents.reserve(args.size());
  for (const auto& a : args) {
    check_same_tape(a, "record");
    parents.push_back(a.index());
  }
  MatrixXd v = evaluate(op, parents, params);
  Node n;
  n.op = op;
  n.parents = std::move(parents);
  n.params = params;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

MatrixXd Tape::evaluate(Op op, const std::vector<std::size_t>& parents,
                        const OpParams& params) const {
  auto arity = [&](std::size_t k) {
    if (parents.size() != k) throw std::invalid_argument("record: wrong operand count");
  };
  auto val = [&](std::size_t k) -> const MatrixXd& { return nodes_[parents[k]].value; };
  switch (op) {
    case Op::leaf:
      break;
    case Op::add:
    case Op::sub:
    case Op::mul: {
      arity(2);
      const char* name = op == Op::add ? "add" : op == Op::sub ? "sub" : "mul";
      const Shape s = broadcast_shape(val(0), val(1), name);
      const MatrixXd a = expand(val(0), s);
      const MatrixXd b = expand(val(1), s);
      if (op == Op::add) return a + b;
      if (op == Op::sub) return a - b;
      return a.cwiseProduct(b);
    }
    case Op::matmul:
      arity(2);
      if (val(0).cols() != val(1).rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + std::to_string(val(0).rows()) +
                                    "x" + std::to_string(val(0).cols()) + " * " +
                                    std::to_string(val(1).rows()) + "x" +
                                    std::to_string(val(1).cols()));
      }
      return val(0) * val(1);
    case Op::tanh:
      arity(1);
      return val(0).array().tanh().matrix();
    case Op::sigmoid:
      arity(1);
      return val(0).unaryExpr([](double z) { return sigmoid_scalar(z); });
    case Op::relu:
      arity(1);
      return val(0).cwiseMax(0.0);
    case Op::square:
      arity(1);
      return val(0).array().square().matrix();
    case Op::sum:
      arity(1);
      return MatrixXd::Constant(1, 1, val(0).sum());
    case Op::abs:
      arity(1);
      return val(0).cwiseAbs();
    case Op::sin:
      arity(1);
      return val(0).array().sin().matrix();
    case Op::cos:
      arity(1);
      return val(0).array().cos().matrix();
    case Op::exp:
      arity(1);
      return val(0).array().exp().matrix();
    case Op::log:
      arity(1);
      return val(0).array().log().matrix();
    case Op::transpose:
      arity(1);
      return val(0).transpose();
    case Op::scale:
      arity(1);
      return params.factor * val(0);
    case Op::concat: {
      if (parents.empty()) throw std::invalid_argument("concat: no operands");
      Index rows = 0;
      const Index cols = val(0).cols();
      for (std::size_t k = 0; k < parents.size(); ++k) {
        if (val(k).cols() != cols) throw std::invalid_argument("concat: column count mismatch");
        rows += val(k).rows();
      }
      MatrixXd out(rows, cols);
      Index r = 0;
      for (std::size_t k = 0; k < parents.size(); ++k) {
        out.middleRows(r, val(k).rows()) = val(k);
        r += val(k).rows();
      }
      return out;
    }
    case Op::hconcat: {
      if (parents.empty()) throw std::invalid_argument("hconcat: no operands");
      Index cols = 0;
      const Index rows = val(0).rows();
      for (std::size_t k = 0; k < parents.size(); ++k) {
        if (val(k).rows() != rows) throw std::invalid_argument("hconcat: row count mismatch");
        cols += val(k).cols();
      }
      MatrixXd out(rows, cols);
      Index c = 0;
      for (std::size_t k = 0; k < parents.size(); ++k) {
        out.middleCols(c, val(k).cols()) = val(k);
        c += val(k).cols();
      }
      return out;
    }
    case Op::slice: {
      arity(1);
      const auto& a = val(0);
      if (params.row < 0 || params.col < 0 || params.rows < 0 || params.cols < 0 ||
          params.row + params.rows > a.rows() || params.col + params.cols > a.cols()) {
        throw std::invalid_argument("slice: block out of range");
      }
      return a.block(params.row, params.col, params.rows, params.cols);
    }
  }
  throw std::invalid_argument("record: unknown op");
}

void Tape::backward_node(std::size_t i, std::vector<MatrixXd>& adjoint,
                         std::vector<char>& touched) const {
  const Node& n = nodes_[i];
  const MatrixXd& g = adjoint[i];
  auto pv = [&](std::size_t k) -> const MatrixXd& { return nodes_[n.parents[k]].value; };
  auto push = [&](std::size_t k, const MatrixXd& d) {
    accumulate(adjoint, touched, n.parents[k], d);
  };
  switch (n.op) {
    case Op::leaf:
      break;
    case Op::add:
      push(0, reduce(g, pv(0)));
      push(1, reduce(g, pv(1)));
      break;
    case Op::sub:
      push(0, reduce(g, pv(0)));
      push(1, reduce(-g, pv(1)));
      break;
    case Op::mul: {
      const Shape s{g.rows(), g.cols()};
      push(0, reduce(g.cwiseProduct(expand(pv(1), s)), pv(0)));
      push(1, reduce(g.cwiseProduct(expand(pv(0), s)), pv(1)));
      break;
    }
    case Op::matmul:
      push(0, g * pv(1).transpose());
      push(1, pv(0).transpose() * g);
      break;
    case Op::tanh:
      push(0, g.array() * (1.0 - n.value.array().square()));
      break;
    case Op::sigmoid:
      push(0, g.array() * n.value.array() * (1.0 - n.value.array()));
      break;
    case Op::relu:
      push(0, g.array() * (pv(0).array() > 0.0).cast<double>());
      break;
    case Op::square:
      push(0, 2.0 * g.array() * pv(0).array());
      break;
    case Op::sum:
      push(0, MatrixXd::Constant(pv(0).rows(), pv(0).cols(), g(0, 0)));
      break;
    case Op::abs:
      push(0, g.array() * pv(0).array().sign());
      break;
    case Op::sin:
      push(0, g.array() * pv(0).array().cos());
      break;
    case Op::cos:
      push(0, -g.array() * pv(0).array().sin());
      break;
    case Op::exp:
      push(0, g.array() * n.value.array());
      break;
    case Op::log:
      push(0, g.array() / pv(0).array());
      break;
    case Op::transpose:
      push(0, g.transpose());
      break;
    case Op::scale:
      push(0, n.params.factor * g);
      break;
    case Op::concat: {
      Index r = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        push(k, g.middleRows(r, pv(k).rows()));
        r += pv(k).rows();
      }
      break;
    }
    case Op::hconcat: {
      Index c = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        push(k, g.middleCols(c, pv(k).cols()));
        c += pv(k).cols();
      }
      break;
    }
    case Op::slice: {
      MatrixXd d = MatrixXd::Zero(pv(0).rows(), pv(0).cols());
      d.block(n.params.row, n.params.col, n.params.rows, n.params.cols) = g;
      push(0, d);
      break;
    }
  }
}

void Tape::reverse_sweep(std::size_t output, const MatrixXd& seed, std::vector<MatrixXd>& adjoint,
                         std::vector<char>& touched) const {
  adjoint.resize(nodes_.size());
  touched.assign(nodes_.size(), 0);
  adjoint[output] = seed;
  touched[output] = 1;
  for (std::size_t i = output + 1; i-- > 0;) {
    if (touched[i] && nodes_[i].op != Op::leaf) backward_node(i, adjoint, touched);
  }
}

std::vector<MatrixXd> Tape::gradient(Var output, std::initializer_list<Var> wrt) {
  return gradient(output, std::span<const Var>(wrt.begin(), wrt.size()));
}

std::vector<MatrixXd> Tape::gradient(Var output, std::span<const Var> wrt) {
  check_same_tape(output, "gradient");
  for (const auto& w : wrt) check_same_tape(w, "gradient");
  const auto& out = nodes_[output.index()].value;
  if (out.size() != 1) throw std::invalid_argument("gradient: output must be scalar");
  std::vector<MatrixXd> adjoint;
  std::vector<char> touched;
  reverse_sweep(output.index(), MatrixXd::Ones(1, 1), adjoint, touched);
  std::vector<MatrixXd> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    const auto& v = nodes_[w.index()].value;
    result.push_back(touched[w.index()] ? adjoint[w.index()] : MatrixXd::Zero(v.rows(), v.cols()));
  }
  return result;
}

void Tape::tangent_node(std::size_t i, std::vector<MatrixXd>& tangent,
                        std::vector<char>& active) const {
  const Node& n = nodes_[i];
  bool any = false;
  for (auto p : n.parents) any = any || active[p];
  if (!any) {
    active[i] = 0;
    return;
  }
  auto pv = [&](std::size_t k) -> const MatrixXd& { return nodes_[n.parents[k]].value; };
  auto pt = [&](std::size_t k) -> MatrixXd {
    const auto& v = pv(k);
    return active[n.parents[k]] ? tangent[n.parents[k]] : MatrixXd::Zero(v.rows(), v.cols());
  };
  const Shape s{n.value.rows(), n.value.cols()};
  MatrixXd t;
  switch (n.op) {
    case Op::leaf:
      return;
    case Op::add:
      t = expand(pt(0), s) + expand(pt(1), s);
      break;
    case Op::sub:
      t = expand(pt(0), s) - expand(pt(1), s);
      break;
    case Op::mul:
      t = expand(pt(0), s).cwiseProduct(expand(pv(1), s)) +
          expand(pv(0), s).cwiseProduct(expand(pt(1), s));
      break;
    case Op::matmul:
      t = pt(0) * pv(1) + pv(0) * pt(1);
      break;
    case Op::tanh:
      t = pt(0).array() * (1.0 - n.value.array().square());
      break;
    case Op::sigmoid:
      t = pt(0).array() * n.value.array() * (1.0 - n.value.array());
      break;
    case Op::relu:
      t = pt(0).array() * (pv(0).array() > 0.0).cast<double>();
      break;
    case Op::square:
      t = 2.0 * pt(0).array() * pv(0).array();
      break;
    case Op::sum:
      t = MatrixXd::Constant(1, 1, pt(0).sum());
      break;
    case Op::abs:
      t = pt(0).array() * pv(0).array().sign();
      break;
    case Op::sin:
      t = pt(0).array() * pv(0).array().cos();
      break;
    case Op::cos:
      t = -pt(0).array() * pv(0).array().sin();
      break;
    case Op::exp:
      t = pt(0).array() * n.value.array();
      break;
    case Op::log:
      t = pt(0).array() / pv(0).array();
      break;
    case Op::transpose:
      t = pt(0).transpose();
      break;
    case Op::scale:
      t = n.params.factor * pt(0);
      break;
    case Op::concat: {
      t.resize(s.rows, s.cols);
      Index r = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        t.middleRows(r, pv(k).rows()) = pt(k);
        r += pv(k).rows();
      }
      break;
    }
    case Op::hconcat: {
      t.resize(s.rows, s.cols);
      Index c = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        t.middleCols(c, pv(k).cols()) = pt(k);
        c += pv(k).cols();
      }
      break;
    }
    case Op::slice:
      t = pt(0).block(n.params.row, n.params.col, n.params.rows, n.params.cols);
      break;
  }
  tangent[i] = std::move(t);
  active[i] = 1;
}

MatrixXd Tape::jacobian(Var output, std::span<const Var> wrt, Flatten order) {
  check_same_tape(output, "jacobian");
  Index n = 0;
  for (const auto& w : wrt) {
    check_same_tape(w, "jacobian");
    if (nodes_[w.index()].op != Op::leaf) {
      throw std::invalid_argument("jacobian: differentiation targets must be leaves");
    }
    n += nodes_[w.index()].value.size();
  }
  const auto& out = nodes_[output.index()].value;
  const Index m = out.size();
  MatrixXd jac = MatrixXd::Zero(m, n);
  if (m == 0 || n == 0) return jac;

  if (m <= n) {
    std::vector<MatrixXd> adjoint;
    std::vector<char> touched;
    MatrixXd seed = MatrixXd::Zero(out.rows(), out.cols());
    for (Index i = 0; i < m; ++i) {
      seed.setZero();
      seed(i) = 1.0;
      reverse_sweep(output.index(), seed, adjoint, touched);
      Index c = 0;
      for (const auto& w : wrt) {
        const Index sz = nodes_[w.index()].value.size();
        if (touched[w.index()]) {
          const auto& adj = adjoint[w.index()];
          if (order == Flatten::col_major) {
            jac.row(i).segment(c, sz) = adj.reshaped().transpose();
          } else {
            jac.row(i).segment(c, sz) = adj.transpose().reshaped().transpose();
          }
        }
        c += sz;
      }
    }
    return jac;
  }

  std::vector<MatrixXd> tangent(nodes_.size());
  std::vector<char> active(nodes_.size(), 0);
  Index c = 0;
  for (const auto& w : wrt) {
    const auto& wv = nodes_[w.index()].value;
    for (Index j = 0; j < wv.size(); ++j, ++c) {
      std::fill(active.begin(), active.end(), 0);
      tangent[w.index()] = MatrixXd::Zero(wv.rows(), wv.cols());
      const Index linear =
          order == Flatten::col_major ? j : (j / wv.cols()) + (j % wv.cols()) * wv.rows();
      tangent[w.index()](linear) = 1.0;
      active[w.index()] = 1;
      for (std::size_t i = w.index() + 1; i <= output.index(); ++i) {
        if (nodes_[i].op != Op::leaf) tangent_node(i, tangent, active);
      }
      if (active[output.index()]) jac.col(c) = tangent[output.index()].reshaped();
    }
  }
  return jac;
}

void Tape::set_leaf(Var leaf, const MatrixXd& value) {
  check_same_tape(leaf, "set_leaf");
  auto& n = nodes_[leaf.index()];
  if (n.op != Op::leaf) throw std::invalid_argument("set_leaf: not a leaf");
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols()) {
    throw std::invalid_argument("set_leaf: shape mismatch");
  }
  n.value = value;
}

void Tape::replay() {
  for (auto& n : nodes_) {
    if (n.op != Op::leaf) n.value = evaluate(n.op, n.parents, n.params);
  }
}

bool Tape::all_finite() const {
  for (const auto& n : nodes_) {
    if (!n.value.allFinite()) return false;
  }
  return true;
}

Var add(Var a, Var b) { return a.tape()->record(Op::add, {a, b}); }
Var sub(Var a, Var b) { return a.tape()->record(Op::sub, {a, b}); }
Var mul(Var a, Var b) { return a.tape()->record(Op::mul, {a, b}); }
Var matmul(Var a, Var b) { return a.tape()->record(Op::matmul, {a, b}); }
Var tanh(Var a) { return a.tape()->record(Op::tanh, {a}); }
Var sigmoid(Var a) { return a.tape()->record(Op::sigmoid, {a}); }
Var relu(Var a) { return a.tape()->record(Op::relu, {a}); }
Var square(Var a) { return a.tape()->record(Op::square, {a}); }
Var sum(Var a) { return a.tape()->record(Op::sum, {a}); }
Var abs(Var a) { return a.tape()->record(Op::abs, {a}); }
Var sin(Var a) { return a.tape()->record(Op::sin, {a}); }
Var cos(Var a) { return a.tape()->record(Op::cos, {a}); }
Var exp(Var a) { return a.tape()->record(Op::exp, {a}); }
Var log(Var a) { return a.tape()->record(Op::log, {a}); }
Var transpose(Var a) { return a.tape()->record(Op::transpose, {a}); }

Var scale(Var a, double factor) {
  OpParams p;
  p.factor = factor;
  return a.tape()->record(Op::scale, {a}, p);
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  return parts.front().tape()->record(Op::concat, parts);
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: no operands");
  return parts.front().tape()->record(Op::hconcat, parts);
}

Var slice(Var a, Index row, Index rows, Index col, Index cols) {
  OpParams p;
  p.row = row;
  p.rows = rows;
  p.col = col;
  p.cols = cols < 0 ? a.cols() - col : cols;
  return a.tape()->record(Op::slice, {a}, p);
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

MatrixXd jacobian(const std::function<Var(Tape&, Var)>& f, const Eigen::VectorXd& x) {
  Tape tape;
  const Var xv = tape.variable(MatrixXd(x));
  const Var y = f(tape, xv);
  if (!tape.all_finite()) throw NumericalError("jacobian: non-finite intermediate value");
  const Var wrt[] = {xv};
  return tape.jacobian(y, wrt);
}

}  // namespace nlid::ad
