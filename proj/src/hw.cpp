#include "nlid/hw.hpp"

#include "nlid/errors.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>

namespace nlid {

void LinearSSBlock::validate() const {
  const Index n = a.rows();
  if (a.cols() != n || b.rows() != n || c.cols() != n || d.rows() != c.rows() || d.cols() != b.cols()) {
    throw ConfigError("linear block has inconsistent dimensions");
  }
  if (!(ts > 0.0)) throw ConfigError("linear block sample time must be > 0");
}

MatrixXd simulate(const LinearSSBlock& block, const MatrixXd& v, const VectorXd& x0) {
  block.validate();
  if (v.cols() != block.inputs()) throw DataError("linear block input has the wrong channel count");
  VectorXd x = x0.size() == 0 ? VectorXd::Zero(block.order()) : x0;
  if (x.size() != block.order()) throw DataError("initial state has the wrong size");
  MatrixXd w(v.rows(), block.outputs());
  for (Index t = 0; t < v.rows(); ++t) {
    const VectorXd vt = v.row(t).transpose();
    w.row(t) = (block.c * x + block.d * vt).transpose();
    x = block.a * x + block.b * vt;
  }
  return w;
}

namespace {

struct ArxSolution {
  MatrixXd theta;  // p x ny
  double sse = 0.0;
  Index rows = 0;
};

// Rows t >= first of every segment; regression [y(t-1..t-n), u(t-1..t-n)].
std::optional<ArxSolution> fit_arx(const SegmentSet& data, int n, int first) {
  const Index ny = data.front().num_outputs(), nu = data.front().num_inputs();
  const Index p = n * (ny + nu);
  Index rows = 0;
  for (const auto& s : data) rows += s.samples() - first;
  MatrixXd phi(rows, p), target(rows, ny);
  Index r = 0;
  for (const auto& s : data) {
    for (Index t = first; t < s.samples(); ++t, ++r) {
      for (int i = 1; i <= n; ++i) {
        phi.block(r, (i - 1) * ny, 1, ny) = s.outputs().row(t - i);
        phi.block(r, n * ny + (i - 1) * nu, 1, nu) = s.inputs().row(t - i);
      }
      target.row(r) = s.outputs().row(t);
    }
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(phi);
  if (qr.rank() < p) return std::nullopt;
  ArxSolution sol;
  sol.theta = qr.solve(target);
  sol.sse = (phi * sol.theta - target).squaredNorm();
  sol.rows = rows;
  // Noise-free data leaves only rounding in the SSE; floor it so that
  // higher orders cannot win on rounding noise.
  sol.sse = std::max(sol.sse, 1e-18 * target.squaredNorm() + std::numeric_limits<double>::min());
  return sol;
}

LinearSSBlock observer_canonical(const MatrixXd& theta, int n, Index ny, Index nu, double ts) {
  LinearSSBlock b;
  const Index nx = n * ny;
  b.a = MatrixXd::Zero(nx, nx);
  b.b = MatrixXd::Zero(nx, nu);
  b.c = MatrixXd::Zero(ny, nx);
  b.d = MatrixXd::Zero(ny, nu);
  b.ts = ts;
  for (int i = 0; i < n; ++i) {
    b.a.block(i * ny, 0, ny, ny) = theta.middleRows(i * ny, ny).transpose();
    if (i + 1 < n) b.a.block(i * ny, (i + 1) * ny, ny, ny).setIdentity();
    b.b.middleRows(i * ny, ny) = theta.middleRows(n * ny + i * nu, nu).transpose();
  }
  b.c.leftCols(ny).setIdentity();
  return b;
}

void check_segments(const SegmentSet& data) {
  if (data.empty()) throw DataError("no data segments");
  for (const auto& s : data) {
    if (s.input_names() != data.front().input_names() || s.output_names() != data.front().output_names()) {
      throw DataError("segments have different channel layouts");
    }
  }
}

}  // namespace

LinearFit fit_linear_auto(const SegmentSet& data, int max_order) {
  if (max_order < 1) throw ConfigError("max_order must be >= 1");
  check_segments(data);
  Index total = 0;
  for (const auto& s : data) {
    if (s.samples() <= max_order) throw DataError("segment shorter than the maximum order");
    total += s.samples();
  }
  if (total < 10 * static_cast<Index>(max_order)) {
    throw DataError("linear order selection needs at least " + std::to_string(10 * max_order) + " samples, got " +
                    std::to_string(total));
  }
  const Index ny = data.front().num_outputs(), nu = data.front().num_inputs();
  LinearFit fit;
  double best = std::numeric_limits<double>::infinity();
  MatrixXd best_theta;
  for (int n = 1; n <= max_order; ++n) {
    const auto sol = fit_arx(data, n, max_order);
    if (!sol) {
      fit.aic.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double m = static_cast<double>(sol->rows);
    const double k = static_cast<double>(n * ny * (ny + nu));
    const double aic = m * std::log(sol->sse / m) + 2.0 * k;
    fit.aic.push_back(aic);
    if (aic < best) {
      best = aic;
      fit.order = n;
      best_theta = sol->theta;
    }
  }
  if (fit.order == 0) throw DataError("ARX regression is rank deficient at every order up to " + std::to_string(max_order));
  fit.block = observer_canonical(best_theta, fit.order, ny, nu, data.front().ts());
  return fit;
}

LinearFit fit_linear_auto(const SignalTable& data, int max_order) {
  return fit_linear_auto(SegmentSet{data}, max_order);
}

// ---------------------------------------------------------------- model

bool HwModel::has_input_nl() const {
  for (const auto& n : input_nl)
    if (n) return true;
  return false;
}

bool HwModel::has_output_nl() const {
  for (const auto& n : output_nl)
    if (n) return true;
  return false;
}

void HwModel::validate() const {
  linear.validate();
  if (static_cast<Index>(input_nl.size()) != num_inputs() || linear.inputs() != num_inputs() ||
      static_cast<Index>(output_nl.size()) != num_outputs() || linear.outputs() != num_outputs()) {
    throw ConfigError("Hammerstein-Wiener channel counts do not chain");
  }
  for (const auto* list : {&input_nl, &output_nl}) {
    for (const auto& n : *list) {
      if (n && (n->input_dim != 1 || n->output_dim != 1)) throw ConfigError("static nonlinearities must be 1 -> 1");
    }
  }
}

namespace {

MatrixXd apply_nl(const std::vector<std::optional<MLPNetwork>>& nets, const MatrixXd& x) {
  MatrixXd out = x;
  for (Index c = 0; c < x.cols(); ++c) {
    const auto& n = nets[static_cast<std::size_t>(c)];
    if (n) out.col(c) = forward_batch(*n, x.col(c).transpose()).row(0).transpose();
  }
  return out;
}

// Normalized input rows -> normalized output rows.
MatrixXd simulate_normalized(const HwModel& m, const MatrixXd& un) {
  return apply_nl(m.output_nl, simulate(m.linear, apply_nl(m.input_nl, un)));
}

void check_finite_rows(const MatrixXd& y) {
  for (Index t = 0; t < y.rows(); ++t) {
    if (!y.row(t).allFinite()) {
      throw NumericalError("Hammerstein-Wiener simulation produced a non-finite value at time index " + std::to_string(t));
    }
  }
}

void check_layout(const HwModel& m, const SignalTable& data) {
  if (data.input_names() != m.input_names || data.output_names() != m.output_names) {
    throw DataError("data channels do not match the Hammerstein-Wiener model");
  }
}

void append(VectorXd& p, Index& k, const MatrixXd& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) p(k++) = m(r, c);
}

void extract(const VectorXd& p, Index& k, MatrixXd& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = p(k++);
}

Index param_count(const HwModel& m) {
  Index n = m.linear.a.size() + m.linear.b.size() + m.linear.c.size() + m.linear.d.size();
  for (const auto* list : {&m.input_nl, &m.output_nl})
    for (const auto& net : *list)
      if (net) n += net->parameter_count();
  return n;
}

// Fits a 1 -> 1 network to (x, target) pairs by LM.
void fit_static(MLPNetwork& net, const VectorXd& x, const VectorXd& target) {
  const MatrixXd xr = x.transpose();
  auto residual = [&](const VectorXd& p) {
    MLPNetwork n = net;
    set_params(n, p);
    return VectorXd(forward_batch(n, xr).row(0).transpose() - target);
  };
  auto jacobian = [&](const VectorXd& p) {
    MLPNetwork n = net;
    set_params(n, p);
    ad::Tape tape;
    const auto b = bind(n, tape);
    const ad::Var out = forward(b, tape.constant(xr));
    const auto leaves = b.leaves();
    return tape.jacobian(out, leaves, ad::Flatten::row_major);
  };
  LMOptions opt;
  opt.max_iter = 200;
  const auto res = minimize_lm(residual, jacobian, get_params(net), opt);
  set_params(net, res.x);
}

// Residual rows of one segment in (t, channel) order plus the Jacobian.
MatrixXd segment_jacobian(const HwModel& m, const MatrixXd& un) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  std::vector<std::optional<MlpBinding>> in_b, out_b;
  for (const auto& n : m.input_nl) {
    in_b.push_back(n ? std::optional<MlpBinding>(bind(*n, tape)) : std::nullopt);
    if (in_b.back())
      for (const auto& l : in_b.back()->leaves()) leaves.push_back(l);
  }
  const ad::Var a = tape.variable(m.linear.a), b = tape.variable(m.linear.b);
  const ad::Var c = tape.variable(m.linear.c), d = tape.variable(m.linear.d);
  leaves.insert(leaves.end(), {a, b, c, d});
  for (const auto& n : m.output_nl) {
    out_b.push_back(n ? std::optional<MlpBinding>(bind(*n, tape)) : std::nullopt);
    if (out_b.back())
      for (const auto& l : out_b.back()->leaves()) leaves.push_back(l);
  }
  const Index n = un.rows();
  const ad::Var u = tape.constant(MatrixXd(un.transpose()));
  std::vector<ad::Var> rows;
  for (std::size_t i = 0; i < in_b.size(); ++i) {
    const ad::Var r = ad::slice(u, static_cast<Index>(i), 1, 0, n);
    rows.push_back(in_b[i] ? forward(*in_b[i], r) : r);
  }
  const ad::Var v = ad::concat(rows);
  ad::Var x = tape.constant(MatrixXd::Zero(m.linear.order(), 1));
  std::vector<ad::Var> ws;
  ws.reserve(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) {
    const ad::Var vt = ad::slice(v, 0, v.rows(), t, 1);
    ws.push_back(ad::matmul(c, x) + ad::matmul(d, vt));
    x = ad::matmul(a, x) + ad::matmul(b, vt);
  }
  const ad::Var w = ad::hconcat(ws);
  std::vector<ad::Var> outs;
  for (std::size_t j = 0; j < out_b.size(); ++j) {
    const ad::Var r = ad::slice(w, static_cast<Index>(j), 1, 0, n);
    outs.push_back(out_b[j] ? forward(*out_b[j], r) : r);
  }
  return tape.jacobian(ad::concat(outs), leaves, ad::Flatten::row_major);
}

}  // namespace

MatrixXd simulate(const HwModel& model, const SignalTable& data) {
  model.validate();
  check_layout(model, data);
  const MatrixXd y = model.normalization.outputs.invert(
      simulate_normalized(model, model.normalization.inputs.apply(data.inputs())));
  check_finite_rows(y);
  return y;
}

MatrixXd simulate(const HwModel& model, const SignalTable& data, const VectorXd& x0) {
  model.validate();
  check_layout(model, data);
  if (x0.size() != model.linear.order()) throw DataError("initial state has the wrong size");
  const MatrixXd un = model.normalization.inputs.apply(data.inputs());
  const MatrixXd y = model.normalization.outputs.invert(
      apply_nl(model.output_nl, simulate(model.linear, apply_nl(model.input_nl, un), x0)));
  check_finite_rows(y);
  return y;
}

VectorXd estimate_initial_state(const HwModel& model, const SignalTable& data, Index horizon) {
  model.validate();
  check_layout(model, data);
  const Index n = horizon > 0 ? std::min(horizon, data.samples()) : data.samples();
  const Index nx = model.linear.order();
  const MatrixXd v = apply_nl(model.input_nl, model.normalization.inputs.apply(data.inputs().topRows(n)));
  const MatrixXd target = model.normalization.outputs.apply(data.outputs().topRows(n));
  auto residual = [&](const VectorXd& x0) {
    const MatrixXd e = apply_nl(model.output_nl, simulate(model.linear, v, x0)) - target;
    return VectorXd(e.reshaped());
  };
  // Central differences; x0 has only a handful of entries.
  auto jacobian = [&](const VectorXd& x0) {
    MatrixXd j(n * model.num_outputs(), nx);
    for (Index i = 0; i < nx; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x0(i)));
      VectorXd xp = x0, xm = x0;
      xp(i) += h;
      xm(i) -= h;
      j.col(i) = (residual(xp) - residual(xm)) / (2.0 * h);
    }
    return j;
  };
  LMOptions lo;
  lo.max_iter = 50;
  return minimize_lm(residual, jacobian, VectorXd::Zero(nx), lo).x;
}

VectorXd hw_params(const HwModel& m) {
  VectorXd p(param_count(m));
  Index k = 0;
  for (const auto& n : m.input_nl) {
    if (!n) continue;
    p.segment(k, n->parameter_count()) = get_params(*n);
    k += n->parameter_count();
  }
  append(p, k, m.linear.a);
  append(p, k, m.linear.b);
  append(p, k, m.linear.c);
  append(p, k, m.linear.d);
  for (const auto& n : m.output_nl) {
    if (!n) continue;
    p.segment(k, n->parameter_count()) = get_params(*n);
    k += n->parameter_count();
  }
  return p;
}

void set_hw_params(HwModel& m, const VectorXd& p) {
  if (p.size() != param_count(m)) throw std::invalid_argument("HW parameter vector has the wrong size");
  Index k = 0;
  for (auto& n : m.input_nl) {
    if (!n) continue;
    set_params(*n, p.segment(k, n->parameter_count()));
    k += n->parameter_count();
  }
  extract(p, k, m.linear.a);
  extract(p, k, m.linear.b);
  extract(p, k, m.linear.c);
  extract(p, k, m.linear.d);
  for (auto& n : m.output_nl) {
    if (!n) continue;
    set_params(*n, p.segment(k, n->parameter_count()));
    k += n->parameter_count();
  }
}

void normalize_gain(HwModel& m) {
  for (const auto& n : m.output_nl)
    if (!n) return;
  const double s = Eigen::JacobiSVD<MatrixXd>(m.linear.c).singularValues()(0);
  if (!(s > 0.0) || !std::isfinite(s)) return;
  m.linear.c /= s;
  m.linear.d /= s;
  for (auto& n : m.output_nl) n->layers.front().weights *= s;
}

HwModel create_hw(const SegmentSet& data, const HwStructure& st, LinearFit* fit_out) {
  check_segments(data);
  if (st.order < 0) throw ConfigError("linear order must be >= 0");
  HwModel m;
  m.input_names = data.front().input_names();
  m.output_names = data.front().output_names();
  m.normalization = NormalizationState::fit(data, st.normalization);
  SegmentSet norm;
  for (const auto& s : data) norm.push_back(m.normalization.apply(s));

  LinearFit fit;
  if (st.order > 0) {
    const auto sol = fit_arx(norm, st.order, st.order);
    if (!sol) throw DataError("ARX regression of order " + std::to_string(st.order) + " is rank deficient");
    fit.order = st.order;
    fit.block = observer_canonical(sol->theta, st.order, data.front().num_outputs(), data.front().num_inputs(),
                                   data.front().ts());
  } else {
    fit = fit_linear_auto(norm, st.max_order);
  }
  m.linear = fit.block;

  std::uint64_t seed = st.seed;
  const Index nu = m.num_inputs(), ny = m.num_outputs();
  const SignalTable pooled = concatenate(norm);
  for (Index i = 0; i < nu; ++i) {
    if (!st.input.enabled) {
      m.input_nl.emplace_back();
      continue;
    }
    MLPNetwork net = create_mlp(1, 1, st.input.hidden, st.input.activation, {WeightsInit::glorot, seed++});
    const VectorXd x = pooled.inputs().col(i);
    fit_static(net, x, x);
    m.input_nl.emplace_back(std::move(net));
  }
  m.output_nl.assign(static_cast<std::size_t>(ny), std::nullopt);
  if (st.output.enabled) {
    Index rows = 0;
    for (const auto& s : norm) rows += s.samples();
    MatrixXd w(rows, ny), y(rows, ny);
    Index at = 0;
    for (const auto& s : norm) {
      w.middleRows(at, s.samples()) = simulate(m.linear, apply_nl(m.input_nl, s.inputs()));
      y.middleRows(at, s.samples()) = s.outputs();
      at += s.samples();
    }
    for (Index c = 0; c < ny; ++c) {
      MLPNetwork net = create_mlp(1, 1, st.output.hidden, st.output.activation, {WeightsInit::glorot, seed++});
      fit_static(net, w.col(c), y.col(c));
      m.output_nl[static_cast<std::size_t>(c)] = std::move(net);
    }
  }
  m.validate();
  if (fit_out) *fit_out = fit;
  return m;
}

HwTrainingReport train_hw(HwModel& model, const SegmentSet& data, const LMOptions& options) {
  model.validate();
  check_segments(data);
  SegmentSet norm;
  Index total = 0;
  for (const auto& s : data) {
    check_layout(model, s);
    norm.push_back(model.normalization.apply(s));
    total += s.samples() * model.num_outputs();
  }
  HwModel work = model;
  auto residual = [&](const VectorXd& p) {
    set_hw_params(work, p);
    VectorXd r(total);
    Index at = 0;
    for (const auto& s : norm) {
      const MatrixXd e = simulate_normalized(work, s.inputs()) - s.outputs();
      // (t, channel) order
      const MatrixXd et = e.transpose();
      r.segment(at, et.size()) = Eigen::Map<const VectorXd>(et.data(), et.size());
      at += et.size();
    }
    if (!r.allFinite()) throw NumericalError("Hammerstein-Wiener rollout diverged");
    return r;
  };
  auto jacobian = [&](const VectorXd& p) {
    set_hw_params(work, p);
    MatrixXd j(total, p.size());
    Index at = 0;
    for (const auto& s : norm) {
      const MatrixXd js = segment_jacobian(work, s.inputs());
      j.middleRows(at, js.rows()) = js;
      at += js.rows();
    }
    return j;
  };
  const auto res = minimize_lm(residual, jacobian, hw_params(model), options);
  set_hw_params(model, res.x);
  normalize_gain(model);

  HwTrainingReport rep;
  rep.initial_cost = 2.0 * res.initial_cost;
  rep.final_cost = 2.0 * res.cost;
  rep.iterations = res.iterations;
  rep.accepted_steps = res.accepted_steps;
  rep.stop_reason = to_string(res.reason);
  for (std::size_t i = 0; i < res.cost_trace.size(); ++i) {
    rep.trace.push_back({static_cast<int>(i), 2.0 * res.cost_trace[i], 0.0});
  }
  const SignalTable all = concatenate(data);
  MatrixXd ysim(all.samples(), model.num_outputs());
  Index at = 0;
  for (const auto& s : data) {
    ysim.middleRows(at, s.samples()) = simulate(model, s);
    at += s.samples();
  }
  rep.fit_percent = fit_percent(all.outputs(), ysim).mean();
  return rep;
}

}  // namespace nlid
