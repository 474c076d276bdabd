#include "nlid/nlarx.hpp"

#include "nlid/errors.hpp"
#include "nlid/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace nlid {

std::string to_string(MappingKind k) {
  switch (k) {
    case MappingKind::linear_in_regressors: return "linear_in_regressors";
    case MappingKind::sigmoid_network: return "sigmoid_network";
    case MappingKind::neural_network: return "neural_network";
  }
  return "linear_in_regressors";
}

MappingKind parse_mapping_kind(const std::string& text) {
  if (text == "linear_in_regressors" || text == "linear") return MappingKind::linear_in_regressors;
  if (text == "sigmoid_network" || text == "sigmoid") return MappingKind::sigmoid_network;
  if (text == "neural_network" || text == "neural") return MappingKind::neural_network;
  throw ConfigError("unknown mapping function '" + text + "'");
}

std::string to_string(Focus f) { return f == Focus::prediction ? "prediction" : "simulation"; }

Focus parse_focus(const std::string& text) {
  if (text == "prediction") return Focus::prediction;
  if (text == "simulation") return Focus::simulation;
  throw ConfigError("unknown focus '" + text + "'");
}

std::string to_string(SearchMethod s) { return s == SearchMethod::lm ? "lm" : "first_order"; }

SearchMethod parse_search(const std::string& text) {
  if (text == "lm") return SearchMethod::lm;
  if (text == "first_order") return SearchMethod::first_order;
  throw ConfigError("unknown search method '" + text + "'");
}

std::string to_string(SparsityMeasure m) {
  switch (m) {
    case SparsityMeasure::l1: return "l1";
    case SparsityMeasure::l0: return "l0";
    case SparsityMeasure::log_sum: return "log_sum";
  }
  return "l1";
}

SparsityMeasure parse_sparsity(const std::string& text) {
  if (text == "l1") return SparsityMeasure::l1;
  if (text == "l0") return SparsityMeasure::l0;
  if (text == "log_sum") return SparsityMeasure::log_sum;
  throw ConfigError("unknown sparsity measure '" + text + "'");
}

// ---------------------------------------------------------------- mapping

Index MappingFcn::parameter_count() const {
  Index n = theta.size() + 1;
  if (kind == MappingKind::sigmoid_network) n += a.size() + v.size() + c.size();
  if (kind == MappingKind::neural_network) n += net->parameter_count();
  return n;
}

VectorXd mapping_params(const MappingFcn& f) {
  VectorXd p(f.parameter_count());
  const Index r = f.theta.size();
  p.head(r) = f.theta;
  p(r) = f.offset;
  Index k = r + 1;
  if (f.kind == MappingKind::sigmoid_network) {
    p.segment(k, f.a.size()) = f.a;
    k += f.a.size();
    for (Index i = 0; i < f.v.rows(); ++i)
      for (Index j = 0; j < f.v.cols(); ++j) p(k++) = f.v(i, j);
    p.segment(k, f.c.size()) = f.c;
  } else if (f.kind == MappingKind::neural_network) {
    p.tail(p.size() - k) = get_params(*f.net);
  }
  return p;
}

void set_mapping_params(MappingFcn& f, const VectorXd& p) {
  if (p.size() != f.parameter_count()) {
    throw std::invalid_argument("mapping parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                                std::to_string(f.parameter_count()));
  }
  const Index r = f.theta.size();
  f.theta = p.head(r);
  f.offset = p(r);
  Index k = r + 1;
  if (f.kind == MappingKind::sigmoid_network) {
    f.a = p.segment(k, f.a.size());
    k += f.a.size();
    for (Index i = 0; i < f.v.rows(); ++i)
      for (Index j = 0; j < f.v.cols(); ++j) f.v(i, j) = p(k++);
    f.c = p.segment(k, f.c.size());
  } else if (f.kind == MappingKind::neural_network) {
    set_params(*f.net, p.tail(p.size() - k));
  }
}

VectorXd evaluate_mapping(const MappingFcn& f, const MatrixXd& z) {
  VectorXd out = (z.transpose() * f.theta).array() + f.offset;
  if (f.kind == MappingKind::sigmoid_network) {
    const MatrixXd pre = (f.v * z).colwise() + f.c;
    const MatrixXd h = pre.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    out += h.transpose() * f.a;
  } else if (f.kind == MappingKind::neural_network) {
    out += forward_batch(*f.net, z).row(0).transpose();
  }
  return out;
}

std::vector<Index> regressor_group(const MappingFcn& f, Index j) {
  const Index r = f.theta.size();
  std::vector<Index> g{j};
  if (f.kind == MappingKind::sigmoid_network) {
    const Index base = r + 1 + f.a.size();
    for (Index k = 0; k < f.v.rows(); ++k) g.push_back(base + k * r + j);
  } else if (f.kind == MappingKind::neural_network) {
    const Index base = r + 1;
    for (Index k = 0; k < f.net->layers[0].weights.rows(); ++k) g.push_back(base + k * r + j);
  }
  return g;
}

namespace {

struct MappingLeaves {
  std::vector<ad::Var> leaves;  // flat parameter order, row-major
  std::optional<MlpBinding> net;
};

MappingLeaves bind_mapping(const MappingFcn& f, ad::Tape& tape) {
  MappingLeaves b;
  b.leaves.push_back(tape.variable(MatrixXd(f.theta.transpose())));
  b.leaves.push_back(tape.variable(f.offset));
  if (f.kind == MappingKind::sigmoid_network) {
    b.leaves.push_back(tape.variable(MatrixXd(f.a.transpose())));
    b.leaves.push_back(tape.variable(f.v));
    b.leaves.push_back(tape.variable(MatrixXd(f.c)));
  } else if (f.kind == MappingKind::neural_network) {
    b.net = bind(*f.net, tape);
    for (const auto& v : b.net->leaves()) b.leaves.push_back(v);
  }
  return b;
}

// z is R x M; result 1 x M.
ad::Var record_mapping(const MappingFcn& f, const MappingLeaves& b, ad::Var z) {
  ad::Var out = ad::matmul(b.leaves[0], z) + b.leaves[1];
  if (f.kind == MappingKind::sigmoid_network) {
    out = out + ad::matmul(b.leaves[2], ad::sigmoid(ad::matmul(b.leaves[3], z) + b.leaves[4]));
  } else if (f.kind == MappingKind::neural_network) {
    out = out + forward(*b.net, z);
  }
  return out;
}

void check_layout(const NlarxModel& m, const SignalTable& data) {
  if (data.input_names() != m.input_names || data.output_names() != std::vector<std::string>{m.output_name}) {
    std::string want = "inputs [";
    for (std::size_t i = 0; i < m.input_names.size(); ++i) want += (i ? "," : "") + m.input_names[i];
    want += "], output " + m.output_name;
    throw DataError("data channels do not match the NLARX model (" + want + ")");
  }
}

// Normalized regressors, R x M.
MatrixXd normalized_regressors(const NlarxModel& m, const MatrixXd& values) {
  return m.regressor_scaling.apply(values).transpose();
}

struct SegmentEval {
  VectorXd residual;  // normalized model output minus normalized measurement
  MatrixXd jacobian;  // d residual / d mapping params
  VectorXd model;     // physical model output, rows t >= max_lag
  VectorXd measured;
};

SegmentEval eval_prediction(const NlarxModel& m, const SignalTable& seg, bool want_jacobian) {
  const auto rm = build_matrix(m.regressors, seg);
  const MatrixXd z = normalized_regressors(m, rm.values);
  SegmentEval e;
  e.measured = seg.outputs().col(0).tail(rm.values.rows());
  const double mu = m.output_scaling.mean(0), sd = m.output_scaling.scale(0);
  const VectorXd target = (e.measured.array() - mu) / sd;
  VectorXd f;
  if (want_jacobian) {
    ad::Tape tape;
    const auto b = bind_mapping(m.mapping, tape);
    const ad::Var out = record_mapping(m.mapping, b, tape.constant(z));
    e.jacobian = tape.jacobian(out, b.leaves, ad::Flatten::row_major);
    f = out.value().row(0).transpose();
  } else {
    f = evaluate_mapping(m.mapping, z);
  }
  e.residual = f - target;
  e.model = f.array() * sd + mu;
  return e;
}

[[noreturn]] void diverged(Index t) {
  throw NumericalError("NLARX simulation diverged at time index " + std::to_string(t));
}

SegmentEval eval_simulation(const NlarxModel& m, const SignalTable& seg, bool want_jacobian) {
  const auto rm = build_matrix(m.regressors, seg);
  const Index lag = rm.row_offset;
  const Index n = seg.samples();
  const Index rows = n - lag;
  const Index nreg = m.regressor_count();
  const double mu = m.output_scaling.mean(0), sd = m.output_scaling.scale(0);
  const VectorXd& rmu = m.regressor_scaling.mean;
  const VectorXd& rsd = m.regressor_scaling.scale;

  int ylag = 0;
  std::vector<char> uses_y(static_cast<std::size_t>(nreg));
  for (Index j = 0; j < nreg; ++j) {
    const auto& r = m.regressors[static_cast<std::size_t>(j)];
    uses_y[static_cast<std::size_t>(j)] = r.uses_output();
    for (const auto& a : r.args)
      if (a.is_output) ylag = std::max(ylag, a.lag);
  }

  VectorXd yhat = seg.outputs().col(0);  // first `lag` entries stay measured
  const Index np = m.mapping.parameter_count();
  MatrixXd sens;  // d yhat_n(t) / d params, row t - lag
  if (want_jacobian) sens.setZero(rows, np);

  VectorXd z(nreg);
  for (Index t = lag; t < n; ++t) {
    const Index k = t - lag;
    auto get = [&](const LaggedVariable& a) {
      return a.is_output ? yhat(t - a.lag) : seg.inputs()(t - a.lag, a.channel);
    };
    if (!want_jacobian) {
      for (Index j = 0; j < nreg; ++j) {
        const double r = uses_y[static_cast<std::size_t>(j)]
                             ? evaluate<double>(m.regressors[static_cast<std::size_t>(j)], get)
                             : rm.values(k, j);
        z(j) = (r - rmu(j)) / rsd(j);
      }
      const double f = evaluate_mapping(m.mapping, z)(0);
      if (!std::isfinite(f)) diverged(t);
      yhat(t) = f * sd + mu;
      if (!std::isfinite(yhat(t))) diverged(t);
      continue;
    }
    ad::Tape tape;
    const auto b = bind_mapping(m.mapping, tape);
    std::vector<ad::Var> past(static_cast<std::size_t>(ylag));
    for (int l = 1; l <= ylag; ++l) past[static_cast<std::size_t>(l - 1)] = tape.variable(yhat(t - l));
    std::vector<ad::Var> parts(static_cast<std::size_t>(nreg));
    for (Index j = 0; j < nreg; ++j) {
      const auto& reg = m.regressors[static_cast<std::size_t>(j)];
      parts[static_cast<std::size_t>(j)] =
          uses_y[static_cast<std::size_t>(j)]
              ? evaluate<ad::Var>(reg,
                                  [&](const LaggedVariable& a) {
                                    return a.is_output ? past[static_cast<std::size_t>(a.lag - 1)]
                                                       : tape.constant(seg.inputs()(t - a.lag, a.channel));
                                  })
              : tape.constant(rm.values(k, j));
    }
    const ad::Var zr = ad::concat(parts);
    const ad::Var zn = ad::mul(ad::sub(zr, tape.constant(MatrixXd(rmu))),
                               tape.constant(MatrixXd(rsd.cwiseInverse())));
    const ad::Var f = record_mapping(m.mapping, b, zn);
    const double fv = f.scalar();
    if (!std::isfinite(fv) || !std::isfinite(fv * sd + mu)) diverged(t);
    yhat(t) = fv * sd + mu;

    std::vector<ad::Var> wrt = b.leaves;
    wrt.insert(wrt.end(), past.begin(), past.end());
    const auto adj = tape.gradient(f, wrt);
    const std::vector<MatrixXd> padj(adj.begin(), adj.begin() + static_cast<std::ptrdiff_t>(b.leaves.size()));
    sens.row(k) = flatten_gradient(padj).transpose();
    for (int l = 1; l <= ylag; ++l) {
      const double dy = adj[b.leaves.size() + static_cast<std::size_t>(l - 1)](0, 0);
      if (dy != 0.0 && t - l >= lag) sens.row(k) += (dy * sd) * sens.row(k - l);
    }
    if (!sens.row(k).allFinite()) diverged(t);
  }
  SegmentEval e;
  e.model = yhat.tail(rows);
  e.measured = seg.outputs().col(0).tail(rows);
  e.residual = (e.model - e.measured) / sd;
  if (want_jacobian) e.jacobian = std::move(sens);
  return e;
}

SegmentEval eval_segment(const NlarxModel& m, const SignalTable& seg, Focus focus, bool want_jacobian) {
  return focus == Focus::prediction ? eval_prediction(m, seg, want_jacobian)
                                    : eval_simulation(m, seg, want_jacobian);
}

Index total_rows(const NlarxModel& m, const SegmentSet& data) {
  Index rows = 0;
  for (const auto& s : data) rows += s.samples() - m.max_lag();
  return rows;
}

struct Stacked {
  VectorXd residual;
  MatrixXd jacobian;
  VectorXd model;
  VectorXd measured;
};

Stacked eval_all(const NlarxModel& m, const SegmentSet& data, Focus focus, bool want_jacobian) {
  const Index rows = total_rows(m, data);
  Stacked s;
  s.residual.resize(rows);
  s.model.resize(rows);
  s.measured.resize(rows);
  if (want_jacobian) s.jacobian.resize(rows, m.mapping.parameter_count());
  Index at = 0;
  for (const auto& seg : data) {
    auto e = eval_segment(m, seg, focus, want_jacobian);
    const Index r = e.residual.size();
    s.residual.segment(at, r) = e.residual;
    s.model.segment(at, r) = e.model;
    s.measured.segment(at, r) = e.measured;
    if (want_jacobian) s.jacobian.middleRows(at, r) = e.jacobian;
    at += r;
  }
  return s;
}

std::vector<char> free_mask(const NlarxModel& m) {
  std::vector<char> free(static_cast<std::size_t>(m.mapping.parameter_count()), 1);
  for (Index j = 0; j < m.regressor_count(); ++j) {
    if (m.active[static_cast<std::size_t>(j)]) continue;
    for (Index i : regressor_group(m.mapping, j)) free[static_cast<std::size_t>(i)] = 0;
  }
  return free;
}

std::vector<Index> free_indices(const NlarxModel& m) {
  const auto mask = free_mask(m);
  std::vector<Index> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(static_cast<Index>(i));
  return idx;
}

void zero_inactive(NlarxModel& m) {
  VectorXd p = mapping_params(m.mapping);
  const auto mask = free_mask(m);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) p(static_cast<Index>(i)) = 0.0;
  set_mapping_params(m.mapping, p);
}

void fit_scaling(NlarxModel& m, const SegmentSet& data, NormalizationMethod method) {
  const Index nreg = m.regressor_count();
  const Index rows = total_rows(m, data);
  MatrixXd values(rows, nreg);
  MatrixXd y(rows, 1);
  Index at = 0;
  for (const auto& seg : data) {
    const auto rm = build_matrix(m.regressors, seg);
    values.middleRows(at, rm.values.rows()) = rm.values;
    y.middleRows(at, rm.values.rows()) = seg.outputs().col(0).tail(rm.values.rows());
    at += rm.values.rows();
  }
  m.normalization = method;
  m.regressor_scaling = ColumnScaling::identity(nreg);
  m.output_scaling = ColumnScaling::identity(1);
  const bool centre = method == NormalizationMethod::zscore || m.mapping.kind != MappingKind::linear_in_regressors;
  if (centre) m.regressor_scaling.mean = values.colwise().mean().transpose();
  if (method == NormalizationMethod::zscore) {
    for (Index j = 0; j < nreg; ++j) {
      const double sd = std::sqrt((values.col(j).array() - m.regressor_scaling.mean(j)).square().mean());
      // A constant regressor keeps unit scale; it then collides with the offset.
      if (sd > 1e-14 * std::max(1.0, std::abs(m.regressor_scaling.mean(j)))) m.regressor_scaling.scale(j) = sd;
    }
    m.output_scaling = ColumnScaling::fit(y, {m.output_name});
  }
}

// Least squares for theta (active columns) and the offset on prediction
// residuals, holding any nonlinear part fixed.
void solve_linear_part(NlarxModel& m, const SegmentSet& data) {
  MappingFcn lin = m.mapping;
  VectorXd p = mapping_params(lin);
  const Index nreg = m.regressor_count();
  p.head(nreg + 1).setZero();
  set_mapping_params(lin, p);
  NlarxModel probe = m;
  probe.mapping = lin;

  const Index rows = total_rows(m, data);
  std::vector<Index> cols;
  for (Index j = 0; j < nreg; ++j)
    if (m.active[static_cast<std::size_t>(j)]) cols.push_back(j);
  MatrixXd a(rows, static_cast<Index>(cols.size()) + 1);
  VectorXd b(rows);
  Index at = 0;
  for (const auto& seg : data) {
    const auto rm = build_matrix(m.regressors, seg);
    const MatrixXd z = normalized_regressors(m, rm.values);
    const Index r = rm.values.rows();
    for (std::size_t c = 0; c < cols.size(); ++c) a.block(at, static_cast<Index>(c), r, 1) = z.row(cols[c]).transpose();
    a.block(at, static_cast<Index>(cols.size()), r, 1).setOnes();
    // Target minus the nonlinear part (theta, d zeroed in the probe).
    b.segment(at, r) = -eval_prediction(probe, seg, false).residual;
    at += r;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
  if (qr.rank() < a.cols()) {
    std::string names;
    for (Index k = qr.rank(); k < a.cols(); ++k) {
      const Index c = qr.colsPermutation().indices()(k);
      names += (names.empty() ? "" : ", ") +
               (c < static_cast<Index>(cols.size()) ? m.regressors[static_cast<std::size_t>(cols[static_cast<std::size_t>(c)])].name
                                                   : std::string("offset"));
    }
    throw DataError("regressor matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                    std::to_string(a.cols()) + "); dependent columns: " + names);
  }
  const VectorXd x = qr.solve(b);
  p = mapping_params(m.mapping);
  p.head(nreg).setZero();
  for (std::size_t c = 0; c < cols.size(); ++c) p(cols[c]) = x(static_cast<Index>(c));
  p(nreg) = x(x.size() - 1);
  set_mapping_params(m.mapping, p);
}

double mean_square(const VectorXd& r) { return r.squaredNorm() / static_cast<double>(r.size()); }

VectorXd gather(const VectorXd& v, const std::vector<Index>& idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
  return out;
}

MatrixXd gather_cols(const MatrixXd& m, const std::vector<Index>& idx) {
  MatrixXd out(m.rows(), static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Index>(i)) = m.col(idx[i]);
  return out;
}

void scatter(VectorXd& full, const VectorXd& part, const std::vector<Index>& idx) {
  for (std::size_t i = 0; i < idx.size(); ++i) full(idx[i]) = part(static_cast<Index>(i));
}

void run_lm(NlarxModel& m, const SegmentSet& data, Focus focus, const LMOptions& lm, NlarxTrainingReport& rep) {
  const auto idx = free_indices(m);
  const VectorXd base = mapping_params(m.mapping);
  NlarxModel work = m;
  auto load = [&](const VectorXd& x) {
    VectorXd p = base;
    scatter(p, x, idx);
    set_mapping_params(work.mapping, p);
  };
  auto residual = [&](const VectorXd& x) {
    load(x);
    return eval_all(work, data, focus, false).residual;
  };
  auto jacobian = [&](const VectorXd& x) {
    load(x);
    return gather_cols(eval_all(work, data, focus, true).jacobian, idx);
  };
  const auto res = minimize_lm(residual, jacobian, gather(base, idx), lm);
  VectorXd p = base;
  scatter(p, res.x, idx);
  set_mapping_params(m.mapping, p);
  const double rows = static_cast<double>(total_rows(m, data));
  const int offset = static_cast<int>(rep.trace.size());
  for (std::size_t i = 0; i < res.cost_trace.size(); ++i) {
    if (offset > 0 && i == 0) continue;
    rep.trace.push_back({offset + static_cast<int>(i), 2.0 * res.cost_trace[i] / rows, 0.0});
  }
  rep.iterations += res.iterations;
  rep.stop_reason = to_string(res.reason);
}

void run_first_order(NlarxModel& m, const SegmentSet& data, Focus focus, const TrainingOptions& opt,
                     NlarxTrainingReport& rep) {
  const auto idx = free_indices(m);
  VectorXd p = mapping_params(m.mapping);
  auto full = [&](const VectorXd& params, VectorXd* grad) {
    NlarxModel work = m;
    set_mapping_params(work.mapping, params);
    const auto s = eval_all(work, data, focus, grad != nullptr);
    if (grad) *grad = gather(VectorXd(2.0 / static_cast<double>(s.residual.size()) * s.jacobian.transpose() * s.residual), idx);
    return mean_square(s.residual);
  };
  if (opt.solver == Solver::lbfgs) {
    LbfgsOptions lo;
    lo.memory = opt.lbfgs_memory;
    lo.max_iter = opt.max_epochs;
    lo.grad_tolerance = opt.grad_tolerance;
    auto objective = [&](const VectorXd& x, VectorXd& g) {
      VectorXd q = p;
      scatter(q, x, idx);
      try {
        return full(q, &g);
      } catch (const NumericalError&) {
        g = VectorXd::Zero(x.size());
        return std::numeric_limits<double>::infinity();
      }
    };
    const auto res = minimize_lbfgs(objective, gather(p, idx), lo);
    scatter(p, res.x, idx);
    set_mapping_params(m.mapping, p);
    for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
      rep.trace.push_back({static_cast<int>(i), res.loss_trace[i], res.grad_norm_trace[i]});
    }
    rep.iterations = res.iterations;
    rep.stop_reason = to_string(res.reason);
    return;
  }
  FirstOrderState state;
  VectorXd g;
  rep.trace.push_back({0, full(p, &g), g.norm()});
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    for (const auto& seg : data) {
      NlarxModel work = m;
      set_mapping_params(work.mapping, p);
      const auto e = eval_segment(work, seg, focus, true);
      const VectorXd gs = gather(VectorXd(2.0 / static_cast<double>(e.residual.size()) * e.jacobian.transpose() * e.residual), idx);
      VectorXd x = gather(p, idx);
      step_first_order(state, x, gs, opt);
      scatter(p, x, idx);
    }
    double loss = 0.0;
    try {
      loss = full(p, &g);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("NLARX training diverged at epoch ") + std::to_string(epoch) + ": " + e.what());
    }
    rep.trace.push_back({epoch, loss, g.norm()});
  }
  set_mapping_params(m.mapping, p);
  rep.iterations = opt.max_epochs;
  rep.stop_reason = "max_epochs";
}

void validate_data(const NlarxModel& m, const SegmentSet& data) {
  if (data.empty()) throw DataError("NLARX training needs at least one segment");
  for (const auto& seg : data) {
    check_layout(m, seg);
    if (seg.samples() <= m.max_lag()) {
      throw DataError("segment has " + std::to_string(seg.samples()) + " samples, regressors need more than " +
                      std::to_string(m.max_lag()));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- model

Index NlarxModel::max_lag() const { return nlid::max_lag(regressors); }

std::vector<std::string> NlarxModel::regressor_names() const {
  std::vector<std::string> out;
  for (const auto& r : regressors) out.push_back(r.name);
  return out;
}

Index NlarxModel::active_count() const { return static_cast<Index>(std::count(active.begin(), active.end(), true)); }

NlarxModel create_nlarx(const std::vector<RegressorSpec>& specs, const std::vector<std::string>& input_names,
                        const std::string& output_name, const MappingSpec& spec) {
  return create_nlarx(expand_regressors(specs, input_names, {output_name}), input_names, output_name, spec);
}

NlarxModel create_nlarx(std::vector<Regressor> regressors, const std::vector<std::string>& input_names,
                        const std::string& output_name, const MappingSpec& spec) {
  NlarxModel m;
  m.output_name = output_name;
  m.input_names = input_names;
  m.regressors = std::move(regressors);
  for (std::size_t i = 0; i < m.regressors.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (m.regressors[i].name == m.regressors[j].name) {
        throw ConfigError("duplicate regressor '" + m.regressors[i].name + "'");
      }
    }
  }
  if (m.regressors.empty()) throw ConfigError("NLARX model needs at least one regressor");
  const Index nreg = m.regressor_count();
  MappingFcn& f = m.mapping;
  f.kind = spec.kind;
  f.theta = VectorXd::Zero(nreg);
  if (spec.kind == MappingKind::sigmoid_network) {
    if (spec.units < 1) throw ConfigError("sigmoid network needs at least one unit");
    CounterRng rng(spec.seed);
    f.v.resize(spec.units, nreg);
    for (Index i = 0; i < spec.units; ++i)
      for (Index j = 0; j < nreg; ++j) f.v(i, j) = rng.normal() / std::sqrt(static_cast<double>(nreg));
    f.c.resize(spec.units);
    for (Index i = 0; i < spec.units; ++i) f.c(i) = rng.uniform(-1.0, 1.0);
    f.a = VectorXd::Zero(spec.units);
  } else if (spec.kind == MappingKind::neural_network) {
    if (spec.hidden.empty()) throw ConfigError("neural network mapping needs at least one hidden layer");
    f.net = create_mlp(nreg, 1, spec.hidden, spec.activation, {WeightsInit::glorot, spec.seed});
    // Output layer starts at zero so training begins from the linear fit.
    f.net->layers.back().weights.setZero();
    f.net->layers.back().bias.setZero();
  }
  m.regressor_scaling = ColumnScaling::identity(nreg);
  m.output_scaling = ColumnScaling::identity(1);
  m.active.assign(static_cast<std::size_t>(nreg), true);
  return m;
}

NlarxPrediction predict_one_step(const NlarxModel& model, const SignalTable& data) {
  check_layout(model, data);
  auto e = eval_prediction(model, data, false);
  return {std::move(e.model), model.max_lag()};
}

VectorXd simulate(const NlarxModel& model, const SignalTable& data) {
  check_layout(model, data);
  auto e = eval_simulation(model, data, false);
  VectorXd y = data.outputs().col(0);
  y.tail(e.model.size()) = e.model;
  return y;
}

double nlarx_loss(const NlarxModel& model, const SegmentSet& data, Focus focus, VectorXd* gradient) {
  validate_data(model, data);
  const auto s = eval_all(model, data, focus, gradient != nullptr);
  if (gradient) *gradient = 2.0 / static_cast<double>(s.residual.size()) * s.jacobian.transpose() * s.residual;
  return mean_square(s.residual);
}

NlarxTrainingReport train_nlarx(NlarxModel& model, const SegmentSet& data, const NlarxTrainingOptions& options) {
  validate_data(model, data);
  if (options.search == SearchMethod::first_order) options.first_order.validate();
  if (model.active_count() == 0) throw ConfigError("NLARX model has no active regressors");
  fit_scaling(model, data, options.normalization);
  zero_inactive(model);

  NlarxTrainingReport rep;
  rep.initial_cost = mean_square(eval_all(model, data, options.focus, false).residual);
  const bool linear = model.mapping.kind == MappingKind::linear_in_regressors;

  solve_linear_part(model, data);
  if (linear && options.focus == Focus::prediction) {
    rep.stop_reason = "least_squares";
    rep.iterations = 1;
    rep.trace.push_back({0, rep.initial_cost, 0.0});
  } else if (options.search == SearchMethod::lm) {
    if (!linear) run_lm(model, data, Focus::prediction, options.lm, rep);
    if (options.focus == Focus::simulation) run_lm(model, data, Focus::simulation, options.lm, rep);
  } else {
    run_first_order(model, data, options.focus, options.first_order, rep);
  }
  const auto s = eval_all(model, data, options.focus, false);
  rep.final_cost = mean_square(s.residual);
  if (rep.trace.empty() || rep.trace.back().loss != rep.final_cost) {
    rep.trace.push_back({static_cast<int>(rep.trace.size()), rep.final_cost, 0.0});
  }
  rep.fit_percent = fit_percent(s.measured, s.model)(0);
  return rep;
}

NlarxTrainingReport train_nlarx(NlarxModel& model, const SignalTable& data, const NlarxTrainingOptions& options) {
  return train_nlarx(model, SegmentSet{data}, options);
}

// ---------------------------------------------------------------- sparsity

VectorXd prox(const VectorXd& group, SparsityMeasure measure, double lambda, double step, double weight) {
  const double t = lambda * step * weight;
  const double s = group.norm();
  if (measure == SparsityMeasure::l0) {
    return s <= std::sqrt(2.0 * t) ? VectorXd::Zero(group.size()) : group;
  }
  if (s <= t) return VectorXd::Zero(group.size());
  return group * (1.0 - t / s);
}

namespace {

double power_iteration(const MatrixXd& j) {
  VectorXd v = VectorXd::Ones(j.cols()).normalized();
  double est = 0.0;
  for (int it = 0; it < 1000; ++it) {
    VectorXd w = j.transpose() * (j * v);
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    if (std::abs(next - est) <= 1e-12 * next) return next;
    est = next;
  }
  return est;
}

}  // namespace

SparsificationReport sparsify(NlarxModel& model, const SegmentSet& data, const SparsificationOptions& options,
                              const NlarxTrainingOptions& estimation) {
  if (!(options.lambda >= 0.0) || !std::isfinite(options.lambda)) throw ConfigError("lambda must be >= 0");
  if (options.max_outer_iter < 1) throw ConfigError("max_outer_iter must be >= 1");
  if (options.step < 0.0) throw ConfigError("step must be >= 0");
  if (options.measure == SparsityMeasure::log_sum && !(options.log_sum_epsilon > 0.0)) {
    throw ConfigError("log_sum epsilon must be > 0");
  }
  const Index nreg = model.regressor_count();
  std::vector<char> kept(static_cast<std::size_t>(nreg), 0);
  for (const auto& name : options.keep) {
    const auto names = model.regressor_names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("cannot keep unknown regressor '" + name + "'");
    kept[static_cast<std::size_t>(it - names.begin())] = 1;
  }

  train_nlarx(model, data, estimation);
  const Focus focus = estimation.focus;
  const auto idx_free = free_mask(model);
  std::vector<std::vector<Index>> groups;
  for (Index j = 0; j < nreg; ++j) groups.push_back(regressor_group(model.mapping, j));

  NlarxModel work = model;
  auto loss = [&](const VectorXd& p, VectorXd* grad) {
    set_mapping_params(work.mapping, p);
    const auto s = eval_all(work, data, focus, grad != nullptr);
    if (grad) {
      *grad = 2.0 / static_cast<double>(s.residual.size()) * s.jacobian.transpose() * s.residual;
      for (std::size_t i = 0; i < idx_free.size(); ++i)
        if (!idx_free[i]) (*grad)(static_cast<Index>(i)) = 0.0;
    }
    return mean_square(s.residual);
  };

  VectorXd p = mapping_params(model.mapping);
  const bool fixed_step = options.step > 0.0 ||
                          (model.mapping.kind == MappingKind::linear_in_regressors && focus == Focus::prediction);
  double step = options.step;
  if (step == 0.0 && fixed_step) {
    set_mapping_params(work.mapping, p);
    MatrixXd j = eval_all(work, data, focus, true).jacobian;
    for (std::size_t i = 0; i < idx_free.size(); ++i)
      if (!idx_free[i]) j.col(static_cast<Index>(i)).setZero();
    const double lhat = 2.0 / static_cast<double>(j.rows()) * power_iteration(j);
    step = lhat > 0.0 ? 1.0 / lhat : 1.0;
  }
  if (step == 0.0) step = 1.0;

  auto group_norm = [&](const VectorXd& q, Index j) {
    double s = 0.0;
    for (Index i : groups[static_cast<std::size_t>(j)]) s += q(i) * q(i);
    return std::sqrt(s);
  };
  auto apply_prox = [&](VectorXd& q, double eta, const VectorXd& weights) {
    const SparsityMeasure kind = options.measure == SparsityMeasure::l0 ? SparsityMeasure::l0 : SparsityMeasure::l1;
    for (Index j = 0; j < nreg; ++j) {
      if (kept[static_cast<std::size_t>(j)] || !model.active[static_cast<std::size_t>(j)]) continue;
      const auto& g = groups[static_cast<std::size_t>(j)];
      VectorXd v(static_cast<Index>(g.size()));
      for (std::size_t i = 0; i < g.size(); ++i) v(static_cast<Index>(i)) = q(g[i]);
      v = prox(v, kind, options.lambda, eta, weights(j));
      for (std::size_t i = 0; i < g.size(); ++i) q(g[i]) = v(static_cast<Index>(i));
    }
  };

  SparsificationReport rep;
  rep.lambda = options.lambda;
  const int rounds = options.measure == SparsityMeasure::log_sum ? std::max(1, options.reweight_rounds) : 1;
  for (int round = 0; round < rounds; ++round) {
    VectorXd weights = VectorXd::Ones(nreg);
    if (options.measure == SparsityMeasure::log_sum) {
      for (Index j = 0; j < nreg; ++j) weights(j) = 1.0 / (group_norm(p, j) + options.log_sum_epsilon);
    }
    for (int it = 0; it < options.max_outer_iter; ++it) {
      ++rep.iterations;
      VectorXd g;
      const double f0 = loss(p, &g);
      VectorXd q;
      if (fixed_step) {
        q = p - step * g;
        apply_prox(q, step, weights);
      } else {
        // Backtracking on the proximal-gradient sufficient-decrease condition.
        double eta = std::min(1.0, 2.0 * step);
        for (int h = 0; h < 60; ++h, eta *= 0.5) {
          q = p - eta * g;
          apply_prox(q, eta, weights);
          const VectorXd d = q - p;
          double fq = std::numeric_limits<double>::infinity();
          try {
            fq = loss(q, nullptr);
          } catch (const NumericalError&) {
          }
          if (fq <= f0 + g.dot(d) + d.squaredNorm() / (2.0 * eta)) break;
        }
        step = eta;
      }
      const double delta = (q - p).lpNorm<Eigen::Infinity>();
      p = std::move(q);
      if (delta <= options.tolerance * std::max(1.0, p.lpNorm<Eigen::Infinity>())) break;
    }
  }

  rep.names = model.regressor_names();
  rep.group_norms.resize(nreg);
  rep.active.assign(static_cast<std::size_t>(nreg), false);
  for (Index j = 0; j < nreg; ++j) {
    rep.group_norms(j) = group_norm(p, j);
    rep.active[static_cast<std::size_t>(j)] =
        model.active[static_cast<std::size_t>(j)] &&
        (kept[static_cast<std::size_t>(j)] || rep.group_norms(j) > options.zero_tolerance);
  }
  if (std::none_of(rep.active.begin(), rep.active.end(), [](bool b) { return b; })) {
    throw ConfigError("sparsification eliminated every regressor (lambda " + format_number(options.lambda) +
                      " is too large)");
  }
  set_mapping_params(model.mapping, p);
  model.active = rep.active;
  train_nlarx(model, data, estimation);
  return rep;
}

}  // namespace nlid
