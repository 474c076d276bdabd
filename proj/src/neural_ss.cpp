#include "nlid/neural_ss.hpp"

#include "nlid/errors.hpp"
#include "nlid/pchip.hpp"

#include <cmath>
#include <memory>

namespace nlid {

NeuralStateSpaceModel create_nss(Index nx, Index nu, Index ny, double ts,
                                 std::optional<Index> latent_dim, const NssNetworkOptions& options) {
  if (nx < 1) throw ConfigError("nx must be >= 1");
  if (nu < 0) throw ConfigError("nu must be >= 0");
  if (ny < nx) throw ConfigError("ny must be >= nx (states are measured outputs)");
  if (!(ts >= 0.0) || !std::isfinite(ts)) throw ConfigError("Ts must be >= 0 (0 for continuous time)");
  if (latent_dim && *latent_dim < 1) throw ConfigError("latent_dim must be >= 1");

  NeuralStateSpaceModel m;
  m.nx = nx;
  m.nu = nu;
  m.ny = ny;
  m.ts = ts;
  m.latent_dim = latent_dim;
  m.time_invariant = options.time_invariant;
  m.normalization = NormalizationState::identity(nu, ny);
  const Index t_in = options.time_invariant ? 0 : 1;
  const Index nd = m.dynamic_dim();
  // Each network gets its own stream so that adding one does not reseed the others.
  InitSpec init{options.weights, options.seed};
  m.state_net = create_mlp(nd + nu + t_in, nd, options.state_hidden, options.state_activation, init);
  if (ny > nx) {
    init.seed = options.seed + 1;
    m.output_net =
        create_mlp(nx + nu + t_in, ny - nx, options.output_hidden, options.output_activation, init);
  }
  if (latent_dim) {
    init.seed = options.seed + 2;
    m.encoder = create_mlp(nx, nd, options.autoencoder_hidden, options.autoencoder_activation, init);
    init.seed = options.seed + 3;
    m.decoder = create_mlp(nd, nx, options.autoencoder_hidden, options.autoencoder_activation, init);
  }
  return m;
}

VectorXd nss_params(const NeuralStateSpaceModel& model) {
  std::vector<VectorXd> parts{get_params(model.state_net)};
  if (model.output_net) parts.push_back(get_params(*model.output_net));
  if (model.encoder) parts.push_back(get_params(*model.encoder));
  if (model.decoder) parts.push_back(get_params(*model.decoder));
  Index n = 0;
  for (const auto& p : parts) n += p.size();
  VectorXd out(n);
  Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

void set_nss_params(NeuralStateSpaceModel& model, const VectorXd& params) {
  std::vector<MLPNetwork*> nets{&model.state_net};
  if (model.output_net) nets.push_back(&*model.output_net);
  if (model.encoder) nets.push_back(&*model.encoder);
  if (model.decoder) nets.push_back(&*model.decoder);
  Index total = 0;
  for (auto* n : nets) total += n->parameter_count();
  if (params.size() != total) {
    throw DataError("parameter vector has " + std::to_string(params.size()) + " entries, model has " +
                    std::to_string(total));
  }
  Index at = 0;
  for (auto* n : nets) {
    const Index c = n->parameter_count();
    set_params(*n, params.segment(at, c));
    at += c;
  }
}

void NssTrainingOptions::validate() const {
  train.validate();
  if (ode_step < 0.0) throw ConfigError("ode_step must be positive");
  if (!(prediction_weight > 0.0)) throw ConfigError("prediction loss weight must be positive");
  if (!(reconstruction_weight >= 0.0)) throw ConfigError("reconstruction loss weight must be >= 0");
  if (batch_segments < 1) throw ConfigError("batch_segments must be >= 1");
}

namespace {

// Inputs of equal-length segments at fractional sample positions k + theta.
class InputSource {
 public:
  InputSource(std::vector<const SignalTable*> segs, const NeuralStateSpaceModel& model)
      : segs_(std::move(segs)), model_(model) {
    const auto& first = *segs_.front();
    modes_ = first.intersample();
    n_ = first.samples();
    for (const auto* s : segs_) {
      if (s->samples() != n_) throw std::logic_error("InputSource: unequal segment lengths");
    }
    bool any_pchip = false;
    for (auto m : modes_) any_pchip |= m == Intersample::pchip;
    if (any_pchip && n_ >= 2) {
      std::vector<double> grid(static_cast<std::size_t>(n_));
      for (Index k = 0; k < n_; ++k) grid[static_cast<std::size_t>(k)] = static_cast<double>(k);
      for (const auto* s : segs_) {
        std::vector<std::unique_ptr<Pchip>> per_channel;
        for (Index c = 0; c < s->num_inputs(); ++c) {
          if (modes_[static_cast<std::size_t>(c)] != Intersample::pchip) {
            per_channel.emplace_back();
            continue;
          }
          std::vector<double> v(static_cast<std::size_t>(n_));
          for (Index k = 0; k < n_; ++k) v[static_cast<std::size_t>(k)] = s->inputs()(k, c);
          per_channel.push_back(std::make_unique<Pchip>(grid, std::move(v)));
        }
        splines_.push_back(std::move(per_channel));
      }
    }
  }

  Index samples() const { return n_; }
  Index count() const { return static_cast<Index>(segs_.size()); }

  MatrixXd input(Index k, double theta) const {
    const Index nu = model_.nu;
    MatrixXd u(nu, count());
    for (Index s = 0; s < count(); ++s) {
      const auto& data = segs_[static_cast<std::size_t>(s)]->inputs();
      for (Index c = 0; c < nu; ++c) {
        const double a = data(k, c);
        if (theta == 0.0) {
          u(c, s) = a;
          continue;
        }
        switch (modes_[static_cast<std::size_t>(c)]) {
          case Intersample::zoh: u(c, s) = a; break;
          case Intersample::foh: u(c, s) = (1.0 - theta) * a + theta * data(k + 1, c); break;
          case Intersample::pchip:
            u(c, s) = theta == 1.0 ? data(k + 1, c)
                                   : (*splines_[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)])(
                                         static_cast<double>(k) + theta);
            break;
        }
      }
    }
    return u;
  }

  MatrixXd time(Index k, double theta) const {
    MatrixXd t(1, count());
    for (Index s = 0; s < count(); ++s) {
      const auto* seg = segs_[static_cast<std::size_t>(s)];
      const double abs_t = seg->start_time() + (static_cast<double>(k) + theta) * seg->ts();
      t(0, s) = (abs_t - model_.time_origin) / model_.time_span;
    }
    return t;
  }

  MatrixXd outputs(Index k) const {
    MatrixXd y(model_.ny, count());
    for (Index s = 0; s < count(); ++s) y.col(s) = segs_[static_cast<std::size_t>(s)]->outputs().row(k).transpose();
    return y;
  }

  double ts() const { return segs_.front()->ts(); }

 private:
  std::vector<const SignalTable*> segs_;
  const NeuralStateSpaceModel& model_;
  std::vector<Intersample> modes_;
  Index n_ = 0;
  std::vector<std::vector<std::unique_ptr<Pchip>>> splines_;
};

struct PlainBackend {
  using T = MatrixXd;
  const NeuralStateSpaceModel& m;

  T constant(const MatrixXd& v) const { return v; }
  T state(const T& x) const { return forward_batch(m.state_net, x); }
  T output(const T& x) const { return forward_batch(*m.output_net, x); }
  T encode(const T& x) const { return forward_batch(*m.encoder, x); }
  T decode(const T& x) const { return forward_batch(*m.decoder, x); }
  T add(const T& a, const T& b) const { return a + b; }
  T scale(const T& a, double k) const { return k * a; }
  T vcat(const std::vector<T>& parts) const {
    Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    T out(rows, parts.front().cols());
    Index at = 0;
    for (const auto& p : parts) {
      out.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
    return out;
  }
  bool finite(const T& v) const { return v.allFinite(); }
};

struct TapeBackend {
  using T = ad::Var;
  ad::Tape& tape;
  MlpBinding state_b, output_b, encoder_b, decoder_b;

  TapeBackend(ad::Tape& t, const NeuralStateSpaceModel& m) : tape(t) {
    state_b = bind(m.state_net, t);
    if (m.output_net) output_b = bind(*m.output_net, t);
    if (m.encoder) encoder_b = bind(*m.encoder, t);
    if (m.decoder) decoder_b = bind(*m.decoder, t);
  }
  std::vector<ad::Var> leaves() const {
    std::vector<ad::Var> out;
    for (const auto* b : {&state_b, &output_b, &encoder_b, &decoder_b}) {
      if (!b->net) continue;
      const auto l = b->leaves();
      out.insert(out.end(), l.begin(), l.end());
    }
    return out;
  }

  T constant(const MatrixXd& v) const { return tape.constant(v); }
  T state(const T& x) const { return forward(state_b, x); }
  T output(const T& x) const { return forward(output_b, x); }
  T encode(const T& x) const { return forward(encoder_b, x); }
  T decode(const T& x) const { return forward(decoder_b, x); }
  T add(const T& a, const T& b) const { return ad::add(a, b); }
  T scale(const T& a, double k) const { return ad::scale(a, k); }
  T vcat(const std::vector<T>& parts) const {
    std::vector<T> nonempty;
    for (const auto& p : parts) {
      if (p.rows() > 0) nonempty.push_back(p);
    }
    return nonempty.size() == 1 ? nonempty.front() : ad::concat(nonempty);
  }
  bool finite(const T& v) const { return v.value().allFinite(); }
};

struct RolloutResult {
  template <class T>
  struct Of {
    std::vector<T> states;   // nx x S per sample
    std::vector<T> outputs;  // ny x S per sample
  };
};

// Normalized-coordinate rollout from x0 (nx x S) over src.samples() samples.
// Stops early (returning fewer samples) when a state is not finite.
template <class B>
typename RolloutResult::Of<typename B::T> rollout(B& b, const NeuralStateSpaceModel& m,
                                                   const MatrixXd& x0, const InputSource& src,
                                                   int substeps) {
  using T = typename B::T;
  typename RolloutResult::Of<T> res;
  const Index n = src.samples();
  const bool latent = m.latent_dim.has_value();
  const bool tv = !m.time_invariant;

  auto net_input = [&](const T& z, Index k, double theta) {
    std::vector<T> parts{z};
    if (m.nu > 0) parts.push_back(b.constant(src.input(k, theta)));
    if (tv) parts.push_back(b.constant(src.time(k, theta)));
    return parts.size() == 1 ? z : b.vcat(parts);
  };
  auto f = [&](const T& z, Index k, double theta) { return b.state(net_input(z, k, theta)); };

  T z = b.constant(x0);
  if (latent) z = b.encode(z);
  for (Index k = 0; k < n; ++k) {
    const T x = latent ? b.decode(z) : z;
    if (!b.finite(x)) break;
    res.states.push_back(x);
    if (m.output_net) {
      res.outputs.push_back(b.vcat({x, b.output(net_input(x, k, 0.0))}));
    } else {
      res.outputs.push_back(x);
    }
    if (k + 1 == n) break;
    if (!m.continuous()) {
      z = f(z, k, 0.0);
      continue;
    }
    const double h = src.ts() / substeps;
    for (int j = 0; j < substeps; ++j) {
      const double th0 = static_cast<double>(j) / substeps;
      const double thm = (j + 0.5) / substeps;
      const double th1 = static_cast<double>(j + 1) / substeps;
      const T k1 = f(z, k, th0);
      const T k2 = f(b.add(z, b.scale(k1, 0.5 * h)), k, thm);
      const T k3 = f(b.add(z, b.scale(k2, 0.5 * h)), k, thm);
      const T k4 = f(b.add(z, b.scale(k3, h)), k, th1);
      const T incr = b.add(b.add(k1, b.scale(k2, 2.0)), b.add(b.scale(k3, 2.0), k4));
      z = b.add(z, b.scale(incr, h / 6.0));
    }
  }
  return res;
}

int substeps_for(double ts, double ode_step) {
  if (!(ode_step > 0.0)) throw ConfigError("continuous-time simulation needs a positive ode_step");
  if (ode_step > ts * (1.0 + 1e-12)) throw ConfigError("ode_step must not exceed the sample time");
  return std::max(1, static_cast<int>(std::ceil(ts / ode_step - 1e-9)));
}

MatrixXd first_states(const InputSource& src, Index nx) { return src.outputs(0).topRows(nx); }

struct LossParts {
  double pred_norm;  // divisor of the prediction term
  double rec_norm;
};

// w_p * sum(err) / pred_norm + w_r * sum(rec err) / rec_norm for one batch.
double batch_loss(const NeuralStateSpaceModel& m, const std::vector<const SignalTable*>& segs,
                  const NssTrainingOptions& opt, const LossParts& norms, int substeps,
                  VectorXd* grad) {
  const InputSource src(segs, m);
  const Index n = src.samples();
  const Index s_count = src.count();
  MatrixXd y_meas(m.ny, n * s_count);
  for (Index k = 0; k < n; ++k) y_meas.middleCols(k * s_count, s_count) = src.outputs(k);
  const bool mae = opt.train.loss == LossKind::mean_absolute_error;
  const bool with_rec = m.latent_dim && opt.reconstruction_weight > 0.0;

  if (!grad) {
    PlainBackend b{m};
    const auto r = rollout(b, m, first_states(src, m.nx), src, substeps);
    if (static_cast<Index>(r.outputs.size()) < n) return std::numeric_limits<double>::infinity();
    double pred = 0.0;
    for (Index k = 0; k < n; ++k) {
      const MatrixXd e = r.outputs[static_cast<std::size_t>(k)] - y_meas.middleCols(k * s_count, s_count);
      pred += mae ? e.cwiseAbs().sum() : e.squaredNorm();
    }
    double total = opt.prediction_weight * pred / norms.pred_norm;
    if (with_rec) {
      const MatrixXd x = y_meas.topRows(m.nx);
      const MatrixXd e = b.decode(b.encode(x)) - x;
      total += opt.reconstruction_weight * e.squaredNorm() / norms.rec_norm;
    }
    return total;
  }

  ad::Tape tape;
  TapeBackend b(tape, m);
  const auto r = rollout(b, m, first_states(src, m.nx), src, substeps);
  if (static_cast<Index>(r.outputs.size()) < n) return std::numeric_limits<double>::infinity();
  const ad::Var y_sim = r.outputs.size() == 1 ? r.outputs.front() : ad::hconcat(r.outputs);
  const ad::Var err = ad::sub(y_sim, tape.constant(y_meas));
  ad::Var total = ad::scale(ad::sum(mae ? ad::abs(err) : ad::square(err)),
                            opt.prediction_weight / norms.pred_norm);
  if (with_rec) {
    const ad::Var x = tape.constant(y_meas.topRows(m.nx));
    const ad::Var e = ad::sub(b.decode(b.encode(x)), x);
    total = ad::add(total, ad::scale(ad::sum(ad::square(e)), opt.reconstruction_weight / norms.rec_norm));
  }
  const double value = total.scalar();
  if (!std::isfinite(value)) return value;
  *grad = flatten_gradient(tape.gradient(total, b.leaves()));
  return value;
}

// Consecutive runs of equal-length segments, at most `limit` per batch.
std::vector<std::vector<const SignalTable*>> make_batches(const SegmentSet& segs, Index limit) {
  std::vector<std::vector<const SignalTable*>> out;
  for (const auto& s : segs) {
    if (out.empty() || static_cast<Index>(out.back().size()) >= limit ||
        out.back().front()->samples() != s.samples()) {
      out.emplace_back();
    }
    out.back().push_back(&s);
  }
  return out;
}

LossParts loss_norms(const NeuralStateSpaceModel& m, const SegmentSet& segs) {
  double samples = 0.0;
  for (const auto& s : segs) samples += static_cast<double>(s.samples());
  return {samples * static_cast<double>(m.ny), samples * static_cast<double>(m.nx)};
}

int model_substeps(const NeuralStateSpaceModel& m, double data_ts, double ode_step) {
  if (!m.continuous()) return 1;
  return substeps_for(data_ts, ode_step > 0.0 ? ode_step : m.ode_step);
}

void check_layout(const NeuralStateSpaceModel& m, const SignalTable& t) {
  if (t.num_inputs() != m.nu || t.num_outputs() != m.ny) {
    throw DataError("data has " + std::to_string(t.num_inputs()) + " inputs and " +
                    std::to_string(t.num_outputs()) + " outputs, model expects " + std::to_string(m.nu) +
                    " and " + std::to_string(m.ny));
  }
  if (!m.continuous() && std::abs(t.ts() - m.ts) > 1e-9 * m.ts) {
    throw DataError("data sample time " + std::to_string(t.ts()) + " differs from model Ts " +
                    std::to_string(m.ts));
  }
}

}  // namespace

double nss_loss(const NeuralStateSpaceModel& model, const SegmentSet& normalized,
                const NssTrainingOptions& options, VectorXd* gradient) {
  if (normalized.empty()) throw DataError("no training segments");
  const LossParts norms = loss_norms(model, normalized);
  const int substeps = model_substeps(model, normalized.front().ts(), options.ode_step);
  const auto batches = make_batches(normalized, static_cast<Index>(normalized.size()));
  double total = 0.0;
  if (gradient) *gradient = VectorXd::Zero(nss_params(model).size());
  VectorXd g;
  for (const auto& batch : batches) {
    total += batch_loss(model, batch, options, norms, substeps, gradient ? &g : nullptr);
    if (!std::isfinite(total)) return total;
    if (gradient) *gradient += g;
  }
  return total;
}

NssSimulation simulate(const NeuralStateSpaceModel& model, const SignalTable& data, const VectorXd& x0,
                       const NssSimulationOptions& options) {
  if (data.num_inputs() != model.nu) {
    throw DataError("data has " + std::to_string(data.num_inputs()) + " inputs, model expects " +
                    std::to_string(model.nu));
  }
  if (x0.size() != model.nx || !x0.allFinite()) throw DataError("x0 must be a finite vector of length nx");
  const int substeps = model_substeps(model, data.ts(), options.ode_step);
  // Only the inputs matter; outputs are placeholders holding x0.
  MatrixXd y = MatrixXd::Zero(data.samples(), model.ny);
  y.row(0).head(model.nx) = x0.transpose();
  const SignalTable physical(data.inputs(), y, data.ts(), data.start_time(), data.input_names(),
                             [&] {
                               std::vector<std::string> names;
                               for (Index i = 0; i < model.ny; ++i) names.push_back("__y" + std::to_string(i + 1));
                               return names;
                             }(),
                             data.intersample());
  const SignalTable norm = model.normalization.apply(physical);
  const InputSource src({&norm}, model);
  PlainBackend b{model};
  const auto r = rollout(b, model, first_states(src, model.nx), src, substeps);
  if (static_cast<Index>(r.states.size()) < data.samples()) {
    throw NumericalError("simulation diverged: non-finite state at step " + std::to_string(r.states.size()));
  }
  NssSimulation out;
  MatrixXd yn(data.samples(), model.ny);
  for (Index k = 0; k < data.samples(); ++k) yn.row(k) = r.outputs[static_cast<std::size_t>(k)].col(0).transpose();
  out.outputs = model.normalization.outputs.invert(yn);
  if (!out.outputs.allFinite()) throw NumericalError("simulation produced non-finite outputs");
  out.states = out.outputs.leftCols(model.nx);
  return out;
}

VectorXd step_physical(const NeuralStateSpaceModel& model, const VectorXd& x, const VectorXd& u, double t) {
  if (model.continuous()) throw ConfigError("step_physical needs a discrete-time model");
  if (x.size() != model.nx || u.size() != model.nu) throw DataError("state or input length mismatch");
  const auto& ys = model.normalization.outputs;
  const auto& us = model.normalization.inputs;
  VectorXd xn = (x - ys.mean.head(model.nx)).cwiseQuotient(ys.scale.head(model.nx));
  const VectorXd un = (u - us.mean).cwiseQuotient(us.scale);
  VectorXd z = model.encoder ? forward(*model.encoder, xn) : xn;
  VectorXd in(z.size() + model.nu + (model.time_invariant ? 0 : 1));
  in.head(z.size()) = z;
  in.segment(z.size(), model.nu) = un;
  if (!model.time_invariant) in(in.size() - 1) = (t - model.time_origin) / model.time_span;
  z = forward(model.state_net, in);
  xn = model.decoder ? forward(*model.decoder, z) : z;
  return xn.cwiseProduct(ys.scale.head(model.nx)) + ys.mean.head(model.nx);
}

NssTrainingReport train_nss(NeuralStateSpaceModel& model, const SegmentSet& data,
                            const NssTrainingOptions& options) {
  options.validate();
  if (data.empty()) throw DataError("no training segments");
  for (const auto& s : data) check_layout(model, s);
  NssTrainingReport report;
  if (options.train.max_epochs == 0) {
    report.stop_reason = "max_epochs";
    return report;
  }

  SegmentSet segs = data;
  if (options.input_intersample) {
    for (auto& s : segs) {
      s = s.with_intersample(std::vector<Intersample>(static_cast<std::size_t>(model.nu), *options.input_intersample));
    }
  }
  if (model.normalization.method == NormalizationMethod::none &&
      options.normalization == NormalizationMethod::zscore) {
    model.normalization = NormalizationState::fit(segs, NormalizationMethod::zscore);
  }
  if (model.continuous()) {
    const double step = options.ode_step > 0.0 ? options.ode_step : segs.front().ts();
    substeps_for(segs.front().ts(), step);
    model.ode_step = step;
  }
  if (!model.time_invariant) {
    const auto& first = segs.front();
    const auto& last = segs.back();
    model.time_origin = first.start_time();
    model.time_span = last.start_time() + static_cast<double>(last.samples()) * last.ts() - model.time_origin;
    if (!(model.time_span > 0.0)) model.time_span = 1.0;
  }
  SegmentSet norm;
  norm.reserve(segs.size());
  for (const auto& s : segs) norm.push_back(model.normalization.apply(s));

  const LossParts norms = loss_norms(model, norm);
  const int substeps = model_substeps(model, norm.front().ts(), 0.0);
  const auto full_loss = [&](const NeuralStateSpaceModel& m) {
    double total = 0.0;
    for (const auto& batch : make_batches(norm, static_cast<Index>(norm.size()))) {
      total += batch_loss(m, batch, options, norms, substeps, nullptr);
    }
    return total;
  };

  if (options.train.solver == Solver::lbfgs) {
    NeuralStateSpaceModel work = model;
    const Objective objective = [&](const VectorXd& p, VectorXd& g) {
      set_nss_params(work, p);
      g = VectorXd::Zero(p.size());
      double total = 0.0;
      VectorXd gb;
      for (const auto& batch : make_batches(norm, static_cast<Index>(norm.size()))) {
        const double v = batch_loss(work, batch, options, norms, substeps, &gb);
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        total += v;
        g += gb;
      }
      return total;
    };
    LbfgsOptions lo;
    lo.memory = options.train.lbfgs_memory;
    lo.max_iter = options.train.max_epochs;
    lo.grad_tolerance = options.train.grad_tolerance;
    const auto res = minimize_lbfgs(objective, nss_params(model), lo);
    set_nss_params(model, res.x);
    for (std::size_t i = 1; i < res.loss_trace.size(); ++i) {
      report.trace.push_back({static_cast<int>(i), res.loss_trace[i], res.grad_norm_trace[i]});
    }
    report.stop_reason = to_string(res.reason);
  } else {
    const auto batches = make_batches(norm, options.batch_segments);
    VectorXd params = nss_params(model);
    FirstOrderState state;
    VectorXd g;
    for (int epoch = 1; epoch <= options.train.max_epochs; ++epoch) {
      VectorXd g_sum = VectorXd::Zero(params.size());
      std::size_t seg_index = 0;
      for (const auto& batch : batches) {
        const double v = batch_loss(model, batch, options, norms, substeps, &g);
        if (!std::isfinite(v) || !g.allFinite()) {
          throw NumericalError("training diverged in segment " + std::to_string(seg_index) + " at epoch " +
                               std::to_string(epoch));
        }
        g_sum += g;
        step_first_order(state, params, g, options.train);
        set_nss_params(model, params);
        seg_index += batch.size();
      }
      const double loss = full_loss(model);
      if (!std::isfinite(loss)) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch));
      }
      report.trace.push_back({epoch, loss, g_sum.norm()});
    }
    report.stop_reason = "max_epochs";
  }

  // Fit of segment rollouts on the training data.
  MatrixXd y_all(0, model.ny), yhat_all(0, model.ny);
  for (const auto& s : norm) {
    const InputSource src({&s}, model);
    PlainBackend b{model};
    const auto r = rollout(b, model, first_states(src, model.nx), src, substeps);
    if (static_cast<Index>(r.outputs.size()) < s.samples()) continue;
    MatrixXd yh(s.samples(), model.ny);
    for (Index k = 0; k < s.samples(); ++k) yh.row(k) = r.outputs[static_cast<std::size_t>(k)].col(0).transpose();
    const Index at = y_all.rows();
    y_all.conservativeResize(at + s.samples(), Eigen::NoChange);
    yhat_all.conservativeResize(at + s.samples(), Eigen::NoChange);
    y_all.bottomRows(s.samples()) = s.outputs();
    yhat_all.bottomRows(s.samples()) = yh;
  }
  try {
    report.fit_percent = fit_percent(y_all, yhat_all);
  } catch (const DataError&) {
    report.fit_percent = VectorXd::Constant(model.ny, std::numeric_limits<double>::quiet_NaN());
  }
  return report;
}

NssTrainingReport train_nss(NeuralStateSpaceModel& model, const SignalTable& data,
                            const NssTrainingOptions& options) {
  return train_nss(model, SegmentSet{data}, options);
}

}  // namespace nlid
