#include "nlid/optim.hpp"

#include "nlid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace nlid {

std::string to_string(Solver s) {
  switch (s) {
    case Solver::adam: return "adam";
    case Solver::sgdm: return "sgdm";
    case Solver::lbfgs: return "lbfgs";
    case Solver::rmsprop: return "rmsprop";
  }
  return "adam";
}

Solver parse_solver(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "adam") return Solver::adam;
  if (t == "sgdm") return Solver::sgdm;
  if (t == "lbfgs") return Solver::lbfgs;
  if (t == "rmsprop") return Solver::rmsprop;
  throw ConfigError("unknown solver '" + text + "'");
}

std::string to_string(LossKind k) {
  return k == LossKind::mean_absolute_error ? "mean_absolute_error" : "mean_squared_error";
}

LossKind parse_loss(const std::string& text) {
  if (text == "mean_squared_error" || text == "mse") return LossKind::mean_squared_error;
  if (text == "mean_absolute_error" || text == "mae") return LossKind::mean_absolute_error;
  throw ConfigError("unknown loss '" + text + "'");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::gradient_tolerance: return "gradient_tolerance";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::line_search_stall: return "stall";
    case StopReason::step_tolerance: return "step_tolerance";
  }
  return "max_iterations";
}

void TrainingOptions::validate() const {
  if (!(learn_rate > 0.0)) throw ConfigError("learn_rate must be positive");
  if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0,1)");
  }
  if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw ConfigError("rms_decay must lie in [0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (lbfgs_memory < 1) throw ConfigError("lbfgs_memory must be >= 1");
}

void step_first_order(FirstOrderState& state, VectorXd& params, const VectorXd& grad,
                      const TrainingOptions& options) {
  if (grad.size() != params.size()) {
    throw DataError("gradient length does not match parameter length");
  }
  if (!grad.allFinite()) throw NumericalError("non-finite gradient");
  if (state.first_moment.size() != params.size()) {
    state.first_moment = VectorXd::Zero(params.size());
    state.second_moment = VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  const double lr = options.learn_rate;
  switch (options.solver) {
    case Solver::sgdm:
      state.first_moment = options.momentum * state.first_moment - lr * grad;
      params += state.first_moment;
      break;
    case Solver::adam: {
      const double b1 = options.beta1;
      const double b2 = options.beta2;
      state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad;
      state.second_moment = b2 * state.second_moment + (1.0 - b2) * grad.cwiseAbs2();
      const double t = static_cast<double>(state.step);
      const double c1 = 1.0 - std::pow(b1, t);
      const double c2 = 1.0 - std::pow(b2, t);
      params.array() -= lr * (state.first_moment.array() / c1) /
                        ((state.second_moment.array() / c2).sqrt() + options.epsilon);
      break;
    }
    case Solver::rmsprop: {
      const double rho = options.rms_decay;
      state.second_moment = rho * state.second_moment + (1.0 - rho) * grad.cwiseAbs2();
      params.array() -= lr * grad.array() / (state.second_moment.array().sqrt() + options.epsilon);
      break;
    }
    case Solver::lbfgs:
      throw ConfigError("lbfgs is not a per-step solver; use minimize_lbfgs");
  }
}

namespace {

struct Pair {
  VectorXd s;
  VectorXd y;
  double rho;
};

VectorXd two_loop(const std::deque<Pair>& mem, const VectorXd& g) {
  VectorXd q = g;
  std::vector<double> alpha(mem.size());
  for (std::size_t i = mem.size(); i-- > 0;) {
    alpha[i] = mem[i].rho * mem[i].s.dot(q);
    q -= alpha[i] * mem[i].y;
  }
  const auto& last = mem.back();
  const double gamma = last.s.dot(last.y) / last.y.squaredNorm();
  VectorXd r = gamma * q;
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const double beta = mem[i].rho * mem[i].y.dot(r);
    r += (alpha[i] - beta) * mem[i].s;
  }
  return -r;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& objective, const VectorXd& x0,
                           const LbfgsOptions& options) {
  if (options.memory < 1) throw ConfigError("lbfgs memory must be >= 1");
  LbfgsResult res;
  res.x = x0;
  VectorXd g(x0.size());
  double f = objective(res.x, g);
  if (!std::isfinite(f) || !g.allFinite()) throw NumericalError("lbfgs: non-finite loss at x0");
  res.loss = f;
  res.loss_trace.push_back(f);
  res.grad_norm_trace.push_back(g.norm());

  std::deque<Pair> mem;
  VectorXd g_new(x0.size());
  for (int k = 0; k < options.max_iter; ++k) {
    if (g.norm() <= options.grad_tolerance) {
      res.reason = StopReason::gradient_tolerance;
      return res;
    }
    VectorXd d = mem.empty() ? VectorXd(-g / std::max(1.0, g.norm())) : two_loop(mem, g);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      mem.clear();
      d = -g / std::max(1.0, g.norm());
      slope = g.dot(d);
    }

    auto eval = [&](double a, VectorXd& grad_out) {
      const double v = objective(res.x + a * d, grad_out);
      return std::isfinite(v) && grad_out.allFinite() ? v
                                                      : std::numeric_limits<double>::infinity();
    };
    auto armijo = [&](double a, double fa) { return fa <= f + options.armijo_c * a * slope; };

    double alpha = 1.0;
    double f_alpha = eval(alpha, g_new);
    bool accepted = false;
    // One quadratic-interpolation trial from phi(0), phi'(0), phi(1): an
    // extrapolation when the unit step passes, a safeguarded cut otherwise.
    if (std::isfinite(f_alpha)) {
      const double curv = 2.0 * (f_alpha - f - slope * alpha);
      if (curv > 0.0) {
        const bool unit_ok = armijo(alpha, f_alpha);
        double aq = -slope * alpha * alpha / curv;
        aq = unit_ok ? std::min(aq, 100.0 * alpha) : std::clamp(aq, 0.1 * alpha, 0.5 * alpha);
        if (aq != alpha) {
          VectorXd g_q(x0.size());
          const double f_q = eval(aq, g_q);
          if (armijo(aq, f_q) && (!unit_ok || f_q < f_alpha)) {
            alpha = aq;
            f_alpha = f_q;
            g_new = g_q;
          }
        }
      }
    }
    accepted = armijo(alpha, f_alpha);
    int halvings = 0;
    while (!accepted) {
      if (++halvings > options.max_halvings) {
        res.reason = StopReason::line_search_stall;
        return res;
      }
      alpha *= 0.5;
      f_alpha = eval(alpha, g_new);
      accepted = armijo(alpha, f_alpha);
    }
    // Still descending steeply at an accepted unit step: extend it so the
    // curvature pair stays usable in regions of negative curvature.
    if (halvings == 0 && alpha >= 1.0) {
      VectorXd g_e(x0.size());
      for (int e = 0; e < 30 && g_new.dot(d) < 0.9 * slope; ++e) {
        const double ae = 2.0 * alpha;
        const double f_e = eval(ae, g_e);
        if (!armijo(ae, f_e) || !(f_e < f_alpha)) break;
        alpha = ae;
        f_alpha = f_e;
        g_new = g_e;
      }
    }

    const VectorXd s = alpha * d;
    const VectorXd y = g_new - g;
    res.x += s;
    f = f_alpha;
    g = g_new;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      mem.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(mem.size()) > options.memory) mem.pop_front();
    }
    res.loss = f;
    res.iterations = k + 1;
    res.loss_trace.push_back(f);
    res.grad_norm_trace.push_back(g.norm());
  }
  res.reason = g.norm() <= options.grad_tolerance ? StopReason::gradient_tolerance
                                                  : StopReason::max_iterations;
  return res;
}

LMReport minimize_lm(const ResidualFn& residual, const JacobianFn& jacobian, const VectorXd& x0,
                     const LMOptions& options) {
  LMReport rep;
  rep.x = x0;
  VectorXd r = residual(rep.x);
  if (r.size() < 1) throw DataError("levenberg-marquardt needs at least one residual");
  if (!r.allFinite()) throw NumericalError("levenberg-marquardt: non-finite residual at x0");
  rep.cost = 0.5 * r.squaredNorm();
  rep.initial_cost = rep.cost;
  rep.cost_trace.push_back(rep.cost);
  double lambda = options.initial_damping;

  auto safe_residual = [&](const VectorXd& x, VectorXd& out) {
    try {
      out = residual(x);
    } catch (const NumericalError&) {
      return false;
    }
    return out.allFinite();
  };

  for (int it = 0; it < options.max_iter; ++it) {
    const MatrixXd J = jacobian(rep.x);
    if (J.rows() != r.size() || J.cols() != rep.x.size() || !J.allFinite()) {
      throw NumericalError("levenberg-marquardt: invalid jacobian");
    }
    const VectorXd g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      rep.reason = StopReason::gradient_tolerance;
      rep.damping = lambda;
      return rep;
    }
    const MatrixXd H = J.transpose() * J;
    VectorXd diag = H.diagonal();
    const double floor = 1e-12 * std::max(1.0, diag.maxCoeff());
    diag = diag.cwiseMax(floor);

    bool accepted = false;
    while (!accepted) {
      rep.iterations = it + 1;
      MatrixXd A = H;
      A.diagonal() += lambda * diag;
      Eigen::LDLT<MatrixXd> ldlt(A);
      VectorXd step;
      bool solved = ldlt.info() == Eigen::Success;
      if (solved) {
        step = ldlt.solve(-g);
        solved = step.allFinite();
      }
      if (!solved) {
        lambda *= options.damping_increase;
        if (lambda > options.max_damping) {
          throw NumericalError("levenberg-marquardt: singular normal equations at damping " +
                               std::to_string(lambda));
        }
        continue;
      }
      if (step.norm() <= options.step_tolerance * (rep.x.norm() + options.step_tolerance)) {
        rep.reason = StopReason::step_tolerance;
        rep.damping = lambda;
        return rep;
      }
      const VectorXd x_new = rep.x + step;
      VectorXd r_new;
      if (safe_residual(x_new, r_new)) {
        const double cost_new = 0.5 * r_new.squaredNorm();
        if (cost_new < rep.cost) {
          const double drop = (rep.cost - cost_new) / std::max(rep.cost, 1e-300);
          rep.x = x_new;
          r = std::move(r_new);
          rep.cost = cost_new;
          rep.cost_trace.push_back(cost_new);
          ++rep.accepted_steps;
          lambda = std::max(lambda / options.damping_decrease, 1e-15);
          accepted = true;
          if (drop < options.cost_tolerance) {
            rep.reason = StopReason::step_tolerance;
            rep.damping = lambda;
            return rep;
          }
          continue;
        }
      }
      lambda *= options.damping_increase;
      if (lambda > options.max_damping) {
        rep.reason = StopReason::line_search_stall;
        rep.damping = lambda;
        return rep;
      }
    }
  }
  rep.reason = StopReason::max_iterations;
  rep.damping = lambda;
  return rep;
}

}  // namespace nlid
