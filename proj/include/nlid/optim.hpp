#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace nlid {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Solver { adam, sgdm, lbfgs, rmsprop };
enum class LossKind { mean_squared_error, mean_absolute_error };

std::string to_string(Solver s);
Solver parse_solver(const std::string& text);
std::string to_string(LossKind k);
LossKind parse_loss(const std::string& text);

struct TrainingOptions {
  Solver solver = Solver::adam;
  double learn_rate = 0.001;
  int max_epochs = 100;
  LossKind loss = LossKind::mean_squared_error;
  double momentum = 0.9;  // sgdm
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;   // adam
  double rms_decay = 0.9;  // rmsprop
  double epsilon = 1e-8;
  int lbfgs_memory = 10;
  double grad_tolerance = 1e-10;  // lbfgs
  std::uint64_t seed = 0;

  /// Throws ConfigError on an invalid value.
  void validate() const;
};

/// One row of a training trace.
struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// Moment buffers for the first-order solvers.
struct FirstOrderState {
  std::int64_t step = 0;
  VectorXd first_moment;   // sgdm velocity, adam m
  VectorXd second_moment;  // adam v, rmsprop mean square
};

/// One update of sgdm, adam or rmsprop in place. Throws NumericalError on a
/// non-finite gradient and ConfigError for lbfgs.
void step_first_order(FirstOrderState& state, VectorXd& params, const VectorXd& grad,
                      const TrainingOptions& options);

/// Value and gradient of a smooth objective.
using Objective = std::function<double(const VectorXd& x, VectorXd& grad)>;

enum class StopReason { gradient_tolerance, max_iterations, line_search_stall, step_tolerance };

std::string to_string(StopReason r);

struct LbfgsOptions {
  int memory = 10;
  int max_iter = 100;
  double grad_tolerance = 1e-10;
  double armijo_c = 1e-4;
  int max_halvings = 40;
};

struct LbfgsResult {
  VectorXd x;
  double loss = 0.0;
  std::vector<double> loss_trace;  // entry 0 is the loss at x0
  std::vector<double> grad_norm_trace;
  int iterations = 0;
  StopReason reason = StopReason::max_iterations;
};

/// Limited-memory BFGS with a backtracking Armijo line search (halving,
/// plus one quadratic-interpolation trial per iteration). The loss trace is
/// non-increasing. A stall leaves the best iterate in the result.
LbfgsResult minimize_lbfgs(const Objective& objective, const VectorXd& x0,
                           const LbfgsOptions& options = {});

struct LMOptions {
  int max_iter = 100;
  double initial_damping = 1e-3;
  double damping_increase = 10.0;
  double damping_decrease = 10.0;
  double max_damping = 1e12;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-12;
  /// Stop when an accepted step lowers the cost by less than this fraction.
  double cost_tolerance = 0.0;
};

using ResidualFn = std::function<VectorXd(const VectorXd& x)>;
using JacobianFn = std::function<MatrixXd(const VectorXd& x)>;

struct LMReport {
  VectorXd x;
  double cost = 0.0;  // 0.5 * |r|^2
  double initial_cost = 0.0;
  double damping = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  std::vector<double> cost_trace;  // cost after each accepted step, entry 0 at x0
  StopReason reason = StopReason::max_iterations;
};

/// Levenberg-Marquardt on 0.5 * |r(x)|^2 with Marquardt scaling:
/// (J'J + lambda * diag(J'J)) dx = -J'r. Steps are accepted only when the
/// cost decreases. Throws NumericalError on a non-finite residual at x0 or
/// when the damped system stays singular up to max_damping.
LMReport minimize_lm(const ResidualFn& residual, const JacobianFn& jacobian, const VectorXd& x0,
                     const LMOptions& options = {});

}  // namespace nlid
