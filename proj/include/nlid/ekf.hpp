#pragma once

#include "nlid/autodiff.hpp"
#include "nlid/hw.hpp"
#include "nlid/neural_ss.hpp"

#include <functional>

namespace nlid {

/// Records f(x, u) or h(x, u) on a tape; x is an nx x 1 node.
using TapeMap = std::function<ad::Var(ad::Tape& tape, ad::Var x, const VectorXd& u)>;

/// Discrete-time filter with additive noise:
///   x(k+1) = f(x(k), u(k)) + w,  w ~ N(0, Q)
///   y(k)   = h(x(k), u(k)) + v,  v ~ N(0, R)
struct EkfState {
  VectorXd x;
  MatrixXd p;
  MatrixXd q;
  MatrixXd r;
  TapeMap f;
  TapeMap h;

  Index nx() const { return x.size(); }
  Index ny() const { return r.rows(); }
  /// Throws ConfigError on shape errors or a non-symmetric P, Q or R.
  void validate() const;
};

struct Innovation {
  VectorXd residual;  // y - h(x_prior, u)
  MatrixXd s;         // H P H' + R
  double nis = 0.0;   // residual' S^-1 residual
};

/// x <- f(x, u), P <- F P F' + Q with F = df/dx from autodiff.
/// Throws NumericalError on a non-finite state or covariance.
void predict(EkfState& state, const VectorXd& u);

/// Joseph-form measurement update. Throws NumericalError when S is
/// singular, quoting its condition estimate.
Innovation correct(EkfState& state, const VectorXd& y, const VectorXd& u);

/// f and h of a discrete neural state-space model in physical units:
/// f = one transition, h = [x; g(x, u)].
std::pair<TapeMap, TapeMap> nss_maps(const NeuralStateSpaceModel& model);
/// f = A x + B u, h = C x + D u.
std::pair<TapeMap, TapeMap> linear_maps(const LinearSSBlock& block);

}  // namespace nlid
