#include "nlid/ekf.hpp"

#include "nlid/errors.hpp"
#include "nlid/regressors.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <memory>

namespace nlid {

namespace {

bool symmetric(const MatrixXd& m) {
  if (m.rows() != m.cols()) return false;
  const double tol = 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

void symmetrize(MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

// Value and Jacobian of a tape map at x.
std::pair<VectorXd, MatrixXd> linearize(const TapeMap& fn, const VectorXd& x, const VectorXd& u, const char* what) {
  ad::Tape tape;
  const ad::Var xv = tape.variable(MatrixXd(x));
  const ad::Var out = fn(tape, xv, u);
  if (out.cols() != 1) throw ConfigError(std::string(what) + " must return a column vector");
  VectorXd value = out.value().col(0);
  if (!value.allFinite()) throw NumericalError(std::string("EKF: non-finite ") + what + " value");
  const ad::Var wrt[] = {xv};
  MatrixXd jac = tape.jacobian(out, wrt);
  if (!jac.allFinite()) throw NumericalError(std::string("EKF: non-finite ") + what + " Jacobian");
  return {std::move(value), std::move(jac)};
}

}  // namespace

void EkfState::validate() const {
  const Index n = x.size();
  if (n < 1) throw ConfigError("EKF state is empty");
  if (p.rows() != n || q.rows() != n) throw ConfigError("EKF P and Q must be nx x nx");
  if (r.rows() < 1) throw ConfigError("EKF R is empty");
  if (!symmetric(p) || !symmetric(q) || !symmetric(r)) throw ConfigError("EKF P, Q and R must be symmetric");
  if (!f || !h) throw ConfigError("EKF needs state and measurement functions");
}

void predict(EkfState& s, const VectorXd& u) {
  auto [x, fj] = linearize(s.f, s.x, u, "state transition");
  if (x.size() != s.nx()) throw ConfigError("state transition changes the state dimension");
  MatrixXd p = fj * s.p * fj.transpose() + s.q;
  symmetrize(p);
  if (!p.allFinite()) throw NumericalError("EKF: non-finite covariance after prediction");
  s.x = std::move(x);
  s.p = std::move(p);
}

Innovation correct(EkfState& s, const VectorXd& y, const VectorXd& u) {
  auto [yhat, hj] = linearize(s.h, s.x, u, "measurement");
  if (yhat.size() != s.ny() || y.size() != s.ny()) throw DataError("measurement length does not match R");
  Innovation inn;
  inn.residual = y - yhat;
  inn.s = hj * s.p * hj.transpose() + s.r;
  symmetrize(inn.s);
  const Eigen::JacobiSVD<MatrixXd> svd(inn.s);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!std::isfinite(cond) || cond > 1e14) {
    throw NumericalError("EKF: innovation covariance is singular (condition estimate " + format_number(cond) + ")");
  }
  const Eigen::LDLT<MatrixXd> ldlt(inn.s);
  // K = P H' S^-1, from S K' = H P.
  const MatrixXd k = ldlt.solve(hj * s.p).transpose();
  inn.nis = inn.residual.dot(ldlt.solve(inn.residual));
  s.x += k * inn.residual;
  const MatrixXd ikh = MatrixXd::Identity(s.nx(), s.nx()) - k * hj;
  MatrixXd p = ikh * s.p * ikh.transpose() + k * s.r * k.transpose();
  symmetrize(p);
  if (!s.x.allFinite() || !p.allFinite()) throw NumericalError("EKF: non-finite state after correction");
  s.p = std::move(p);
  return inn;
}

std::pair<TapeMap, TapeMap> linear_maps(const LinearSSBlock& block) {
  block.validate();
  TapeMap f = [block](ad::Tape& t, ad::Var x, const VectorXd& u) {
    return ad::matmul(t.constant(block.a), x) + t.constant(MatrixXd(block.b * u));
  };
  TapeMap h = [block](ad::Tape& t, ad::Var x, const VectorXd& u) {
    return ad::matmul(t.constant(block.c), x) + t.constant(MatrixXd(block.d * u));
  };
  return {f, h};
}

std::pair<TapeMap, TapeMap> nss_maps(const NeuralStateSpaceModel& model) {
  if (model.continuous()) throw ConfigError("the EKF needs a discrete-time state-space model");
  if (!model.time_invariant) throw ConfigError("the EKF needs a time-invariant state-space model");
  const auto m = std::make_shared<NeuralStateSpaceModel>(model);
  const Index nx = m->nx;
  const VectorXd xmean = m->normalization.outputs.mean.head(nx);
  const VectorXd xscale = m->normalization.outputs.scale.head(nx);
  auto to_norm = [m, xmean, xscale](ad::Tape& t, ad::Var x) {
    return ad::mul(ad::sub(x, t.constant(MatrixXd(xmean))), t.constant(MatrixXd(xscale.cwiseInverse())));
  };
  auto un = [m](const VectorXd& u) {
    if (u.size() != m->nu) throw DataError("input length does not match the model");
    return VectorXd((u - m->normalization.inputs.mean).cwiseQuotient(m->normalization.inputs.scale));
  };
  TapeMap f = [m, to_norm, un, xmean, xscale](ad::Tape& t, ad::Var x, const VectorXd& u) {
    ad::Var z = to_norm(t, x);
    if (m->encoder) z = forward(bind(*m->encoder, t), z);
    ad::Var in = m->nu > 0 ? ad::concat({z, t.constant(MatrixXd(un(u)))}) : z;
    ad::Var next = forward(bind(m->state_net, t), in);
    if (m->decoder) next = forward(bind(*m->decoder, t), next);
    return ad::mul(next, t.constant(MatrixXd(xscale))) + t.constant(MatrixXd(xmean));
  };
  TapeMap h = [m, to_norm, un](ad::Tape& t, ad::Var x, const VectorXd& u) {
    if (!m->output_net) return x;
    const Index extra = m->ny - m->nx;
    const ad::Var xn = to_norm(t, x);
    const ad::Var in = m->nu > 0 ? ad::concat({xn, t.constant(MatrixXd(un(u)))}) : xn;
    const ad::Var g = forward(bind(*m->output_net, t), in);
    const VectorXd mean = m->normalization.outputs.mean.tail(extra);
    const VectorXd scale = m->normalization.outputs.scale.tail(extra);
    return ad::concat({x, ad::mul(g, t.constant(MatrixXd(scale))) + t.constant(MatrixXd(mean))});
  };
  return {f, h};
}

}  // namespace nlid
