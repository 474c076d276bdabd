#include "doctest.h"

#include "nlid/errors.hpp"
#include "nlid/neural_ss.hpp"
#include "nlid/rng.hpp"

#include <cmath>

using namespace nlid;

namespace {

NeuralStateSpaceModel affine_model(Index nx, Index nu, double ts) {
  NssNetworkOptions o;
  o.state_hidden = {};
  o.weights = WeightsInit::zeros;
  return create_nss(nx, nu, nx, ts, std::nullopt, o);
}

SignalTable linear_data(Index n, std::uint64_t seed, double a = 0.9, double b = 0.1) {
  CounterRng rng(seed);
  MatrixXd u(n, 1), y(n, 1);
  double x = 0.0;
  double level = 0.0;
  for (Index k = 0; k < n; ++k) {
    if (k % 10 == 0) level = rng.uniform(-1.0, 1.0);
    u(k, 0) = level;
    y(k, 0) = x;
    x = a * x + b * u(k, 0);
  }
  return from_matrices(u, y, 1.0);
}

}  // namespace

TEST_CASE("create_nss structures") {
  const auto m = create_nss(3, 2, 4, 0.1);
  CHECK(m.state_net.input_dim == 5);
  CHECK(m.state_net.output_dim == 3);
  CHECK(m.state_net.hidden == std::vector<Index>{64, 64});
  REQUIRE(m.output_net.has_value());
  CHECK(m.output_net->output_dim == 1);
  CHECK(m.output_net->input_dim == 5);

  const auto s = create_nss(1, 4, 1, 0.1);
  CHECK_FALSE(s.output_net.has_value());
  CHECK_FALSE(s.encoder.has_value());

  const auto l = create_nss(20, 1, 20, 0.1, 7);
  REQUIRE(l.encoder.has_value());
  REQUIRE(l.decoder.has_value());
  CHECK(l.encoder->input_dim == 20);
  CHECK(l.encoder->output_dim == 7);
  CHECK(l.encoder->hidden == std::vector<Index>{10});
  CHECK(l.decoder->input_dim == 7);
  CHECK(l.decoder->output_dim == 20);
  CHECK(l.state_net.input_dim == 8);

  CHECK_THROWS_AS(create_nss(3, 1, 2, 0.1), ConfigError);
  CHECK_THROWS_AS(create_nss(0, 1, 2, 0.1), ConfigError);
}

TEST_CASE("zero state network collapses the state after one step") {
  NssNetworkOptions o;
  o.weights = WeightsInit::zeros;
  const auto m = create_nss(2, 1, 2, 1.0, std::nullopt, o);
  const auto data = from_matrices(MatrixXd::Ones(5, 1), MatrixXd::Zero(5, 2), 1.0);
  VectorXd x0(2);
  x0 << 3, -1;
  const auto sim = simulate(m, data, x0);
  CHECK(sim.states.row(0) == x0.transpose());
  CHECK(sim.states.bottomRows(4).isZero());
}

TEST_CASE("affine state network follows the geometric series") {
  auto m = affine_model(1, 1, 1.0);
  m.state_net.layers[0].weights << 0.9, 0.1;
  const auto data = from_matrices(MatrixXd::Ones(30, 1), MatrixXd::Zero(30, 1), 1.0);
  const auto sim = simulate(m, data, VectorXd::Zero(1));
  for (Index k = 0; k < 30; ++k) {
    CHECK(sim.states(k, 0) == doctest::Approx(1.0 - std::pow(0.9, static_cast<double>(k))).epsilon(1e-12));
  }
}

TEST_CASE("identity transition keeps the state exactly") {
  auto m = affine_model(2, 1, 0.5);
  m.state_net.layers[0].weights.leftCols(2) = MatrixXd::Identity(2, 2);
  CounterRng rng(3);
  MatrixXd u(20, 1);
  for (Index k = 0; k < 20; ++k) u(k, 0) = rng.normal();
  VectorXd x0(2);
  x0 << 0.25, -7.5;
  const auto sim = simulate(m, from_matrices(u, MatrixXd::Zero(20, 2), 0.5), x0);
  for (Index k = 0; k < 20; ++k) CHECK(sim.states.row(k) == x0.transpose());
}

TEST_CASE("identity autoencoder reproduces the plain model") {
  NssNetworkOptions o;
  o.state_hidden = {6};
  o.seed = 4;
  const auto plain = create_nss(3, 2, 3, 1.0, std::nullopt, o);
  o.autoencoder_hidden = {};
  auto latent = create_nss(3, 2, 3, 1.0, 3, o);
  latent.state_net = plain.state_net;
  latent.encoder->layers[0].weights = MatrixXd::Identity(3, 3);
  latent.encoder->layers[0].bias.setZero();
  latent.decoder->layers[0].weights = MatrixXd::Identity(3, 3);
  latent.decoder->layers[0].bias.setZero();
  CounterRng rng(5);
  MatrixXd u(25, 2);
  for (Index i = 0; i < u.size(); ++i) u(i) = rng.normal();
  const auto data = from_matrices(u, MatrixXd::Zero(25, 3), 1.0);
  VectorXd x0(3);
  x0 << 0.1, 0.2, -0.3;
  CHECK(simulate(plain, data, x0).states == simulate(latent, data, x0).states);
}

TEST_CASE("output network adds measured channels") {
  NssNetworkOptions o;
  o.seed = 6;
  const auto m = create_nss(2, 1, 3, 1.0, std::nullopt, o);
  const auto data = from_matrices(MatrixXd::Ones(4, 1), MatrixXd::Zero(4, 3), 1.0);
  VectorXd x0(2);
  x0 << 0.5, 0.5;
  const auto sim = simulate(m, data, x0);
  VectorXd in(3);
  in << 0.5, 0.5, 1.0;
  CHECK(sim.outputs(0, 2) == doctest::Approx(forward(*m.output_net, in)(0)).epsilon(1e-14));
  CHECK(sim.outputs.leftCols(2) == sim.states);
}

TEST_CASE("RK4 converges with fourth order") {
  auto m = affine_model(1, 0, 0.0);
  m.state_net.layers[0].weights(0, 0) = -1.0;
  const auto data = from_matrices(MatrixXd::Zero(2, 0), MatrixXd::Zero(2, 1), 1.0);
  const double exact = std::exp(-1.0);
  const double e1 = std::abs(simulate(m, data, VectorXd::Ones(1), {0.1}).states(1, 0) - exact);
  const double e2 = std::abs(simulate(m, data, VectorXd::Ones(1), {0.05}).states(1, 0) - exact);
  const double ratio = e1 / e2;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
  CHECK_THROWS_AS(simulate(m, data, VectorXd::Ones(1)), ConfigError);
  CHECK_THROWS_AS(simulate(m, data, VectorXd::Ones(1), {2.0}), ConfigError);
}

TEST_CASE("continuous-time inputs follow the intersample mode") {
  // dx/dt = u: integrating a ramp sampled at 0,1,2 over [0,1].
  auto m = affine_model(1, 1, 0.0);
  m.state_net.layers[0].weights << 0.0, 1.0;
  MatrixXd u(3, 1);
  u << 0, 1, 2;
  const auto base = from_matrices(u, MatrixXd::Zero(3, 1), 1.0);
  const auto zoh = simulate(m, base, VectorXd::Zero(1), {0.25});
  CHECK(zoh.states(1, 0) == doctest::Approx(0.0));
  const auto foh = simulate(m, base.with_intersample({Intersample::foh}), VectorXd::Zero(1), {0.25});
  CHECK(foh.states(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(foh.states(2, 0) == doctest::Approx(2.0).epsilon(1e-12));
  const auto pch = simulate(m, base.with_intersample({Intersample::pchip}), VectorXd::Zero(1), {0.25});
  CHECK(pch.states(2, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("divergent simulation reports the step") {
  auto m = affine_model(1, 0, 1.0);
  m.state_net.layers[0].weights(0, 0) = 1e200;
  const auto data = from_matrices(MatrixXd::Zero(10, 0), MatrixXd::Zero(10, 1), 1.0);
  CHECK_THROWS_WITH_AS(simulate(m, data, VectorXd::Ones(1)), doctest::Contains("step 2"), NumericalError);
}

TEST_CASE("max_epochs = 0 leaves the model unchanged") {
  auto m = create_nss(1, 1, 1, 1.0);
  const VectorXd before = nss_params(m);
  NssTrainingOptions o;
  o.train.max_epochs = 0;
  const auto rep = train_nss(m, linear_data(50, 1), o);
  CHECK(rep.trace.empty());
  CHECK(nss_params(m) == before);
  CHECK(m.normalization.method == NormalizationMethod::none);
}

TEST_CASE("rollout loss gradient matches finite differences") {
  CounterRng rng(7);
  for (bool continuous : {false, true}) {
    for (bool latent : {false, true}) {
      NssNetworkOptions no;
      no.state_hidden = {4};
      no.output_hidden = {3};
      no.autoencoder_hidden = {3};
      no.seed = 8;
      no.time_invariant = !latent;
      auto m = create_nss(2, 1, 3, continuous ? 0.0 : 1.0, latent ? std::optional<Index>(2) : std::nullopt, no);
      MatrixXd u(12, 1), y(12, 3);
      for (Index i = 0; i < u.size(); ++i) u(i) = rng.normal();
      for (Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
      const auto seg = from_matrices(u, y, 1.0).with_intersample({Intersample::pchip});
      const SegmentSet segs{SignalTable(seg.rows(0, 6)), SignalTable(seg.rows(6, 6))};
      NssTrainingOptions o;
      o.ode_step = 0.5;
      const VectorXd p0 = nss_params(m);
      for (int probe = 0; probe < 10; ++probe) {
        VectorXd p = p0;
        for (Index i = 0; i < p.size(); ++i) p(i) += 0.3 * rng.normal();
        set_nss_params(m, p);
        VectorXd g;
        nss_loss(m, segs, o, &g);
        // Directional derivative along a random direction.
        VectorXd dir(p.size());
        for (Index i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
        const double h = 1e-5;
        auto at = [&](const VectorXd& q) {
          set_nss_params(m, q);
          return nss_loss(m, segs, o, nullptr);
        };
        const double fd = (at(p + h * dir) - at(p - h * dir)) / (2 * h);
        const double ad_dir = g.dot(dir);
        CAPTURE(continuous);
        CAPTURE(latent);
        CHECK(std::abs(ad_dir - fd) <= 1e-4 * std::max(std::abs(fd), 1e-8));
      }
    }
  }
}

TEST_CASE("affine model recovers a linear system") {
  const auto data = linear_data(400, 9);
  const auto [est, val] = split(data, 0.7);
  auto m = affine_model(1, 1, 1.0);
  NssTrainingOptions o;
  o.train.learn_rate = 0.01;
  o.train.max_epochs = 300;
  const auto segs = segment(est, 20, 20);
  const auto rep = train_nss(m, segs, o);
  REQUIRE(rep.trace.size() == 300);
  const double a = step_physical(m, VectorXd::Ones(1), VectorXd::Zero(1))(0) -
                   step_physical(m, VectorXd::Zero(1), VectorXd::Zero(1))(0);
  const double b = step_physical(m, VectorXd::Zero(1), VectorXd::Ones(1))(0) -
                   step_physical(m, VectorXd::Zero(1), VectorXd::Zero(1))(0);
  CHECK(std::abs(a - 0.9) <= 1e-2);
  CHECK(std::abs(b - 0.1) <= 1e-2);
  const auto sim = simulate(m, val, val.outputs().row(0).transpose());
  CHECK(fit_percent(val.outputs(), sim.outputs)(0) >= 99.0);
}

TEST_CASE("training is deterministic") {
  const auto data = linear_data(120, 10);
  NssTrainingOptions o;
  o.train.max_epochs = 3;
  NssNetworkOptions no;
  no.state_hidden = {8};
  no.seed = 11;
  auto m1 = create_nss(1, 1, 1, 1.0, std::nullopt, no);
  auto m2 = create_nss(1, 1, 1, 1.0, std::nullopt, no);
  const auto r1 = train_nss(m1, segment(data, 20, 20), o);
  const auto r2 = train_nss(m2, segment(data, 20, 20), o);
  CHECK(nss_params(m1) == nss_params(m2));
  CHECK(r1.trace.back().loss == r2.trace.back().loss);
}

TEST_CASE("lbfgs trains full batch") {
  const auto data = linear_data(200, 12);
  auto m = affine_model(1, 1, 1.0);
  NssTrainingOptions o;
  o.train.solver = Solver::lbfgs;
  o.train.max_epochs = 50;
  const auto rep = train_nss(m, segment(data, 50, 50), o);
  REQUIRE_FALSE(rep.trace.empty());
  for (std::size_t i = 1; i < rep.trace.size(); ++i) CHECK(rep.trace[i].loss <= rep.trace[i - 1].loss);
  CHECK(rep.fit_percent(0) >= 99.0);
}

TEST_CASE("engine-style setup runs end to end") {
  // Four inputs, one state, [128,128] tanh, pchip, segments of 20.
  const Index n = 400;
  MatrixXd u(n, 4), y(n, 1);
  VectorXd level = VectorXd::Zero(4);
  double x = 0.0;
  for (Index k = 0; k < n; ++k) {
    const double t = 0.1 * static_cast<double>(k);
    level(0) = 0.5 + 0.3 * std::sin(0.31 * t) + 0.15 * std::sin(1.13 * t + 1.0);
    level(1) = 0.4 + 0.2 * std::sin(0.17 * t + 2.0);
    level(2) = 0.6 + 0.25 * std::sin(0.23 * t + 0.5) + 0.1 * std::sin(0.71 * t);
    level(3) = 0.2 * std::sin(0.47 * t + 1.5);
    u.row(k) = level.transpose();
    y(k, 0) = x;
    x = 0.8 * x + 0.2 * std::tanh(level(0) + 0.5 * level(1)) + 0.05 * level(2) * level(3);
  }
  const auto data = from_matrices(u, y, 0.1);
  NssNetworkOptions no;
  no.state_hidden = {128, 128};
  auto m = create_nss(1, 4, 1, 0.1, std::nullopt, no);
  NssTrainingOptions o;
  o.train.max_epochs = 90;
  o.input_intersample = Intersample::pchip;
  const auto rep = train_nss(m, segment(data, 20, 20), o);
  REQUIRE(rep.trace.size() == 90);
  // Trailing 10-epoch mean over the last 10 epochs never rises.
  std::vector<double> smooth;
  for (std::size_t i = 80; i < 90; ++i) {
    double s = 0.0;
    for (std::size_t j = i - 9; j <= i; ++j) s += rep.trace[j].loss;
    smooth.push_back(s / 10.0);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] <= smooth[i - 1] * (1.0 + 1e-9));
}
