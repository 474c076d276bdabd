#include "doctest.h"

#include "nlid/errors.hpp"
#include "nlid/nlarx.hpp"
#include "nlid/rng.hpp"

#include <cmath>

using namespace nlid;

namespace {

RegressorSpec lin(const std::string& var, std::vector<int> lags) {
  RegressorSpec s;
  s.variables = {var};
  s.lags = {std::move(lags)};
  return s;
}

RegressorSpec prod(const std::string& a, int la, const std::string& b, int lb) {
  RegressorSpec s;
  s.kind = RegressorKind::custom;
  s.function = "prod";
  s.variables = {a, b};
  s.lags = {{la}, {lb}};
  return s;
}

VectorXd random_input(CounterRng& rng, Index n) {
  VectorXd u(n);
  for (Index k = 0; k < n; ++k) u(k) = rng.uniform(-1.0, 1.0);
  return u;
}

// y(t) = a y(t-1) + b u(t-1) + c y(t-1) u(t-2) + noise
SignalTable narx(Index n, double a, double b, double c, double noise, std::uint64_t seed) {
  CounterRng rng(seed);
  const VectorXd u = random_input(rng, n);
  VectorXd y = VectorXd::Zero(n);
  for (Index t = 1; t < n; ++t) {
    y(t) = a * y(t - 1) + b * u(t - 1) + noise * rng.normal();
    if (t >= 2) y(t) += c * y(t - 1) * u(t - 2);
  }
  return from_matrices(u, y, 1.0);
}

// Smooth nonlinear system for network mappings.
SignalTable nonlinear_system(Index n, std::uint64_t seed) {
  CounterRng rng(seed);
  const VectorXd u = random_input(rng, n);
  VectorXd y = VectorXd::Zero(n);
  for (Index t = 2; t < n; ++t) y(t) = 0.6 * y(t - 1) - 0.1 * y(t - 2) + std::tanh(1.5 * u(t - 1)) + 0.3 * u(t - 2) * u(t - 2);
  return from_matrices(u, y, 1.0);
}

NlarxModel make_model(const std::vector<RegressorSpec>& specs, MappingSpec ms = {}) {
  return create_nlarx(specs, {"u1"}, "y1", ms);
}

double fd_check(const NlarxModel& model, const SegmentSet& data, Focus focus, int probes) {
  VectorXd g;
  nlarx_loss(model, data, focus, &g);
  const VectorXd p0 = mapping_params(model.mapping);
  double worst = 0.0;
  CounterRng rng(77);
  for (int k = 0; k < probes; ++k) {
    VectorXd dir(p0.size());
    for (Index i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
    dir.normalize();
    const double h = 1e-6;
    NlarxModel m = model;
    set_mapping_params(m.mapping, p0 + h * dir);
    const double fp = nlarx_loss(m, data, focus, nullptr);
    set_mapping_params(m.mapping, p0 - h * dir);
    const double fm = nlarx_loss(m, data, focus, nullptr);
    const double fd = (fp - fm) / (2 * h);
    const double an = g.dot(dir);
    worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(an)));
  }
  return worst;
}

}  // namespace

TEST_CASE("create_nlarx builds the dictionary and mapping") {
  auto m = make_model({lin("y1", lag_range(1, 2)), lin("u1", lag_range(1, 3))});
  CHECK(m.regressor_count() == 5);
  CHECK(m.max_lag() == 3);
  CHECK(m.regressor_names() == std::vector<std::string>{"y1(t-1)", "y1(t-2)", "u1(t-1)", "u1(t-2)", "u1(t-3)"});
  CHECK(m.mapping.parameter_count() == 6);
  CHECK(m.active_count() == 5);

  auto s = make_model({lin("y1", {1}), lin("u1", {1})}, {MappingKind::sigmoid_network, 10, {}, Activation::tanh, 3});
  CHECK(s.mapping.parameter_count() == 2 + 1 + 10 + 20 + 10);
  auto n = make_model({lin("y1", {1}), lin("u1", {1})}, {MappingKind::neural_network, 10, {5, 5}, Activation::relu, 3});
  CHECK(n.mapping.parameter_count() == 3 + (5 * 2 + 5) + (5 * 5 + 5) + (5 + 1));

  CHECK_THROWS_AS(make_model({}), ConfigError);
  CHECK_THROWS_AS(make_model({lin("y1", {0})}), ConfigError);
  CHECK_THROWS_AS(make_model({lin("y1", {1})}, {MappingKind::sigmoid_network, 0}), ConfigError);
  CHECK_THROWS_AS(make_model({lin("y1", {1})}, {MappingKind::neural_network, 10, {}}), ConfigError);
  CHECK(parse_mapping_kind("sigmoid_network") == MappingKind::sigmoid_network);
  CHECK_THROWS_AS(parse_mapping_kind("wavelet"), ConfigError);
}

TEST_CASE("mapping parameters round trip and group indices") {
  for (auto kind : {MappingKind::linear_in_regressors, MappingKind::sigmoid_network, MappingKind::neural_network}) {
    auto m = make_model({lin("y1", {1, 2}), lin("u1", {1, 2, 3})}, {kind, 4, {6, 3}, Activation::tanh, 9});
    CounterRng rng(5);
    VectorXd p(m.mapping.parameter_count());
    for (Index i = 0; i < p.size(); ++i) p(i) = rng.normal();
    set_mapping_params(m.mapping, p);
    CHECK(mapping_params(m.mapping) == p);

    // Zero group j: then column j of z has no effect on F.
    MatrixXd z(5, 7);
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    for (Index j = 0; j < 5; ++j) {
      VectorXd q = p;
      for (Index i : regressor_group(m.mapping, j)) q(i) = 0.0;
      set_mapping_params(m.mapping, q);
      const VectorXd f0 = evaluate_mapping(m.mapping, z);
      MatrixXd z2 = z;
      z2.row(j).setConstant(1e6);
      CHECK(evaluate_mapping(m.mapping, z2) == f0);
    }
  }
}

TEST_CASE("one-step prediction examples") {
  SUBCASE("self-consistent linear recursion") {
    const auto data = narx(300, 0.5, 0.8, 0.0, 0.0, 1);
    auto m = make_model({lin("y1", {1}), lin("u1", {1})});
    m.mapping.theta << 0.5, 0.8;
    const auto p = predict_one_step(m, data);
    CHECK(p.offset == 1);
    CHECK((p.y - data.outputs().col(0).tail(299)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("zero mapping predicts the offset") {
    const auto data = narx(50, 0.5, 0.8, 0.0, 0.0, 2);
    auto m = make_model({lin("y1", {1}), lin("u1", {1})});
    m.mapping.offset = 1.25;
    CHECK(predict_one_step(m, data).y == VectorXd::Constant(49, 1.25));
  }
  SUBCASE("sigmoid unit at zero adds one half") {
    const auto data = narx(60, 0.5, 0.8, 0.0, 0.0, 3);
    auto m = make_model({lin("y1", {1}), lin("u1", {1})}, {MappingKind::sigmoid_network, 1});
    m.mapping.theta << 0.3, -0.2;
    m.mapping.offset = 0.1;
    m.mapping.a << 1.0;
    m.mapping.v.setZero();
    m.mapping.c.setZero();
    m.regressor_scaling.mean << 0.05, -0.02;
    const auto p = predict_one_step(m, data);
    for (Index k = 0; k < p.y.size(); ++k) {
      const Index t = k + 1;
      const double want = 0.3 * (data.outputs()(t - 1, 0) - 0.05) - 0.2 * (data.inputs()(t - 1, 0) + 0.02) + 0.1 + 0.5;
      CHECK(p.y(k) == doctest::Approx(want).epsilon(1e-14));
    }
  }
  SUBCASE("layout and length errors") {
    auto m = make_model({lin("y1", {1}), lin("u1", lag_range(1, 5))});
    CHECK_THROWS_AS(predict_one_step(m, narx(5, 0.5, 0.8, 0, 0, 4)), DataError);
    const auto other = SignalTable(MatrixXd::Zero(20, 1), MatrixXd::Zero(20, 1), 1.0, 0.0, {"v"}, {"y1"});
    CHECK_THROWS_AS(predict_one_step(m, other), DataError);
  }
}

TEST_CASE("simulation examples") {
  SUBCASE("geometric approach to 2") {
    const Index n = 40;
    auto data = from_matrices(VectorXd::Ones(n), VectorXd::Zero(n), 1.0);
    auto m = make_model({lin("y1", {1}), lin("u1", {1})});
    m.mapping.theta << 0.5, 1.0;
    const VectorXd y = simulate(m, data);
    for (Index t = 0; t < n; ++t) CHECK(y(t) == doctest::Approx(2.0 * (1.0 - std::pow(0.5, t))).epsilon(1e-14));
  }
  SUBCASE("no output lags: simulation equals prediction") {
    const auto data = narx(100, 0.5, 0.8, 0.1, 0.01, 5);
    auto m = make_model({lin("u1", {0, 1, 2})}, {MappingKind::sigmoid_network, 3, {}, Activation::tanh, 2});
    m.mapping.a << 0.5, -1.0, 0.25;
    m.mapping.theta << 0.1, 0.2, 0.3;
    const VectorXd sim = simulate(m, data);
    const auto pred = predict_one_step(m, data);
    CHECK((sim.tail(pred.y.size()) - pred.y).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("unstable recursion reports the time index") {
    const Index n = 1100;
    VectorXd y = VectorXd::Zero(n);
    y(0) = 1.0;
    const auto data = from_matrices(VectorXd::Zero(n), y, 1.0);
    auto m = make_model({lin("y1", {1})});
    m.mapping.theta << 2.0;
    CHECK_THROWS_WITH_AS(simulate(m, data), "NLARX simulation diverged at time index 1024", NumericalError);
  }
}

TEST_CASE("prediction focus with a linear mapping is least squares") {
  const auto data = narx(400, 0.7, 0.5, 0.2, 0.05, 6);
  const std::vector<RegressorSpec> specs{lin("y1", {1, 2}), lin("u1", {1, 2}), prod("y1", 1, "u1", 2)};
  // Oracle: normal equations in physical units with an offset column.
  const auto rm = build_matrix(specs, data);
  MatrixXd a(rm.values.rows(), rm.values.cols() + 1);
  a << rm.values, VectorXd::Ones(rm.values.rows());
  const VectorXd target = data.outputs().col(0).tail(rm.values.rows());
  const VectorXd x = (a.transpose() * a).ldlt().solve(a.transpose() * target);
  const VectorXd want = a * x;

  for (auto norm : {NormalizationMethod::none, NormalizationMethod::zscore}) {
    auto m = make_model(specs);
    NlarxTrainingOptions opt;
    opt.normalization = norm;
    const auto rep = train_nlarx(m, data, opt);
    CHECK(rep.stop_reason == "least_squares");
    CHECK(rep.final_cost <= rep.initial_cost);
    const auto p = predict_one_step(m, data);
    CHECK((p.y - want).cwiseAbs().maxCoeff() <= 1e-10);
    if (norm == NormalizationMethod::none) {
      CHECK((m.mapping.theta - x.head(5)).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(std::abs(m.mapping.offset - x(5)) <= 1e-10);
    }
  }
}

TEST_CASE("noise-free coefficients are recovered exactly") {
  const auto data = narx(300, 0.5, 0.8, 0.1, 0.0, 7);
  auto m = make_model({lin("y1", {1}), lin("u1", {1, 2}), prod("y1", 1, "u1", 2)});
  NlarxTrainingOptions opt;
  opt.normalization = NormalizationMethod::none;
  train_nlarx(m, data, opt);
  VectorXd want(4);
  want << 0.5, 0.8, 0.0, 0.1;
  CHECK((m.mapping.theta - want).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(std::abs(m.mapping.offset) <= 1e-8);
}

TEST_CASE("rank-deficient dictionaries name the dependent columns") {
  CounterRng rng(8);
  const VectorXd u = random_input(rng, 100);
  MatrixXd uu(100, 2);
  uu << u, 2.0 * u;
  const SignalTable data(uu, VectorXd(u * 0.5), 1.0, 0.0, {"a", "b"}, {"y"});
  auto m = create_nlarx({lin("a", {1}), lin("b", {1})}, {"a", "b"}, "y");
  NlarxTrainingOptions opt;
  opt.normalization = NormalizationMethod::none;
  CHECK_THROWS_WITH_AS(train_nlarx(m, data, opt), doctest::Contains("dependent columns:"), DataError);
}

TEST_CASE("gradients match finite differences") {
  const auto data = nonlinear_system(50, 9);
  const auto half = segment(data, 25, 25);
  const std::vector<RegressorSpec> specs{lin("y1", {1, 2}), lin("u1", {1, 2}), prod("y1", 1, "u1", 1)};
  for (auto kind : {MappingKind::linear_in_regressors, MappingKind::sigmoid_network, MappingKind::neural_network}) {
    auto m = make_model(specs, {kind, 4, {5, 5}, Activation::tanh, 11});
    NlarxTrainingOptions opt;
    opt.lm.max_iter = 3;
    train_nlarx(m, half, opt);
    // Move off the optimum so the gradient is not tiny.
    VectorXd p = mapping_params(m.mapping);
    CounterRng rng(12);
    for (Index i = 0; i < p.size(); ++i) p(i) += 0.05 * rng.normal();
    set_mapping_params(m.mapping, p);
    CAPTURE(to_string(kind));
    CHECK(fd_check(m, half, Focus::prediction, 10) <= 1e-4);
    CHECK(fd_check(m, half, Focus::simulation, 10) <= 1e-4);
  }
}

TEST_CASE("nonlinear mappings improve on the linear fit") {
  const auto data = nonlinear_system(600, 10);
  const std::vector<RegressorSpec> specs{lin("y1", {1, 2}), lin("u1", {1, 2})};
  auto linear = make_model(specs);
  NlarxTrainingOptions opt;
  const auto lrep = train_nlarx(linear, data, opt);
  auto sig = make_model(specs, {MappingKind::sigmoid_network, 10, {}, Activation::tanh, 1});
  opt.lm.max_iter = 50;
  const auto srep = train_nlarx(sig, data, opt);
  CHECK(srep.final_cost < 0.2 * lrep.final_cost);
  CHECK(srep.fit_percent > lrep.fit_percent);
  for (std::size_t i = 1; i < srep.trace.size(); ++i) CHECK(srep.trace[i].loss <= srep.trace[i - 1].loss);

  SUBCASE("simulation focus does not lose simulation fit") {
    auto simfocus = make_model(specs, {MappingKind::sigmoid_network, 10, {}, Activation::tanh, 1});
    NlarxTrainingOptions so = opt;
    so.focus = Focus::simulation;
    const auto rep = train_nlarx(simfocus, data, so);
    const double fit_pred = fit_percent(data.outputs(), simulate(sig, data))(0);
    const double fit_sim = fit_percent(data.outputs(), simulate(simfocus, data))(0);
    CHECK(fit_sim >= fit_pred - 1e-9);
    CHECK(rep.fit_percent > 90.0);
  }
}

TEST_CASE("first-order search lowers the loss") {
  const auto data = nonlinear_system(300, 13);
  auto m = make_model({lin("y1", {1, 2}), lin("u1", {1, 2})},
                      {MappingKind::neural_network, 10, {8}, Activation::tanh, 2});
  NlarxTrainingOptions opt;
  opt.search = SearchMethod::first_order;
  opt.first_order.learn_rate = 0.01;
  opt.first_order.max_epochs = 40;
  const auto rep = train_nlarx(m, segment(data, 100, 100), opt);
  REQUIRE(rep.trace.size() >= 41);
  CHECK(rep.trace.back().loss < rep.trace.front().loss);
  CHECK(rep.stop_reason == "max_epochs");

  opt.first_order.solver = Solver::lbfgs;
  auto m2 = make_model({lin("y1", {1, 2}), lin("u1", {1, 2})},
                       {MappingKind::neural_network, 10, {8}, Activation::tanh, 2});
  const auto rep2 = train_nlarx(m2, data, opt);
  CHECK(rep2.final_cost < rep2.initial_cost);
}

TEST_CASE("prox closed forms") {
  VectorXd v(2);
  v << 0.6, 0.8;  // norm 1
  CHECK(prox(v, SparsityMeasure::l1, 0.3, 1.0).isApprox(0.7 * v, 1e-15));
  CHECK(prox(v, SparsityMeasure::l1, 0.6, 0.5).isApprox(0.7 * v, 1e-15));
  CHECK(prox(0.9 * v, SparsityMeasure::l0, 0.5, 1.0).isZero(0.0));
  CHECK(prox(v, SparsityMeasure::l0, 0.5, 1.0).isZero(0.0));
  CHECK(prox(1.1 * v, SparsityMeasure::l0, 0.5, 1.0) == 1.1 * v);
  CHECK(prox(0.2 * v, SparsityMeasure::l1, 0.3, 1.0).isZero(0.0));
  for (auto m : {SparsityMeasure::l1, SparsityMeasure::l0, SparsityMeasure::log_sum}) {
    CHECK(prox(v, m, 0.0, 1.0) == v);
  }
  // log-sum shrinks like l1 with its reweighting factor
  CHECK(prox(v, SparsityMeasure::log_sum, 0.1, 1.0, 3.0).isApprox(0.7 * v, 1e-15));
}

TEST_CASE("prox properties on random groups") {
  CounterRng rng(14);
  for (int trial = 0; trial < 1000; ++trial) {
    VectorXd v(1 + trial % 6);
    for (Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
    const double lam = rng.uniform(0.0, 2.0), step = rng.uniform(0.1, 1.0);
    const VectorXd h = prox(v, SparsityMeasure::l0, lam, step);
    CHECK(prox(h, SparsityMeasure::l0, lam, step) == h);
    // Soft thresholds compose additively.
    const double lam2 = rng.uniform(0.0, 2.0);
    const VectorXd twice = prox(prox(v, SparsityMeasure::l1, lam, step), SparsityMeasure::l1, lam2, step);
    const VectorXd once = prox(v, SparsityMeasure::l1, lam + lam2, step);
    CHECK((twice - once).cwiseAbs().maxCoeff() <= 1e-12);
    // Monotone shrinkage.
    CHECK(prox(v, SparsityMeasure::l1, lam + lam2, step).norm() <= prox(v, SparsityMeasure::l1, lam, step).norm());
  }
}

TEST_CASE("sparsify") {
  const auto data = narx(800, 0.5, 0.8, 0.0, 0.05, 15);
  const std::vector<RegressorSpec> specs{lin("y1", lag_range(1, 8)), lin("u1", lag_range(1, 8))};
  NlarxTrainingOptions est;

  SUBCASE("lambda zero keeps the least-squares model") {
    auto m = make_model(specs);
    train_nlarx(m, data, est);
    const VectorXd before = mapping_params(m.mapping);
    SparsificationOptions so;
    so.lambda = 0.0;
    const auto rep = sparsify(m, SegmentSet{data}, so, est);
    CHECK(std::all_of(rep.active.begin(), rep.active.end(), [](bool b) { return b; }));
    CHECK((mapping_params(m.mapping) - before).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SUBCASE("l0 recovers the generating support") {
    auto m = make_model(specs);
    SparsificationOptions so;
    so.measure = SparsityMeasure::l0;
    so.lambda = 0.01;
    const auto rep = sparsify(m, SegmentSet{data}, so, est);
    CHECK(m.active_count() == 2);
    CHECK(m.active[0]);
    CHECK(m.active[8]);
    // Inactive parameters are exactly zero and their columns are irrelevant.
    for (Index j = 0; j < m.regressor_count(); ++j) {
      if (!m.active[static_cast<std::size_t>(j)]) CHECK(m.mapping.theta(j) == 0.0);
    }
    CHECK(rep.names.size() == 16);
  }
  SUBCASE("kept regressors survive") {
    auto m = make_model(specs);
    SparsificationOptions so;
    so.measure = SparsityMeasure::l0;
    so.lambda = 0.01;
    so.keep = {"u1(t-5)"};
    sparsify(m, SegmentSet{data}, so, est);
    CHECK(m.active_count() == 3);
    CHECK(m.active[12]);
    so.keep = {"nope"};
    CHECK_THROWS_AS(sparsify(m, SegmentSet{data}, so, est), ConfigError);
  }
  SUBCASE("too large a lambda is reported") {
    auto m = make_model(specs);
    SparsificationOptions so;
    so.lambda = 1e6;
    CHECK_THROWS_WITH_AS(sparsify(m, SegmentSet{data}, so, est), doctest::Contains("eliminated every regressor"),
                         ConfigError);
  }
  SUBCASE("option validation") {
    auto m = make_model(specs);
    SparsificationOptions so;
    so.lambda = -1.0;
    CHECK_THROWS_AS(sparsify(m, SegmentSet{data}, so, est), ConfigError);
    so.lambda = 0.1;
    so.measure = SparsityMeasure::log_sum;
    so.log_sum_epsilon = 0.0;
    CHECK_THROWS_AS(sparsify(m, SegmentSet{data}, so, est), ConfigError);
  }
}

TEST_CASE("deactivated regressors cannot influence a network model") {
  const auto data = nonlinear_system(300, 16);
  auto m = make_model({lin("y1", {1, 2}), lin("u1", {1, 2, 3})}, {MappingKind::sigmoid_network, 5, {}, Activation::tanh, 4});
  m.active = {true, false, true, true, false};
  NlarxTrainingOptions opt;
  opt.lm.max_iter = 10;
  train_nlarx(m, data, opt);
  for (Index i : regressor_group(m.mapping, 1)) CHECK(mapping_params(m.mapping)(i) == 0.0);
  for (Index i : regressor_group(m.mapping, 4)) CHECK(mapping_params(m.mapping)(i) == 0.0);
  // Scramble the column feeding u1(t-3) only: replace u at the samples it reads.
  const auto rm = build_matrix(m.regressors, data);
  MatrixXd z = m.regressor_scaling.apply(rm.values).transpose();
  const VectorXd f0 = evaluate_mapping(m.mapping, z);
  CounterRng rng(17);
  for (Index k = 0; k < z.cols(); ++k) {
    z(1, k) = 1e3 * rng.normal();
    z(4, k) = 1e3 * rng.normal();
  }
  CHECK(evaluate_mapping(m.mapping, z) == f0);
}
