#include "doctest.h"

#include "nlid/errors.hpp"
#include "nlid/optim.hpp"
#include "nlid/rng.hpp"

#include <cmath>

using namespace nlid;

namespace {

// Hand-rolled reference of the published Adam update.
struct AdamRef {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& p, const std::vector<double>& g, double lr, double b1, double b2,
            double eps) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace

TEST_CASE("option validation") {
  TrainingOptions o;
  CHECK_NOTHROW(o.validate());
  o.learn_rate = 0.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = {};
  o.momentum = 1.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  CHECK(parse_solver("LBFGS") == Solver::lbfgs);
  CHECK_THROWS_AS(parse_solver("newton"), ConfigError);
}

TEST_CASE("adam with zero gradient leaves params unchanged") {
  TrainingOptions o;
  FirstOrderState s;
  VectorXd p(3);
  p << 1, -2, 3;
  const VectorXd before = p;
  for (int i = 0; i < 5; ++i) step_first_order(s, p, VectorXd::Zero(3), o);
  CHECK(p == before);
}

TEST_CASE("sgdm with zero momentum is gradient descent") {
  TrainingOptions o;
  o.solver = Solver::sgdm;
  o.momentum = 0.0;
  o.learn_rate = 0.1;
  FirstOrderState s;
  VectorXd p(2), g(2);
  p << 1, 2;
  g << 0.5, -4;
  step_first_order(s, p, g, o);
  CHECK(p(0) == doctest::Approx(1 - 0.05));
  CHECK(p(1) == doctest::Approx(2 + 0.4));
}

TEST_CASE("adam matches a reference implementation") {
  TrainingOptions o;
  FirstOrderState s;
  VectorXd p = VectorXd::Zero(4);
  std::vector<double> ref(4, 0.0);
  AdamRef r;
  step_first_order(s, p, VectorXd::Ones(4), o);
  r.step(ref, {1, 1, 1, 1}, o.learn_rate, o.beta1, o.beta2, o.epsilon);
  for (int i = 0; i < 4; ++i) {
    CHECK(p(i) == doctest::Approx(ref[i]).epsilon(1e-14));
    CHECK(p(i) == doctest::Approx(-o.learn_rate).epsilon(1e-6));
  }
  CounterRng rng(3);
  for (int k = 0; k < 50; ++k) {
    VectorXd g(4);
    std::vector<double> gv(4);
    for (int i = 0; i < 4; ++i) gv[i] = g(i) = rng.normal();
    step_first_order(s, p, g, o);
    r.step(ref, gv, o.learn_rate, o.beta1, o.beta2, o.epsilon);
  }
  for (int i = 0; i < 4; ++i) CHECK(p(i) == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("first-order steps reject bad gradients") {
  TrainingOptions o;
  FirstOrderState s;
  VectorXd p = VectorXd::Zero(2);
  VectorXd g(2);
  g << 1, std::nan("");
  CHECK_THROWS_AS(step_first_order(s, p, g, o), NumericalError);
  CHECK_THROWS_AS(step_first_order(s, p, VectorXd::Zero(3), o), DataError);
}

TEST_CASE("rmsprop descends on a quadratic") {
  TrainingOptions o;
  o.solver = Solver::rmsprop;
  o.learn_rate = 0.01;
  FirstOrderState s;
  VectorXd p(2);
  p << 1, -1;
  for (int i = 0; i < 500; ++i) step_first_order(s, p, p, o);
  CHECK(p.norm() < 0.05);
}

TEST_CASE("lbfgs on a quadratic") {
  const Objective f = [](const VectorXd& x, VectorXd& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
  const auto res = minimize_lbfgs(f, VectorXd::Ones(2));
  CHECK(res.x.norm() <= 1e-10);
  CHECK(res.iterations <= 10);
}

TEST_CASE("lbfgs on Rosenbrock") {
  const Objective f = [](const VectorXd& x, VectorXd& g) {
    const double a = 1 - x(0), b = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = -2 * a - 400 * x(0) * b;
    g(1) = 200 * b;
    return a * a + 100 * b * b;
  };
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  LbfgsOptions o;
  o.max_iter = 200;
  const auto res = minimize_lbfgs(f, x0, o);
  CHECK(res.loss <= 1e-8);
  CHECK(res.iterations <= 200);
  for (std::size_t i = 1; i < res.loss_trace.size(); ++i) {
    CHECK(res.loss_trace[i] <= res.loss_trace[i - 1]);
  }

  // Plain gradient descent with the same line search needs far more iterations.
  VectorXd x = x0, g(2);
  double fx = f(x, g);
  int gd_iters = 0;
  while (fx > 1e-8 && gd_iters < 5000) {
    double a = 1.0;
    VectorXd g2(2);
    while (f(x - a * g, g2) > fx - 1e-4 * a * g.squaredNorm()) a *= 0.5;
    x -= a * g;
    fx = f(x, g);
    ++gd_iters;
  }
  CHECK(gd_iters > 5 * res.iterations);
}

TEST_CASE("lbfgs at a stationary point returns immediately") {
  const Objective f = [](const VectorXd& x, VectorXd& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
  const auto res = minimize_lbfgs(f, VectorXd::Zero(3));
  CHECK(res.iterations == 0);
  CHECK(res.reason == StopReason::gradient_tolerance);
}

TEST_CASE("lbfgs finite termination on quadratics") {
  CounterRng rng(4);
  for (int p : {2, 4, 6, 8}) {
    MatrixXd m(p, p);
    for (Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    const MatrixXd a = m * m.transpose() + MatrixXd::Identity(p, p);
    VectorXd b(p);
    for (Index i = 0; i < p; ++i) b(i) = rng.normal();
    const Objective f = [&](const VectorXd& x, VectorXd& g) {
      g = a * x - b;
      return 0.5 * x.dot(a * x) - b.dot(x);
    };
    LbfgsOptions o;
    o.memory = 1000;
    o.grad_tolerance = 1e-8;
    const auto res = minimize_lbfgs(f, VectorXd::Zero(p), o);
    const VectorXd xs = a.ldlt().solve(b);
    CAPTURE(p);
    CHECK(res.iterations <= p + 1);
    CHECK((res.x - xs).norm() <= 1e-8 * std::max(1.0, xs.norm()));
  }
}

TEST_CASE("lbfgs reports a stall on a direction it cannot improve") {
  // Non-smooth kink at 0: |x| with a gradient that lies.
  const Objective f = [](const VectorXd& x, VectorXd& g) {
    g = VectorXd::Constant(1, -1.0);
    return std::abs(x(0));
  };
  const auto res = minimize_lbfgs(f, VectorXd::Zero(1));
  CHECK(res.reason == StopReason::line_search_stall);
  CHECK(res.x(0) == 0.0);
}

TEST_CASE("lm on a linear residual") {
  CounterRng rng(5);
  MatrixXd a(10, 3);
  VectorXd b(10);
  for (Index i = 0; i < a.size(); ++i) a(i) = rng.normal();
  for (Index i = 0; i < b.size(); ++i) b(i) = rng.normal();
  LMOptions o;
  o.max_iter = 3;
  const auto rep = minimize_lm([&](const VectorXd& x) -> VectorXd { return a * x - b; },
                               [&](const VectorXd&) -> MatrixXd { return a; }, VectorXd::Zero(3), o);
  const VectorXd ls = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  CHECK(rep.iterations <= 3);
  CHECK((rep.x - ls).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("lm finds a scalar root") {
  const auto rep = minimize_lm(
      [](const VectorXd& x) -> VectorXd { return VectorXd::Constant(1, x(0) * x(0) - 4.0); },
      [](const VectorXd& x) -> MatrixXd { return MatrixXd::Constant(1, 1, 2.0 * x(0)); },
      VectorXd::Ones(1));
  CHECK(std::abs(rep.x(0) - 2.0) <= 1e-8);
}

TEST_CASE("lm at the optimum takes no steps") {
  LMOptions o;
  const auto rep = minimize_lm([](const VectorXd& x) -> VectorXd { return x; },
                               [](const VectorXd& x) -> MatrixXd {
                                 return MatrixXd::Identity(x.size(), x.size());
                               },
                               VectorXd::Zero(2), o);
  CHECK(rep.accepted_steps == 0);
  CHECK(rep.iterations == 0);
  CHECK(rep.damping == o.initial_damping);
}

TEST_CASE("lm accepted steps strictly decrease the cost") {
  CounterRng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const double a0 = rng.uniform(0.5, 2), k0 = rng.uniform(-1, 1);
    VectorXd t = VectorXd::LinSpaced(30, 0, 3), y(30);
    for (Index i = 0; i < 30; ++i) y(i) = a0 * std::exp(k0 * t(i)) + 0.01 * rng.normal();
    const auto rep = minimize_lm(
        [&](const VectorXd& x) -> VectorXd {
          return (x(0) * (x(1) * t.array()).exp() - y.array()).matrix();
        },
        [&](const VectorXd& x) -> MatrixXd {
          MatrixXd j(30, 2);
          j.col(0) = (x(1) * t.array()).exp().matrix();
          j.col(1) = (x(0) * t.array() * (x(1) * t.array()).exp()).matrix();
          return j;
        },
        VectorXd::Ones(2) * 0.1);
    for (std::size_t i = 1; i < rep.cost_trace.size(); ++i) {
      CHECK(rep.cost_trace[i] < rep.cost_trace[i - 1]);
    }
    CHECK(std::abs(rep.x(0) - a0) < 0.05);
    CHECK(rep.damping > 0.0);
  }
}

TEST_CASE("lm rejects non-finite residual at x0") {
  CHECK_THROWS_AS(minimize_lm([](const VectorXd&) -> VectorXd { return VectorXd::Constant(1, NAN); },
                              [](const VectorXd&) -> MatrixXd { return MatrixXd::Ones(1, 1); },
                              VectorXd::Zero(1)),
                  NumericalError);
}

TEST_CASE("adam steady-state step is invariant to gradient scale") {
  TrainingOptions o;
  VectorXd g(3);
  g << 0.3, -2.0, 5.0;
  auto last_step = [&](double scale) {
    FirstOrderState s;
    VectorXd p = VectorXd::Zero(3), prev = p;
    for (int i = 0; i < 100; ++i) {
      prev = p;
      step_first_order(s, p, scale * g, o);
    }
    return VectorXd(p - prev);
  };
  const VectorXd a = last_step(1.0);
  for (double k : {0.01, 7.0, 1e3}) CHECK((last_step(k) - a).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("optimizers are deterministic") {
  CounterRng rng(7);
  std::vector<VectorXd> grads;
  for (int i = 0; i < 30; ++i) {
    VectorXd g(4);
    for (Index j = 0; j < 4; ++j) g(j) = rng.normal();
    grads.push_back(g);
  }
  for (auto solver : {Solver::adam, Solver::sgdm, Solver::rmsprop}) {
    TrainingOptions o;
    o.solver = solver;
    VectorXd p1 = VectorXd::Ones(4), p2 = VectorXd::Ones(4);
    FirstOrderState s1, s2;
    for (const auto& g : grads) {
      step_first_order(s1, p1, g, o);
      step_first_order(s2, p2, g, o);
      CHECK(p1 == p2);
    }
  }
}
