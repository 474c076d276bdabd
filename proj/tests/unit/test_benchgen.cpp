#include "nlid/benchgen.hpp"
#include "nlid/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace nlid;

namespace {

MatrixXd whole(const BenchmarkData& d, bool outputs) {
  const auto& e = d.estimation;
  const auto& v = d.validation;
  const MatrixXd& a = outputs ? e.outputs() : e.inputs();
  const MatrixXd& b = outputs ? v.outputs() : v.inputs();
  MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace

TEST_CASE("benchmark registry") {
  std::set<std::string> names;
  for (const auto& s : benchmark_systems()) {
    names.insert(s.name);
    const auto d = generate(s.name, 200, s.ts, 1);
    CHECK(d.estimation.samples() == 140);
    CHECK(d.validation.samples() == 60);
    CHECK(d.validation.start_time() == doctest::Approx(140 * s.ts));
    CHECK(d.estimation.input_names() == s.input_names);
    CHECK(d.estimation.output_names() == s.output_names);
    CHECK(d.states.rows() == 200);
    CHECK(d.states.cols() == static_cast<Index>(s.state_names.size()));
    CHECK(whole(d, true).allFinite());
  }
  CHECK(names.count("two_tank") == 1);
  CHECK(names.count("narx_toy") == 1);
  CHECK(names.count("wiener2") == 1);
  CHECK_THROWS_WITH_AS(find_benchmark("three_tank"), doctest::Contains("three_tank"), ConfigError);
  CHECK_THROWS_AS(generate("linear1", 99, 1.0, 0), ConfigError);
  CHECK_THROWS_AS(generate("linear1", 200, 0.0, 0), ConfigError);
}

TEST_CASE("two-tank trajectory against a finer RK4") {
  const double ts = 0.2;
  const auto d = generate("two_tank", 3000, ts, 5, 0.0);
  CHECK_FALSE(d.clamped);
  const MatrixXd u = whole(d, false);
  const MatrixXd y = whole(d, true);
  auto f = [&](double x1, double x2, double uk, double& d1, double& d2) {
    d1 = -0.5 * std::sqrt(x1) + 0.3 * uk;
    d2 = 0.4 * std::sqrt(x1) - 0.2 * std::sqrt(x2);
  };
  double x1 = 0.36, x2 = 1.44;
  const int sub = 8;
  const double h = ts / sub;
  double worst = 0.0;
  for (Index k = 0; k < u.rows(); ++k) {
    worst = std::max({worst, std::abs(y(k, 0) - x2), std::abs(d.states(k, 0) - x1)});
    for (int s = 0; s < sub; ++s) {
      double a1, a2, b1, b2, c1, c2, e1, e2;
      f(x1, x2, u(k, 0), a1, a2);
      f(x1 + 0.5 * h * a1, x2 + 0.5 * h * a2, u(k, 0), b1, b2);
      f(x1 + 0.5 * h * b1, x2 + 0.5 * h * b2, u(k, 0), c1, c2);
      f(x1 + h * c1, x2 + h * c2, u(k, 0), e1, e2);
      x1 += h / 6.0 * (a1 + 2 * b1 + 2 * c1 + e1);
      x2 += h / 6.0 * (a2 + 2 * b2 + 2 * c2 + e2);
    }
  }
  CHECK(worst <= 1e-6);
  // Default input program never hits the clamp.
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK_FALSE(generate("two_tank", 3000, ts, seed).clamped);
  // The PRBS levels are the documented ones.
  CHECK(u.minCoeff() == 0.5);
  CHECK(u.maxCoeff() == 1.5);
}

TEST_CASE("generator determinism") {
  for (const auto& s : benchmark_systems()) {
    const auto a = generate(s.name, 300, s.ts, 42, 0.0);
    const auto b = generate(s.name, 300, s.ts, 42, 0.0);
    CHECK(a.estimation.outputs() == b.estimation.outputs());
    CHECK(a.estimation.inputs() == b.estimation.inputs());
    const auto c = generate(s.name, 300, s.ts, 42);
    const auto e = generate(s.name, 300, s.ts, 42);
    CHECK(c.validation.outputs() == e.validation.outputs());
    const auto other = generate(s.name, 300, s.ts, 43, 0.0);
    CHECK(other.estimation.inputs() != a.estimation.inputs());
  }
}

TEST_CASE("discrete recursions") {
  SUBCASE("linear1") {
    const auto d = generate("linear1", 500, 1.0, 3);
    const MatrixXd u = whole(d, false), y = whole(d, true);
    CHECK(y(0, 0) == 0.0);
    for (Index t = 1; t < 500; ++t) CHECK(y(t, 0) == 0.9 * y(t - 1, 0) + 0.1 * u(t - 1, 0));
  }
  SUBCASE("narx_toy noise-free") {
    const auto d = generate("narx_toy", 500, 1.0, 3, 0.0);
    const MatrixXd u = whole(d, false), y = whole(d, true);
    for (Index t = 2; t < 500; ++t) {
      CHECK(y(t, 0) == doctest::Approx(0.5 * y(t - 1, 0) + 0.8 * u(t - 1, 0) + 0.1 * y(t - 1, 0) * u(t - 2, 0))
                           .epsilon(1e-15));
    }
    CHECK(d.system.support == std::vector<std::string>{"y1(t-1)", "u1(t-1)", "prod(y1(t-1),u1(t-2))"});
  }
  SUBCASE("narx_toy equation noise level") {
    const auto clean = generate("narx_toy", 20000, 1.0, 3, 0.0);
    const auto d = generate("narx_toy", 20000, 1.0, 3, 0.05);
    const MatrixXd u = whole(d, false), y = whole(d, true);
    VectorXd e(19998);
    for (Index t = 2; t < 20000; ++t) {
      e(t - 2) = y(t, 0) - (0.5 * y(t - 1, 0) + 0.8 * u(t - 1, 0) + 0.1 * y(t - 1, 0) * u(t - 2, 0));
    }
    const VectorXd yc = whole(clean, true).col(0);
    const double sd_clean = std::sqrt((yc.array() - yc.mean()).square().mean());
    const double sd_e = std::sqrt(e.array().square().mean());
    CHECK(sd_e == doctest::Approx(0.05 * sd_clean).epsilon(0.03));
  }
  SUBCASE("wiener2") {
    const auto d = generate("wiener2", 300, 1.0, 3);
    const MatrixXd u = whole(d, false), y = whole(d, true);
    for (Index t = 2; t < 300; ++t) CHECK(y(t, 0) == doctest::Approx(std::tanh(u(t - 1, 0) - 0.5 * u(t - 2, 0))));
  }
}

TEST_CASE("measurement noise level") {
  const auto clean = generate("robot_arm", 6000, 0.05, 9, 0.0);
  const auto noisy = generate("robot_arm", 6000, 0.05, 9, 0.02);
  const VectorXd yc = whole(clean, true).col(0);
  const VectorXd e = whole(noisy, true).col(0) - yc;
  const double sd_clean = std::sqrt((yc.array() - yc.mean()).square().mean());
  CHECK(std::sqrt(e.array().square().mean()) == doctest::Approx(0.02 * sd_clean).epsilon(0.05));
  CHECK(whole(noisy, false) == whole(clean, false));
}

TEST_CASE("input programs") {
  CounterRng rng(11);
  SUBCASE("prbs holds its level between switch points") {
    const MatrixXd u = prbs_input(rng, 1000, 2, -2.0, 3.0, 10);
    for (Index c = 0; c < 2; ++c) {
      for (Index k = 0; k < 1000; ++k) {
        CHECK((u(k, c) == -2.0 || u(k, c) == 3.0));
        if (k % 10 != 0) CHECK(u(k, c) == u(k - 1, c));
      }
    }
    CHECK_THROWS_AS(prbs_input(rng, 10, 1, 0, 1, 0), ConfigError);
  }
  SUBCASE("steps have bounded hold lengths") {
    const MatrixXd u = step_input(rng, 2000, 1, 0.0, 1.0, 3, 7);
    Index run = 1;
    for (Index k = 1; k < 2000; ++k) {
      if (u(k, 0) == u(k - 1, 0)) {
        ++run;
      } else {
        CHECK(run >= 3);
        CHECK(run <= 7);
        run = 1;
      }
    }
    CHECK(u.minCoeff() >= 0.0);
    CHECK(u.maxCoeff() < 1.0);
  }
  SUBCASE("multisine spans its range") {
    const MatrixXd u = multisine_input(rng, 1000, 3, -1.0, 2.0, 10, 0.1);
    for (Index c = 0; c < 3; ++c) {
      CHECK(u.col(c).minCoeff() == doctest::Approx(-1.0));
      CHECK(u.col(c).maxCoeff() == doctest::Approx(2.0));
    }
    CHECK(u.col(0) != u.col(1));
    CHECK_THROWS_AS(multisine_input(rng, 100, 1, 0, 1, 5, 0.7), ConfigError);
  }
}
