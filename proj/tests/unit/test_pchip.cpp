#include "doctest.h"

#include "nlid/errors.hpp"
#include "nlid/pchip.hpp"
#include "nlid/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace nlid;

TEST_CASE("pchip reproduces the knots") {
  CounterRng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> t{0.0}, v{rng.uniform(-1, 1)};
    for (int k = 0; k < 12; ++k) {
      t.push_back(t.back() + rng.uniform(0.1, 1.0));
      v.push_back(rng.uniform(-1, 1));
    }
    const Pchip p(t, v);
    for (std::size_t k = 0; k < t.size(); ++k) CHECK(p(t[k]) == v[k]);
  }
}

TEST_CASE("two knots give a straight line") {
  const Pchip p({1.0, 3.0}, {2.0, 6.0});
  CHECK(p(2.0) == doctest::Approx(4.0));
  CHECK(p.derivative(1.5) == doctest::Approx(2.0));
}

TEST_CASE("pchip preserves monotonicity") {
  CounterRng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> t{0.0}, v{0.0};
    for (int k = 0; k < 10; ++k) {
      t.push_back(t.back() + rng.uniform(0.05, 2.0));
      // Flat steps are allowed.
      v.push_back(v.back() + (rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.0, 3.0)));
    }
    const Pchip p(t, v);
    double prev = p(t.front());
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
      for (int s = 1; s <= 20; ++s) {
        const double q = t[k] + (t[k + 1] - t[k]) * s / 20.0;
        const double val = p(std::min(q, t.back()));
        CHECK(val >= prev - 1e-12);
        CHECK(val >= std::min(v[k], v[k + 1]) - 1e-12);
        CHECK(val <= std::max(v[k], v[k + 1]) + 1e-12);
        prev = val;
      }
    }
  }
}

TEST_CASE("pchip is C1 at interior knots") {
  const Pchip p({0, 1, 2.5, 3, 5}, {0, 2, 1, 4, 4.5});
  for (double k : {1.0, 2.5, 3.0}) {
    const double left = p.derivative(k - 1e-9);
    const double right = p.derivative(k + 1e-9);
    CHECK(left == doctest::Approx(right).epsilon(1e-6));
  }
}

TEST_CASE("pchip contract errors") {
  CHECK_THROWS_AS(Pchip({0.0}, {1.0}), DataError);
  CHECK_THROWS_AS(Pchip({0.0, 0.0}, {1.0, 2.0}), DataError);
  const Pchip p({0, 1}, {0, 1});
  CHECK_THROWS_AS(p(1.5), DataError);
  CHECK_THROWS_AS(p(-0.1), DataError);
}

TEST_CASE("flat runs stay exactly flat") {
  const Pchip p({0.0, 0.3, 1.1, 1.7, 2.0, 3.4}, {1.0, 1.0, 1.0, 2.5, 2.5, 7.0});
  double prev = p(0.0);
  for (int k = 1; k <= 3400; ++k) {
    const double t = k * 0.001;
    const double v = p(t);
    if (t <= 1.1) CHECK(v == 1.0);
    if (t >= 1.7 && t <= 2.0) CHECK(v == 2.5);
    CHECK(v >= prev);
    prev = v;
  }
}
