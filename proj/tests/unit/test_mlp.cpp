#include "doctest.h"

#include "nlid/errors.hpp"
#include "nlid/mlp.hpp"
#include "nlid/rng.hpp"

#include <cmath>

using namespace nlid;

TEST_CASE("create_mlp defaults") {
  const auto net = create_mlp(3, 2);
  CHECK(net.hidden == std::vector<Index>{64, 64});
  CHECK(net.activation == Activation::tanh);
  REQUIRE(net.layers.size() == 3);
  CHECK(net.layers[0].weights.rows() == 64);
  CHECK(net.layers[0].weights.cols() == 3);
  CHECK(net.layers[2].weights.rows() == 2);
  CHECK(net.layers[2].bias.isZero());
}

TEST_CASE("create_mlp rejects bad dimensions") {
  CHECK_THROWS_AS(create_mlp(0, 1), ConfigError);
  CHECK_THROWS_AS(create_mlp(1, 0), ConfigError);
  CHECK_THROWS_AS(create_mlp(1, 1, {4, 0}), ConfigError);
}

TEST_CASE("zeros-initialized networks output zero") {
  const auto flat = create_mlp(3, 2, {}, Activation::tanh, {WeightsInit::zeros, 0});
  const auto deep = create_mlp(3, 2, {128, 128}, Activation::tanh, {WeightsInit::zeros, 0});
  CounterRng rng(1);
  for (int i = 0; i < 10; ++i) {
    VectorXd x(3);
    for (Index k = 0; k < 3; ++k) x(k) = rng.uniform(-5, 5);
    CHECK(forward(flat, x).isZero());
    CHECK(forward(deep, x).isZero());
  }
}

TEST_CASE("identity affine layer") {
  auto net = create_mlp(3, 3, {}, Activation::tanh, {WeightsInit::zeros, 0});
  net.layers[0].weights = MatrixXd::Identity(3, 3);
  VectorXd x(3);
  x << 0.5, -2, 7;
  CHECK(forward(net, x) == x);
}

TEST_CASE("hand-set 1-1-1 tanh network") {
  auto net = create_mlp(1, 1, {1}, Activation::tanh, {WeightsInit::zeros, 0});
  net.layers[0].weights(0, 0) = 1.0;
  net.layers[1].weights(0, 0) = 2.0;
  net.layers[1].bias(0) = 1.0;
  for (double x : {-1.5, 0.0, 0.3, 2.0}) {
    CHECK(forward(net, VectorXd::Constant(1, x))(0) == doctest::Approx(2.0 * std::tanh(x) + 1.0));
  }
  CHECK(forward(net, VectorXd::Zero(1))(0) == 1.0);
}

TEST_CASE("parameter flattening") {
  auto net = create_mlp(1, 1, {2});
  CHECK(net.parameter_count() == 7);
  const VectorXd p = get_params(net);
  CHECK(p.size() == 7);
  auto copy = create_mlp(1, 1, {2}, Activation::tanh, {WeightsInit::glorot, 99});
  set_params(copy, p);
  CHECK(get_params(copy) == p);
  CHECK(copy.layers[0].weights == net.layers[0].weights);
  CHECK_THROWS_AS(set_params(copy, VectorXd::Zero(6)), DataError);

  // Row-major within a weight matrix.
  auto two = create_mlp(2, 2, {}, Activation::tanh, {WeightsInit::zeros, 0});
  VectorXd q(6);
  q << 1, 2, 3, 4, 5, 6;
  set_params(two, q);
  CHECK(two.layers[0].weights(0, 1) == 2.0);
  CHECK(two.layers[0].weights(1, 0) == 3.0);
  CHECK(two.layers[0].bias(1) == 6.0);
}

TEST_CASE("glorot bounds, mean, and seed determinism") {
  const auto net = create_mlp(40, 30, {200, 100}, Activation::tanh, {WeightsInit::glorot, 5});
  double sum = 0.0, sum_var = 0.0;
  Index count = 0;
  for (const auto& layer : net.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weights.rows() + layer.weights.cols()));
    CHECK(layer.weights.cwiseAbs().maxCoeff() <= bound);
    sum += layer.weights.sum();
    sum_var += static_cast<double>(layer.weights.size()) * bound * bound / 3.0;
    count += layer.weights.size();
  }
  REQUIRE(count >= 10000);
  CHECK(std::abs(sum) <= 3.0 * std::sqrt(sum_var));

  const auto again = create_mlp(40, 30, {200, 100}, Activation::tanh, {WeightsInit::glorot, 5});
  CHECK(get_params(again) == get_params(net));
  const auto other = create_mlp(40, 30, {200, 100}, Activation::tanh, {WeightsInit::glorot, 6});
  CHECK(get_params(other) != get_params(net));
}

TEST_CASE("forward dimension mismatch") {
  const auto net = create_mlp(3, 1, {4});
  CHECK_THROWS_AS(forward(net, VectorXd::Zero(2)), DataError);
}

TEST_CASE("batch and recorded forward agree with the vector forward") {
  for (auto act : {Activation::tanh, Activation::sigmoid, Activation::relu}) {
    const auto net = create_mlp(3, 2, {5, 4}, act, {WeightsInit::glorot, 7});
    CounterRng rng(8);
    MatrixXd x(3, 6);
    for (Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-2, 2);
    const MatrixXd batch = forward_batch(net, x);
    ad::Tape tape;
    const auto b = bind(net, tape);
    const MatrixXd rec = forward(b, tape.constant(x)).value();
    for (Index c = 0; c < x.cols(); ++c) {
      const VectorXd single = forward(net, VectorXd(x.col(c)));
      CHECK((batch.col(c) - single).cwiseAbs().maxCoeff() <= 1e-14);
      CHECK((rec.col(c) - single).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }
}

TEST_CASE("flattened tape gradient follows get_params order") {
  const auto net = create_mlp(2, 1, {3}, Activation::tanh, {WeightsInit::glorot, 3});
  VectorXd x(2);
  x << 0.4, -0.7;
  ad::Tape tape;
  const auto b = bind(net, tape);
  const auto out = ad::sum(forward(b, tape.constant(MatrixXd(x))));
  const VectorXd g = flatten_gradient(tape.gradient(out, b.leaves()));
  const VectorXd p = get_params(net);
  REQUIRE(g.size() == p.size());
  for (Index i = 0; i < p.size(); ++i) {
    auto plus = net, minus = net;
    VectorXd pp = p, pm = p;
    pp(i) += 1e-6;
    pm(i) -= 1e-6;
    set_params(plus, pp);
    set_params(minus, pm);
    const double fd = (forward(plus, x)(0) - forward(minus, x)(0)) / 2e-6;
    CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("tanh and sigmoid networks are Lipschitz in the weight norms") {
  CounterRng rng(9);
  for (auto act : {Activation::tanh, Activation::sigmoid}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto net = create_mlp(4, 3, {8, 6}, act, {WeightsInit::glorot, static_cast<std::uint64_t>(trial)});
      double bound = 1.0;
      for (const auto& layer : net.layers) {
        bound *= layer.weights.jacobiSvd().singularValues()(0);
      }
      VectorXd a(4), c(4);
      for (Index k = 0; k < 4; ++k) {
        a(k) = rng.uniform(-3, 3);
        c(k) = rng.uniform(-3, 3);
      }
      CHECK((forward(net, a) - forward(net, c)).norm() <= bound * (a - c).norm() + 1e-12);
    }
  }
}
