#include "nlid/errors.hpp"
#include "nlid/model_io.hpp"
#include "nlid/rng.hpp"

#include <doctest.h>

#include <filesystem>

using namespace nlid;

namespace {

SignalTable random_table(Index n, Index nu, Index ny, std::uint64_t seed) {
  CounterRng rng(seed);
  MatrixXd u(n, nu), y(n, ny);
  for (Index k = 0; k < n; ++k) {
    for (Index c = 0; c < nu; ++c) u(k, c) = rng.uniform(-1.0, 1.0);
    for (Index c = 0; c < ny; ++c) y(k, c) = rng.uniform(-1.0, 1.0);
  }
  return from_matrices(u, y, 0.1);
}

template <class T>
T reload(const T& m) {
  const std::string doc = to_document(m);
  AnyModel back = parse_document(doc);
  REQUIRE(std::holds_alternative<T>(back));
  CHECK(to_document(back) == doc);
  return std::get<T>(back);
}

}  // namespace

TEST_CASE("neural state-space documents") {
  NssNetworkOptions o;
  o.state_hidden = {4};
  o.output_hidden = {3};
  o.seed = 7;
  auto m = create_nss(2, 1, 3, 0.1, std::nullopt, o);
  m.normalization = NormalizationState::identity(1, 3);
  m.normalization.inputs.mean(0) = 0.1 + 0.2;  // not a short decimal
  m.ode_step = 1.0 / 3.0;
  const auto back = reload(m);
  CHECK(nss_params(back) == nss_params(m));
  CHECK(back.normalization.inputs.mean(0) == m.normalization.inputs.mean(0));
  CHECK(back.ode_step == m.ode_step);
  const auto data = random_table(20, 1, 3, 1);
  VectorXd x0(2);
  x0 << 0.2, -0.1;
  CHECK(simulate(back, data, x0).outputs == simulate(m, data, x0).outputs);

  SUBCASE("latent form and time-varying") {
    o.time_invariant = false;
    auto z = create_nss(4, 1, 4, 0.0, 2, o);
    z.normalization = NormalizationState::identity(1, 4);
    const auto zb = reload(z);
    CHECK(zb.latent_dim == std::optional<Index>(2));
    CHECK_FALSE(zb.time_invariant);
    CHECK(nss_params(zb) == nss_params(z));
  }
}

TEST_CASE("nlarx documents") {
  RegressorSpec lin;
  lin.variables = {"y1", "u1"};
  lin.lags = {lag_range(1, 2), lag_range(1, 2)};
  RegressorSpec per;
  per.kind = RegressorKind::periodic;
  per.variables = {"u1"};
  per.lags = {{1}};
  per.frequencies = {0.1 + 0.2};
  RegressorSpec cus;
  cus.kind = RegressorKind::custom;
  cus.variables = {"y1", "u1"};
  cus.lags = {{1}, {2}};
  cus.function = "prod";
  for (auto kind : {MappingKind::linear_in_regressors, MappingKind::sigmoid_network, MappingKind::neural_network}) {
    MappingSpec ms;
    ms.kind = kind;
    ms.units = 3;
    ms.hidden = {3};
    ms.seed = 4;
    NlarxModel m = create_nlarx({lin, per, cus}, {"u1"}, "y1", ms);
    VectorXd p = mapping_params(m.mapping);
    CounterRng rng(2);
    for (Index i = 0; i < p.size(); ++i) p(i) = 0.1 * rng.normal();
    set_mapping_params(m.mapping, p);
    m.active[1] = false;
    m.regressor_scaling.mean(0) = 1.0 / 7.0;
    const auto back = reload(m);
    CHECK(back.regressor_names() == m.regressor_names());
    CHECK(mapping_params(back.mapping) == p);
    CHECK(back.active == m.active);
    const auto data = random_table(30, 1, 1, 3);
    CHECK(simulate(back, data) == simulate(m, data));
  }
}

TEST_CASE("hammerstein-wiener documents") {
  HwModel m;
  m.input_names = {"a", "b"};
  m.output_names = {"y"};
  m.input_nl = {create_mlp(1, 1, {3}, Activation::tanh, {WeightsInit::glorot, 1}), std::nullopt};
  m.linear.a = MatrixXd::Identity(2, 2) * 0.5;
  m.linear.b = MatrixXd::Ones(2, 2);
  m.linear.c = MatrixXd::Ones(1, 2) / 3.0;
  m.linear.d = MatrixXd::Zero(1, 2);
  m.linear.ts = 0.05;
  m.output_nl = {create_mlp(1, 1, {2, 2}, Activation::sigmoid, {WeightsInit::glorot, 2})};
  m.normalization = NormalizationState::identity(2, 1);
  const auto back = reload(m);
  CHECK(hw_params(back) == hw_params(m));
  CHECK_FALSE(back.input_nl[1].has_value());
  const auto data = SignalTable(random_table(25, 2, 1, 4).inputs(), MatrixXd::Zero(25, 1), 0.05, 0.0, {"a", "b"},
                                {"y"});
  CHECK(simulate(back, data) == simulate(m, data));
}

TEST_CASE("malformed documents") {
  const auto m = create_nss(1, 1, 1, 1.0, std::nullopt, {{2}, Activation::tanh, {2}});
  AnyModel any = m;
  std::string doc = to_document(any);
  CHECK_THROWS_AS(parse_document("{not json"), DataError);
  CHECK_THROWS_WITH_AS(parse_document("{\"kind\": \"hw\"}"), doctest::Contains("format"), DataError);
  auto replace = [&](const std::string& from, const std::string& to) {
    std::string s = doc;
    const auto at = s.find(from);
    REQUIRE(at != std::string::npos);
    return s.replace(at, from.size(), to);
  };
  CHECK_THROWS_WITH_AS(parse_document(replace("\"version\": 1", "\"version\": 9")), doctest::Contains("version 9"),
                       DataError);
  CHECK_THROWS_WITH_AS(parse_document(replace("\"kind\": \"neural_ss\"", "\"kind\": \"arx\"")),
                       doctest::Contains("arx"), DataError);
  CHECK_THROWS_AS(parse_document(replace("\"nx\": 1", "\"nx\": 2")), DataError);
  CHECK_THROWS_AS(parse_document(replace("\"activation\": \"tanh\"", "\"activation\": \"swish\"")), DataError);

  const auto path = std::filesystem::temp_directory_path() / "nlid_model_io_test.json";
  save_model(any, path);
  CHECK(to_document(load_model(path)) == doc);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), DataError);
}
