#include "nlid/benchgen.hpp"

#include "nlid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace nlid {

namespace {

constexpr int kSubsteps = 4;

using Map = std::function<VectorXd(const VectorXd& x, const VectorXd& u)>;

struct Dynamics {
  VectorXd x0;
  Map f;  // dx/dt (continuous) or x(k+1) (discrete)
  Map h;
  bool clamp = false;
};

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

double sqrt0(double x) { return std::sqrt(std::max(x, 0.0)); }

Dynamics dynamics(const std::string& name) {
  Dynamics d;
  if (name == "linear1") {
    d.x0 = VectorXd::Zero(1);
    d.f = [](const VectorXd& x, const VectorXd& u) { return vec({0.9 * x(0) + 0.1 * u(0)}); };
    d.h = [](const VectorXd& x, const VectorXd&) { return vec({x(0)}); };
  } else if (name == "two_tank") {
    const double k1 = 0.5, k2 = 0.4, k3 = 0.2, k4 = 0.3;
    // steady state at u = 1
    const double x1 = std::pow(k4 / k1, 2.0);
    d.x0 = vec({x1, std::pow(k2 / k3, 2.0) * x1});
    d.f = [=](const VectorXd& x, const VectorXd& u) {
      return vec({-k1 * sqrt0(x(0)) + k4 * u(0), k2 * sqrt0(x(0)) - k3 * sqrt0(x(1))});
    };
    d.h = [](const VectorXd& x, const VectorXd&) { return vec({x(1)}); };
    d.clamp = true;
  } else if (name == "si_engine") {
    d.x0 = VectorXd::Zero(2);
    d.f = [](const VectorXd& x, const VectorXd& u) {
      return vec({(-x(0) + std::tanh(1.5 * u(0)) - 0.3 * u(1)) / 0.4,
                  (-x(1) + x(0) * (1.0 + 0.2 * u(2)) - 0.1 * u(3) * u(3)) / 0.8});
    };
    d.h = [](const VectorXd& x, const VectorXd&) { return vec({x(1)}); };
  } else if (name == "robot_arm") {
    d.x0 = VectorXd::Zero(2);
    d.f = [](const VectorXd& x, const VectorXd& u) {
      return vec({x(1), u(0) - 0.5 * x(1) - 2.0 * std::sin(x(0))});
    };
    d.h = [](const VectorXd& x, const VectorXd&) { return vec({x(0)}); };
  } else if (name == "ic_engine") {
    d.x0 = VectorXd::Zero(1);
    d.f = [](const VectorXd& x, const VectorXd& u) {
      return vec({(-x(0) + 3.0 * std::tanh(1.5 * u(0)) - 0.5 * u(1)) / 0.5});
    };
    d.h = [](const VectorXd& x, const VectorXd&) { return vec({x(0) + 0.1 * x(0) * x(0)}); };
  } else if (name == "wiener2") {
    d.x0 = VectorXd::Zero(2);
    d.f = [](const VectorXd& x, const VectorXd& u) {
      return vec({x(1) + u(0), -0.5 * u(0)});
    };
    d.h = [](const VectorXd& x, const VectorXd&) { return vec({std::tanh(x(0))}); };
  }
  return d;
}

VectorXd rk4(const Map& f, const VectorXd& x, const VectorXd& u, double h) {
  const VectorXd k1 = f(x, u);
  const VectorXd k2 = f(x + 0.5 * h * k1, u);
  const VectorXd k3 = f(x + 0.5 * h * k2, u);
  const VectorXd k4 = f(x + h * k3, u);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

MatrixXd program(const BenchmarkSystem& sys, CounterRng& rng, Index n) {
  const Index nu = static_cast<Index>(sys.input_names.size());
  if (sys.name == "two_tank") return prbs_input(rng, n, nu, 0.5, 1.5, 25);
  if (sys.name == "si_engine") return multisine_input(rng, n, nu, -1.0, 1.0, 20, 0.2);
  if (sys.name == "robot_arm") return step_input(rng, n, nu, -1.5, 1.5, 20, 100);
  if (sys.name == "ic_engine") return step_input(rng, n, nu, 0.0, 1.0, 20, 100);
  if (sys.name == "wiener2") return step_input(rng, n, nu, -1.0, 1.0, 1, 1);
  return prbs_input(rng, n, nu, -1.0, 1.0, 1);
}

VectorXd narx_toy(const VectorXd& u, const VectorXd& e) {
  const Index n = u.size();
  VectorXd y = VectorXd::Zero(n);
  for (Index t = 1; t < n; ++t) {
    const double u2 = t >= 2 ? u(t - 2) : 0.0;
    y(t) = 0.5 * y(t - 1) + 0.8 * u(t - 1) + 0.1 * y(t - 1) * u2 + e(t);
  }
  return y;
}

double column_std(const VectorXd& v) {
  return std::sqrt((v.array() - v.mean()).square().mean());
}

}  // namespace

std::string to_string(InputProgram p) {
  switch (p) {
    case InputProgram::prbs: return "prbs";
    case InputProgram::multisine: return "multisine";
    case InputProgram::steps: return "steps";
  }
  return "prbs";
}

const std::vector<BenchmarkSystem>& benchmark_systems() {
  static const std::vector<BenchmarkSystem> systems = [] {
    std::vector<BenchmarkSystem> s;
    s.push_back({"linear1", "x(k+1) = 0.9 x(k) + 0.1 u(k), y = x", false, InputProgram::prbs, 0.0, 1.0, 1000,
                 {"u1"}, {"y1"}, {"x1"}, {}});
    s.push_back({"narx_toy", "y(t) = 0.5 y(t-1) + 0.8 u(t-1) + 0.1 y(t-1) u(t-2) + e(t)", false,
                 InputProgram::prbs, 0.01, 1.0, 1000, {"u1"}, {"y1"}, {"y1"},
                 {"y1(t-1)", "u1(t-1)", "prod(y1(t-1),u1(t-2))"}});
    s.push_back({"two_tank", "cascaded tanks, dx1 = -k1 sqrt(x1) + k4 u, dx2 = k2 sqrt(x1) - k3 sqrt(x2), y = x2",
                 true, InputProgram::prbs, 0.01, 0.2, 3000, {"u1"}, {"y1"}, {"x1", "x2"}, {}});
    s.push_back({"si_engine", "two-state engine torque model with four actuators", true, InputProgram::multisine,
                 0.01, 0.05, 4000, {"throttle", "wastegate", "speed", "spark"}, {"torque"}, {"p", "q"}, {}});
    s.push_back({"robot_arm", "damped pendulum q'' = u - 0.5 q' - 2 sin q, y = q", true, InputProgram::steps, 0.01,
                 0.05, 3000, {"torque"}, {"angle"}, {"q", "qdot"}, {}});
    s.push_back({"ic_engine", "first-order speed model with saturating fuel map and quadratic sensor", true,
                 InputProgram::steps, 0.01, 0.05, 3000, {"fuel", "load"}, {"speed"}, {"w"}, {}});
    s.push_back({"wiener2", "y = tanh(u(t-1) - 0.5 u(t-2)), an order-2 FIR block followed by tanh", false, InputProgram::steps, 0.0, 1.0, 2000,
                 {"u1"}, {"y1"}, {"x1", "x2"}, {}});
    return s;
  }();
  return systems;
}

const BenchmarkSystem& find_benchmark(const std::string& name) {
  for (const auto& s : benchmark_systems()) {
    if (s.name == name) return s;
  }
  std::string known;
  for (const auto& s : benchmark_systems()) known += (known.empty() ? "" : ", ") + s.name;
  throw ConfigError("unknown benchmark system '" + name + "' (known: " + known + ")");
}

MatrixXd prbs_input(CounterRng& rng, Index n, Index channels, double lo, double hi, Index hold) {
  if (hold < 1) throw ConfigError("prbs hold must be at least 1");
  MatrixXd u(n, channels);
  for (Index c = 0; c < channels; ++c) {
    bool high = rng.uniform() < 0.5;
    for (Index k = 0; k < n; ++k) {
      if (k > 0 && k % hold == 0 && rng.uniform() < 0.5) high = !high;
      u(k, c) = high ? hi : lo;
    }
  }
  return u;
}

MatrixXd step_input(CounterRng& rng, Index n, Index channels, double lo, double hi, Index min_hold,
                    Index max_hold) {
  if (min_hold < 1 || max_hold < min_hold) throw ConfigError("step hold range must satisfy 1 <= min <= max");
  MatrixXd u(n, channels);
  for (Index c = 0; c < channels; ++c) {
    Index k = 0;
    while (k < n) {
      const double level = rng.uniform(lo, hi);
      const auto span = max_hold - min_hold + 1;
      const Index len = min_hold + std::min<Index>(span - 1, static_cast<Index>(rng.uniform() * span));
      for (Index j = 0; j < len && k < n; ++j, ++k) u(k, c) = level;
    }
  }
  return u;
}

MatrixXd multisine_input(CounterRng& rng, Index n, Index channels, double lo, double hi, Index tones,
                         double f_max) {
  if (tones < 1 || !(f_max > 0.0 && f_max <= 0.5)) throw ConfigError("multisine needs tones >= 1 and 0 < f_max <= 0.5");
  MatrixXd u(n, channels);
  for (Index c = 0; c < channels; ++c) {
    VectorXd phase(tones);
    for (Index j = 0; j < tones; ++j) phase(j) = 2.0 * std::numbers::pi * rng.uniform();
    for (Index k = 0; k < n; ++k) {
      double s = 0.0;
      for (Index j = 0; j < tones; ++j) {
        const double f = f_max * static_cast<double>(j + 1) / static_cast<double>(tones);
        s += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(k) + phase(j));
      }
      u(k, c) = s;
    }
    const double mn = u.col(c).minCoeff(), mx = u.col(c).maxCoeff();
    u.col(c) = (lo + (hi - lo) * (u.col(c).array() - mn) / (mx - mn)).matrix();
  }
  return u;
}

BenchmarkData generate(const std::string& system, Index n, double ts, std::uint64_t seed, double noise) {
  const BenchmarkSystem& sys = find_benchmark(system);
  if (n < 100) throw ConfigError("benchmark needs N >= 100 samples, got " + std::to_string(n));
  if (!(ts > 0.0) || !std::isfinite(ts)) throw ConfigError("benchmark sample time must be positive");
  const double level = noise < 0.0 ? sys.noise : noise;
  if (!std::isfinite(level)) throw ConfigError("noise level must be finite");

  CounterRng input_rng(seed);
  CounterRng noise_rng(splitmix64(seed));
  const MatrixXd u = program(sys, input_rng, n);
  const Index ny = static_cast<Index>(sys.output_names.size());

  BenchmarkData out{sys, SignalTable(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), 1.0, 0.0, {"a"}, {"b"}),
                    SignalTable(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), 1.0, 0.0, {"a"}, {"b"}),
                    MatrixXd(), false, level};
  MatrixXd y(n, ny);

  if (sys.name == "narx_toy") {
    const VectorXd clean = narx_toy(u.col(0), VectorXd::Zero(n));
    const double sd = level * column_std(clean);
    VectorXd e(n);
    for (Index k = 0; k < n; ++k) e(k) = sd * noise_rng.normal();
    y.col(0) = narx_toy(u.col(0), e);
    out.states = y;
  } else {
    const Dynamics d = dynamics(sys.name);
    MatrixXd states(n, d.x0.size());
    VectorXd x = d.x0;
    const double h = ts / kSubsteps;
    for (Index k = 0; k < n; ++k) {
      const VectorXd uk = u.row(k).transpose();
      states.row(k) = x.transpose();
      y.row(k) = d.h(x, uk).transpose();
      if (k + 1 == n) break;
      if (sys.continuous) {
        for (int s = 0; s < kSubsteps; ++s) {
          x = rk4(d.f, x, uk, h);
          if (d.clamp) {
            for (Index i = 0; i < x.size(); ++i) {
              if (x(i) < 0.0) {
                x(i) = 0.0;
                out.clamped = true;
              }
            }
          }
        }
      } else {
        x = d.f(x, uk);
      }
    }
    out.states = states;
    for (Index c = 0; c < ny; ++c) {
      const double sd = level * column_std(y.col(c));
      for (Index k = 0; k < n; ++k) y(k, c) += sd * noise_rng.normal();
    }
  }

  const SignalTable all(u, y, ts, 0.0, sys.input_names, sys.output_names);
  auto [est, val] = split(all, 0.7);
  out.estimation = std::move(est);
  out.validation = std::move(val);
  return out;
}

}  // namespace nlid
