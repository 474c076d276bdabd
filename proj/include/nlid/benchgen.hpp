#pragma once

#include "nlid/rng.hpp"
#include "nlid/signal_data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nlid {

enum class InputProgram { prbs, multisine, steps };

std::string to_string(InputProgram p);

// Synthetic benchmark systems. Continuous ones are integrated with RK4
// (substeps per sample, ZOH input); discrete ones are direct recursions.
//
//   linear1    x(k+1) = 0.9 x(k) + 0.1 u(k), y = x; prbs on {-1, 1}, hold 1
//   narx_toy   y(t) = 0.5 y(t-1) + 0.8 u(t-1) + 0.1 y(t-1) u(t-2) + e(t);
//              prbs on {-1, 1}, hold 1; e is equation noise
//   two_tank   dx1 = -k1 sqrt(x1) + k4 u, dx2 = k2 sqrt(x1) - k3 sqrt(x2),
//              y = x2, k = (0.5, 0.4, 0.2, 0.3), states clamped at 0;
//              prbs on {0.5, 1.5}, hold 25
//   si_engine  4 inputs (throttle, wastegate, speed, spark), 1 output
//              (torque): dp = (-p + tanh(1.5 throttle) - 0.3 wastegate) / 0.4,
//              dq = (-q + p (1 + 0.2 speed) - 0.1 spark^2) / 0.8, y = q;
//              multisine, 20 tones up to 0.2 / Ts per channel
//   robot_arm  damped pendulum q'' = u - 0.5 q' - 2 sin q, y = q;
//              steps in [-1.5, 1.5], hold 20..100
//   ic_engine  inputs fuel, load; dw = (-w + 3 tanh(1.5 fuel) - 0.5 load) / 0.5,
//              y = w + 0.1 w^2; steps in [0, 1], hold 20..100
//   wiener2    x(k+1) = A x + B u, w = x1, y = tanh(w), A = [0 1; 0 0],
//              B = [1; -0.5], so w(t) = u(t-1) - 0.5 u(t-2); i.i.d. uniform
//              input on [-1, 1] (steps with hold 1)
//
// Measurement noise (all but narx_toy) is Gaussian with std noise * std(y)
// per output channel. narx_toy draws e with std noise * std of its
// noise-free output.
struct BenchmarkSystem {
  std::string name;
  std::string description;
  bool continuous = false;
  InputProgram program = InputProgram::prbs;
  double noise = 0.0;  // default noise level
  double ts = 1.0;     // default sample time
  Index samples = 1000;
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  std::vector<std::string> state_names;
  // Regressors of the true NARX structure, when there is one.
  std::vector<std::string> support;
};

const std::vector<BenchmarkSystem>& benchmark_systems();
/// Throws ConfigError on an unknown name.
const BenchmarkSystem& find_benchmark(const std::string& name);

struct BenchmarkData {
  BenchmarkSystem system;
  SignalTable estimation;  // first 70%
  SignalTable validation;  // last 30%
  MatrixXd states;         // noise-free, N x nx, whole record
  bool clamped = false;    // a state clamp fired somewhere
  double noise = 0.0;
};

/// Throws ConfigError on an unknown system, N < 100 or Ts <= 0. A negative
/// noise argument selects the system default.
BenchmarkData generate(const std::string& system, Index n, double ts, std::uint64_t seed, double noise = -1.0);

// Input programs, one column per channel.
MatrixXd prbs_input(CounterRng& rng, Index n, Index channels, double lo, double hi, Index hold);
MatrixXd step_input(CounterRng& rng, Index n, Index channels, double lo, double hi, Index min_hold, Index max_hold);
/// Sum of `tones` sines at evenly spaced frequencies up to f_max (cycles per
/// sample) with random phases, scaled into [lo, hi].
MatrixXd multisine_input(CounterRng& rng, Index n, Index channels, double lo, double hi, Index tones, double f_max);

}  // namespace nlid
