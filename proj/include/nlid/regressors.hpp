#pragma once

#include "nlid/autodiff.hpp"
#include "nlid/signal_data.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace nlid {

enum class RegressorKind { linear, polynomial, periodic, custom };

std::string to_string(RegressorKind k);
RegressorKind parse_regressor_kind(const std::string& text);

/// One family of candidate regressors.
///   linear:     v(t-k) for each variable and lag
///   polynomial: v(t-k)^p for p = 2..degree
///   periodic:   sin(w*v(t-k)) and/or cos(w*v(t-k)) for each w
///   custom:     function(v1(t-k1), v2(t-k2), ...) with one lag per variable;
///               functions: prod (any arity), abs, tanh (one argument)
struct RegressorSpec {
  RegressorKind kind = RegressorKind::linear;
  std::vector<std::string> variables;
  std::vector<std::vector<int>> lags;  // per variable
  int degree = 2;
  std::vector<double> frequencies;
  bool use_sin = true;
  bool use_cos = true;
  std::string function;
};

/// Convenience: lags first..last inclusive.
std::vector<int> lag_range(int first, int last);

struct LaggedVariable {
  std::string variable;
  bool is_output = false;
  Index channel = 0;
  int lag = 0;
};

enum class RegressorOp { power, sin, cos, prod, abs, tanh };

struct Regressor {
  std::string name;
  RegressorOp op = RegressorOp::power;
  std::vector<LaggedVariable> args;
  int power = 1;
  double omega = 1.0;

  int max_lag() const;
  bool uses_output() const;
};

/// Expands specs in spec order, then variable order, then ascending lag, then
/// degree / frequency (sin before cos). Throws ConfigError on an unknown
/// variable, an output lag below 1, a negative lag, an empty lag list, or a
/// duplicate generated name.
std::vector<Regressor> expand_regressors(const std::vector<RegressorSpec>& specs,
                                         const std::vector<std::string>& input_names,
                                         const std::vector<std::string>& output_names);
std::vector<std::string> expand(const std::vector<RegressorSpec>& specs,
                                const std::vector<std::string>& input_names,
                                const std::vector<std::string>& output_names);

/// Inverse of the canonical name grammar, e.g. "y1(t-2)", "u1(t-1)^2",
/// "sin(1.5*u1(t-3))", "prod(y1(t-1),u1(t-2))".
Regressor parse_regressor(const std::string& name, const std::vector<std::string>& input_names,
                          const std::vector<std::string>& output_names);

int max_lag(const std::vector<Regressor>& regs);

/// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

/// Value of one regressor given a getter for its lagged arguments. Works
/// for double and for ad::Var.
template <class T, class Get>
T evaluate(const Regressor& r, Get&& get) {
  using std::abs;
  using std::cos;
  using std::sin;
  using std::tanh;
  if constexpr (std::is_same_v<T, double>) {
    switch (r.op) {
      case RegressorOp::power: {
        const double v = get(r.args[0]);
        double out = v;
        for (int p = 1; p < r.power; ++p) out *= v;
        return out;
      }
      case RegressorOp::sin: return sin(r.omega * get(r.args[0]));
      case RegressorOp::cos: return cos(r.omega * get(r.args[0]));
      case RegressorOp::abs: return abs(get(r.args[0]));
      case RegressorOp::tanh: return tanh(get(r.args[0]));
      case RegressorOp::prod: {
        double out = get(r.args[0]);
        for (std::size_t i = 1; i < r.args.size(); ++i) out *= get(r.args[i]);
        return out;
      }
    }
    return 0.0;
  } else {
    switch (r.op) {
      case RegressorOp::power: {
        const T v = get(r.args[0]);
        T out = v;
        for (int p = 1; p < r.power; ++p) out = ad::mul(out, v);
        return out;
      }
      case RegressorOp::sin: return ad::sin(ad::scale(get(r.args[0]), r.omega));
      case RegressorOp::cos: return ad::cos(ad::scale(get(r.args[0]), r.omega));
      case RegressorOp::abs: return ad::abs(get(r.args[0]));
      case RegressorOp::tanh: return ad::tanh(get(r.args[0]));
      case RegressorOp::prod: {
        T out = get(r.args[0]);
        for (std::size_t i = 1; i < r.args.size(); ++i) out = ad::mul(out, get(r.args[i]));
        return out;
      }
    }
    return get(r.args[0]);
  }
}

struct RegressorMatrix {
  MatrixXd values;  // (N - L) x R
  Index row_offset = 0;  // L: row k is time index k + L
  std::vector<std::string> names;
};

/// Throws DataError when the data has no more than L samples.
RegressorMatrix build_matrix(const std::vector<Regressor>& regs, const SignalTable& data);
RegressorMatrix build_matrix(const std::vector<RegressorSpec>& specs, const SignalTable& data);

}  // namespace nlid
