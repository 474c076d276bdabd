#include "nlid/regressors.hpp"

#include "nlid/errors.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace nlid {

std::string to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::linear: return "linear";
    case RegressorKind::polynomial: return "polynomial";
    case RegressorKind::periodic: return "periodic";
    case RegressorKind::custom: return "custom";
  }
  return "linear";
}

RegressorKind parse_regressor_kind(const std::string& text) {
  if (text == "linear") return RegressorKind::linear;
  if (text == "polynomial") return RegressorKind::polynomial;
  if (text == "periodic") return RegressorKind::periodic;
  if (text == "custom") return RegressorKind::custom;
  throw ConfigError("unknown regressor kind '" + text + "'");
}

std::vector<int> lag_range(int first, int last) {
  std::vector<int> out;
  for (int k = first; k <= last; ++k) out.push_back(k);
  return out;
}

int Regressor::max_lag() const {
  int m = 0;
  for (const auto& a : args) m = std::max(m, a.lag);
  return m;
}

bool Regressor::uses_output() const {
  return std::any_of(args.begin(), args.end(), [](const LaggedVariable& a) { return a.is_output; });
}

int max_lag(const std::vector<Regressor>& regs) {
  int m = 0;
  for (const auto& r : regs) m = std::max(m, r.max_lag());
  return m;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string lagged_name(const LaggedVariable& v) {
  return v.lag == 0 ? v.variable + "(t)" : v.variable + "(t-" + std::to_string(v.lag) + ")";
}

LaggedVariable resolve(const std::string& variable, int lag, const std::vector<std::string>& inputs,
                       const std::vector<std::string>& outputs) {
  LaggedVariable v;
  v.variable = variable;
  v.lag = lag;
  if (auto it = std::find(outputs.begin(), outputs.end(), variable); it != outputs.end()) {
    v.is_output = true;
    v.channel = it - outputs.begin();
    if (lag < 1) {
      throw ConfigError("output variable '" + variable + "' needs lags >= 1 (got " + std::to_string(lag) + ")");
    }
  } else if (auto jt = std::find(inputs.begin(), inputs.end(), variable); jt != inputs.end()) {
    v.channel = jt - inputs.begin();
    if (lag < 0) throw ConfigError("negative lag for '" + variable + "'");
  } else {
    throw ConfigError("unknown regressor variable '" + variable + "'");
  }
  return v;
}

std::string make_name(const Regressor& r) {
  switch (r.op) {
    case RegressorOp::power: {
      const std::string base = lagged_name(r.args[0]);
      return r.power == 1 ? base : base + "^" + std::to_string(r.power);
    }
    case RegressorOp::sin: return "sin(" + format_number(r.omega) + "*" + lagged_name(r.args[0]) + ")";
    case RegressorOp::cos: return "cos(" + format_number(r.omega) + "*" + lagged_name(r.args[0]) + ")";
    case RegressorOp::abs: return "abs(" + lagged_name(r.args[0]) + ")";
    case RegressorOp::tanh: return "tanh(" + lagged_name(r.args[0]) + ")";
    case RegressorOp::prod: {
      std::string s = "prod(";
      for (std::size_t i = 0; i < r.args.size(); ++i) s += (i ? "," : "") + lagged_name(r.args[i]);
      return s + ")";
    }
  }
  return {};
}

RegressorOp custom_op(const std::string& fn) {
  if (fn == "prod") return RegressorOp::prod;
  if (fn == "abs") return RegressorOp::abs;
  if (fn == "tanh") return RegressorOp::tanh;
  throw ConfigError("unknown custom regressor function '" + fn + "' (known: prod, abs, tanh)");
}

}  // namespace

std::vector<Regressor> expand_regressors(const std::vector<RegressorSpec>& specs,
                                         const std::vector<std::string>& input_names,
                                         const std::vector<std::string>& output_names) {
  std::vector<Regressor> out;
  for (const auto& spec : specs) {
    if (spec.variables.empty()) throw ConfigError("regressor spec without variables");
    if (spec.lags.size() != spec.variables.size()) {
      throw ConfigError("regressor spec needs one lag list per variable");
    }
    for (const auto& l : spec.lags) {
      if (l.empty()) throw ConfigError("empty lag list in regressor spec");
    }
    if (spec.kind == RegressorKind::custom) {
      Regressor r;
      r.op = custom_op(spec.function);
      for (std::size_t v = 0; v < spec.variables.size(); ++v) {
        if (spec.lags[v].size() != 1) throw ConfigError("custom regressors take one lag per variable");
        r.args.push_back(resolve(spec.variables[v], spec.lags[v][0], input_names, output_names));
      }
      if (r.op != RegressorOp::prod && r.args.size() != 1) {
        throw ConfigError("custom function '" + spec.function + "' takes one argument");
      }
      out.push_back(std::move(r));
      continue;
    }
    if (spec.kind == RegressorKind::polynomial && spec.degree < 2) {
      throw ConfigError("polynomial degree must be >= 2");
    }
    if (spec.kind == RegressorKind::periodic && (spec.frequencies.empty() || !(spec.use_sin || spec.use_cos))) {
      throw ConfigError("periodic regressors need frequencies and sin and/or cos");
    }
    for (std::size_t v = 0; v < spec.variables.size(); ++v) {
      std::vector<int> lags = spec.lags[v];
      std::sort(lags.begin(), lags.end());
      lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
      for (int lag : lags) {
        const LaggedVariable arg = resolve(spec.variables[v], lag, input_names, output_names);
        switch (spec.kind) {
          case RegressorKind::linear: out.push_back({{}, RegressorOp::power, {arg}, 1, 1.0}); break;
          case RegressorKind::polynomial:
            for (int p = 2; p <= spec.degree; ++p) out.push_back({{}, RegressorOp::power, {arg}, p, 1.0});
            break;
          case RegressorKind::periodic:
            for (double w : spec.frequencies) {
              if (spec.use_sin) out.push_back({{}, RegressorOp::sin, {arg}, 1, w});
              if (spec.use_cos) out.push_back({{}, RegressorOp::cos, {arg}, 1, w});
            }
            break;
          case RegressorKind::custom: break;
        }
      }
    }
  }
  std::set<std::string> seen;
  for (auto& r : out) {
    r.name = make_name(r);
    if (!seen.insert(r.name).second) throw ConfigError("duplicate regressor '" + r.name + "'");
  }
  return out;
}

std::vector<std::string> expand(const std::vector<RegressorSpec>& specs,
                                const std::vector<std::string>& input_names,
                                const std::vector<std::string>& output_names) {
  std::vector<std::string> names;
  for (const auto& r : expand_regressors(specs, input_names, output_names)) names.push_back(r.name);
  return names;
}

namespace {

// "v(t)" or "v(t-k)"
LaggedVariable parse_lagged(const std::string& text, const std::vector<std::string>& inputs,
                            const std::vector<std::string>& outputs, const std::string& whole) {
  const auto open = text.rfind("(t");
  if (open == std::string::npos || open == 0 || text.back() != ')') {
    throw ConfigError("malformed regressor '" + whole + "'");
  }
  const std::string var = text.substr(0, open);
  const std::string inner = text.substr(open + 2, text.size() - open - 3);
  int lag = 0;
  if (!inner.empty()) {
    if (inner[0] != '-') throw ConfigError("malformed regressor '" + whole + "'");
    const auto res = std::from_chars(inner.data() + 1, inner.data() + inner.size(), lag);
    if (res.ec != std::errc() || res.ptr != inner.data() + inner.size()) {
      throw ConfigError("malformed lag in regressor '" + whole + "'");
    }
  }
  return resolve(var, lag, inputs, outputs);
}

}  // namespace

Regressor parse_regressor(const std::string& name, const std::vector<std::string>& input_names,
                          const std::vector<std::string>& output_names) {
  Regressor r;
  auto call = [&](const std::string& fn) {
    return name.rfind(fn + "(", 0) == 0 && name.back() == ')' ? name.substr(fn.size() + 1, name.size() - fn.size() - 2)
                                                               : std::string();
  };
  if (std::string body = call("sin"); !body.empty() || !(body = call("cos")).empty()) {
    r.op = name[0] == 's' ? RegressorOp::sin : RegressorOp::cos;
    const auto star = body.find('*');
    if (star == std::string::npos) throw ConfigError("malformed regressor '" + name + "'");
    const std::string w = body.substr(0, star);
    const auto res = std::from_chars(w.data(), w.data() + w.size(), r.omega);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) {
      throw ConfigError("malformed frequency in regressor '" + name + "'");
    }
    r.args.push_back(parse_lagged(body.substr(star + 1), input_names, output_names, name));
  } else if (std::string pb = call("prod"); !pb.empty()) {
    r.op = RegressorOp::prod;
    std::size_t start = 0;
    while (start <= pb.size()) {
      const auto comma = pb.find(',', start);
      const auto end = comma == std::string::npos ? pb.size() : comma;
      r.args.push_back(parse_lagged(pb.substr(start, end - start), input_names, output_names, name));
      start = end + 1;
    }
  } else if (std::string ab = call("abs"); !ab.empty()) {
    r.op = RegressorOp::abs;
    r.args.push_back(parse_lagged(ab, input_names, output_names, name));
  } else if (std::string tb = call("tanh"); !tb.empty()) {
    r.op = RegressorOp::tanh;
    r.args.push_back(parse_lagged(tb, input_names, output_names, name));
  } else {
    std::string base = name;
    if (const auto caret = name.rfind(")^"); caret != std::string::npos) {
      base = name.substr(0, caret + 1);
      const std::string p = name.substr(caret + 2);
      const auto res = std::from_chars(p.data(), p.data() + p.size(), r.power);
      if (res.ec != std::errc() || res.ptr != p.data() + p.size() || r.power < 2) {
        throw ConfigError("malformed power in regressor '" + name + "'");
      }
    }
    r.args.push_back(parse_lagged(base, input_names, output_names, name));
  }
  r.name = make_name(r);
  return r;
}

RegressorMatrix build_matrix(const std::vector<Regressor>& regs, const SignalTable& data) {
  const Index lag = max_lag(regs);
  const Index n = data.samples();
  if (n <= lag) {
    throw DataError("data has " + std::to_string(n) + " samples, regressors need more than " +
                    std::to_string(lag));
  }
  RegressorMatrix m;
  m.row_offset = lag;
  m.values.resize(n - lag, static_cast<Index>(regs.size()));
  for (Index j = 0; j < static_cast<Index>(regs.size()); ++j) {
    const auto& r = regs[static_cast<std::size_t>(j)];
    m.names.push_back(r.name);
    for (Index k = 0; k < n - lag; ++k) {
      const Index t = k + lag;
      m.values(k, j) = evaluate<double>(r, [&](const LaggedVariable& a) {
        return a.is_output ? data.outputs()(t - a.lag, a.channel) : data.inputs()(t - a.lag, a.channel);
      });
    }
  }
  return m;
}

RegressorMatrix build_matrix(const std::vector<RegressorSpec>& specs, const SignalTable& data) {
  return build_matrix(expand_regressors(specs, data.input_names(), data.output_names()), data);
}

}  // namespace nlid
