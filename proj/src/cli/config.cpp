#include "nlid/cli.hpp"

#include "nlid/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace nlid::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const Config::Key* find_key(const std::string& section, const std::string& key) {
  for (const auto& s : Config::schema()) {
    if (s.name != section) continue;
    for (const auto& k : s.keys) {
      if (k.name == key) return &k;
    }
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  return std::any_of(Config::schema().begin(), Config::schema().end(),
                     [&](const Config::Section& s) { return s.name == section; });
}

std::vector<Config::Key> data_keys() {
  return {{"csv", "", "CSV file with a header row"},
          {"u_matrix", "", "whitespace-separated input matrix (with y_matrix instead of csv)"},
          {"y_matrix", "", "whitespace-separated output matrix"},
          {"inputs", "", "input channel names (CSV columns; matrix pairs default to u1..)"},
          {"outputs", "", "output channel names (CSV columns; matrix pairs default to y1..)"},
          {"time_column", "", "CSV time column; Ts is then inferred"},
          {"ts", "0", "sample time when there is no time column"},
          {"start_time", "0", "time of the first row without a time column"}};
}

}  // namespace

const std::vector<Config::Section>& Config::schema() {
  static const std::vector<Section> s = [] {
    std::vector<Section> v;
    v.push_back({"run",
                 {{"task", "", "benchgen, train-nlss, train-nlarx, train-nlhw, sparsify, compare, simulate, ekf"},
                  {"output_dir", "", "artifact directory (default: $NLID_OUTPUT_DIR, else nlid_output)"},
                  {"seed", "0", "seed for generators and initializations"},
                  {"model", "", "input model document (sparsify, simulate, ekf; compare fallback)"}}});
    v.push_back({"data", data_keys()});
    auto val = data_keys();
    val.push_back({"split", "1", "estimation fraction of [data] used when no validation source is given"});
    v.push_back({"validation", val});
    v.push_back({"benchgen",
                 {{"system", "two_tank", "linear1, narx_toy, two_tank, si_engine, robot_arm, ic_engine, wiener2"},
                  {"samples", "0", "record length (0: system default)"},
                  {"ts", "0", "sample time (0: system default)"},
                  {"noise", "-1", "noise level as a fraction of output std (-1: system default)"}}});
    v.push_back({"nlss",
                 {{"nx", "0", "state count (0: number of outputs)"},
                  {"latent_dim", "0", "autoencoder latent dimension (0: none)"},
                  {"continuous", "false", "continuous-time model integrated with RK4"},
                  {"state_hidden", "64,64", "hidden layer sizes of the state network"},
                  {"state_activation", "tanh", "tanh, sigmoid or relu"},
                  {"output_hidden", "64,64", "hidden layer sizes of the output network"},
                  {"output_activation", "tanh", ""},
                  {"autoencoder_hidden", "10", ""},
                  {"autoencoder_activation", "tanh", ""},
                  {"weights", "glorot", "glorot or zeros"},
                  {"time_invariant", "true", ""},
                  {"frame_size", "0", "training segment length (0: whole record)"},
                  {"frame_rate", "0", "segment start spacing (0: frame_size)"},
                  {"ode_step", "0", "RK4 step (0: Ts)"},
                  {"normalization", "zscore", "zscore or none"},
                  {"prediction_weight", "1", ""},
                  {"reconstruction_weight", "1", ""},
                  {"batch_segments", "100", "segments per first-order update"},
                  {"input_intersample", "", "zoh, foh or pchip for every input (empty: data setting)"}}});
    v.push_back({"training",
                 {{"solver", "adam", "adam, sgdm, lbfgs or rmsprop"},
                  {"learn_rate", "0.001", ""},
                  {"max_epochs", "100", ""},
                  {"loss", "mse", "mse or mae"},
                  {"momentum", "0.9", ""},
                  {"beta1", "0.9", ""},
                  {"beta2", "0.999", ""},
                  {"rms_decay", "0.9", ""},
                  {"epsilon", "1e-8", ""},
                  {"lbfgs_memory", "10", ""},
                  {"grad_tolerance", "1e-10", ""}}});
    v.push_back({"nlarx",
                 {{"output", "", "output channel to model (default: first)"},
                  {"output_lags", "1:2", "lags of the output, 'a:b' or a comma list; empty for none"},
                  {"input_lags", "1:2", "lags of every input"},
                  {"polynomial_degree", "1", "adds powers 2..degree of the same lagged variables"},
                  {"regressors", "", "extra regressors by name, ';'-separated, e.g. prod(y1(t-1),u1(t-2))"},
                  {"mapping", "linear", "linear, sigmoid or neural"},
                  {"units", "10", "sigmoid units"},
                  {"hidden", "10", "neural mapping hidden sizes"},
                  {"activation", "tanh", "neural mapping activation"},
                  {"focus", "prediction", "prediction or simulation"},
                  {"search", "lm", "lm or first_order (uses [training])"},
                  {"normalization", "zscore", "zscore or none"}}});
    v.push_back({"lm",
                 {{"max_iter", "100", ""},
                  {"initial_damping", "1e-3", ""},
                  {"damping_increase", "10", ""},
                  {"damping_decrease", "10", ""},
                  {"max_damping", "1e12", ""},
                  {"gradient_tolerance", "1e-10", ""},
                  {"step_tolerance", "1e-12", ""},
                  {"cost_tolerance", "0", ""}}});
    v.push_back({"hw",
                 {{"input_nl", "false", "per-input network"},
                  {"input_hidden", "5,5", ""},
                  {"input_activation", "tanh", ""},
                  {"output_nl", "true", "per-output network"},
                  {"output_hidden", "5,5", ""},
                  {"output_activation", "tanh", ""},
                  {"max_order", "10", "largest order tried by AIC"},
                  {"order", "0", "fixed linear order (0: AIC)"},
                  {"normalization", "zscore", ""},
                  {"initial_state", "estimate", "validation initial state: estimate or zero"}}});
    v.push_back({"sparsify",
                 {{"measure", "l1", "l1, l0 or log_sum"},
                  {"lambda", "0.1", ""},
                  {"max_outer_iter", "500", ""},
                  {"step", "0", "proximal step (0: automatic)"},
                  {"log_sum_epsilon", "1e-3", ""},
                  {"reweight_rounds", "5", ""},
                  {"zero_tolerance", "1e-8", ""},
                  {"tolerance", "1e-10", ""},
                  {"keep", "", "regressors never pruned, ';'-separated"}}});
    v.push_back({"compare",
                 {{"models", "", "model documents, comma-separated (default: run.model)"},
                  {"initial_state", "estimate", "Hammerstein-Wiener initial state: estimate or zero"}}});
    v.push_back({"simulate", {{"initial_state", "estimate", "Hammerstein-Wiener initial state: estimate or zero"}}});
    v.push_back({"ekf",
                 {{"q", "1e-4", "process noise: scalar (times I) or diagonal list"},
                  {"r", "1e-2", "measurement noise: scalar or diagonal list"},
                  {"p0", "1", "initial covariance: scalar or diagonal list"},
                  {"x0", "", "initial state (default: first measured states)"}}});
    return v;
  }();
  return s;
}

Config Config::parse(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config parse error: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  Config c;
  for (const auto& [section, child] : tree) {
    if (child.empty() && !child.data().empty()) {
      throw ConfigError("config key '" + section + "' is outside a [section]");
    }
    if (!known_section(section)) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : child) c.set(section + "." + key, value.data());
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ConfigError("config key '" + dotted + "' must be written section.key");
  const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
  if (!known_section(section)) throw ConfigError("unknown config section [" + section + "]");
  if (!find_key(section, key)) throw ConfigError("unknown config key '" + key + "' in [" + section + "]");
  values_[section][key] = trim(value);
}

bool Config::has(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  return s != values_.end() && s->second.count(key) > 0;
}

std::string Config::get(const std::string& section, const std::string& key) const {
  const Key* k = find_key(section, key);
  if (!k) throw std::logic_error("config schema has no key " + section + "." + key);
  if (has(section, key)) return values_.at(section).at(key);
  return k->default_value;
}

namespace {

[[noreturn]] void bad_value(const std::string& section, const std::string& key, const std::string& v,
                            const std::string& want) {
  throw ConfigError("config key " + section + "." + key + ": expected " + want + ", got '" + v + "'");
}

template <class T>
T parse_number(const std::string& section, const std::string& key, const std::string& v, const std::string& want) {
  T out{};
  const char* b = v.data();
  const char* e = b + v.size();
  if (!v.empty() && *b == '+') ++b;
  const auto res = std::from_chars(b, e, out);
  if (v.empty() || res.ec != std::errc() || res.ptr != e) bad_value(section, key, v, want);
  return out;
}

}  // namespace

double Config::get_double(const std::string& section, const std::string& key) const {
  return parse_number<double>(section, key, get(section, key), "a number");
}

int Config::get_int(const std::string& section, const std::string& key) const {
  return parse_number<int>(section, key, get(section, key), "an integer");
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key) const {
  return parse_number<std::uint64_t>(section, key, get(section, key), "a non-negative integer");
}

bool Config::get_bool(const std::string& section, const std::string& key) const {
  std::string v = get(section, key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  bad_value(section, key, v, "true or false");
}

std::vector<std::string> Config::get_list(const std::string& section, const std::string& key, char sep) const {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(get(section, key));
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<Eigen::Index> Config::get_sizes(const std::string& section, const std::string& key) const {
  std::vector<Eigen::Index> out;
  for (const auto& item : get_list(section, key)) {
    const auto v = parse_number<long>(section, key, item, "a list of positive integers");
    if (v < 1) bad_value(section, key, item, "a list of positive integers");
    out.push_back(v);
  }
  return out;
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(section, key)) out.push_back(parse_number<double>(section, key, item, "numbers"));
  return out;
}

std::string Config::resolved(const std::vector<std::string>& sections) const {
  std::ostringstream out;
  bool first = true;
  for (const auto& s : schema()) {
    if (std::find(sections.begin(), sections.end(), s.name) == sections.end()) continue;
    if (!first) out << "\n";
    first = false;
    out << "[" << s.name << "]\n";
    for (const auto& k : s.keys) {
      if (s.name == "run" && k.name == "output_dir") continue;
      out << k.name << " = " << get(s.name, k.name) << "\n";
    }
  }
  return out.str();
}

}  // namespace nlid::cli
