#include "nlid/model_io.hpp"

#include "nlid/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace nlid {

namespace {

using json = nlohmann::json;

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

VectorXd vec_from(const json& j) {
  if (!j.is_array()) throw DataError("model document: expected a number array");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  return v;
}

// Row-major data with explicit shape.
json mat_json(const MatrixXd& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", a}};
}

MatrixXd mat_from(const json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw DataError("model document: matrix data does not match its shape");
  }
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  }
  return m;
}

json net_json(const MLPNetwork& n) {
  return {{"input_dim", n.input_dim},           {"output_dim", n.output_dim},
          {"hidden", n.hidden},                 {"activation", to_string(n.activation)},
          {"seed", n.seed},                     {"params", vec_json(get_params(n))}};
}

MLPNetwork net_from(const json& j) {
  MLPNetwork n = create_mlp(j.at("input_dim").get<Index>(), j.at("output_dim").get<Index>(),
                            j.at("hidden").get<std::vector<Index>>(),
                            parse_activation(j.at("activation").get<std::string>()),
                            {WeightsInit::zeros, j.at("seed").get<std::uint64_t>()});
  const VectorXd p = vec_from(j.at("params"));
  if (p.size() != n.parameter_count()) throw DataError("model document: network parameter count mismatch");
  set_params(n, p);
  return n;
}

json opt_net_json(const std::optional<MLPNetwork>& n) { return n ? net_json(*n) : json(nullptr); }

std::optional<MLPNetwork> opt_net_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return net_from(j);
}

json scaling_json(const ColumnScaling& s) { return {{"mean", vec_json(s.mean)}, {"scale", vec_json(s.scale)}}; }

ColumnScaling scaling_from(const json& j) {
  ColumnScaling s{vec_from(j.at("mean")), vec_from(j.at("scale"))};
  if (s.mean.size() != s.scale.size()) throw DataError("model document: scaling mean/scale length mismatch");
  return s;
}

json norm_json(const NormalizationState& n) {
  return {{"method", to_string(n.method)}, {"inputs", scaling_json(n.inputs)}, {"outputs", scaling_json(n.outputs)}};
}

NormalizationState norm_from(const json& j) {
  NormalizationState n;
  n.method = parse_normalization(j.at("method").get<std::string>());
  n.inputs = scaling_from(j.at("inputs"));
  n.outputs = scaling_from(j.at("outputs"));
  return n;
}

json nss_json(const NeuralStateSpaceModel& m) {
  json j;
  j["nx"] = m.nx;
  j["nu"] = m.nu;
  j["ny"] = m.ny;
  j["ts"] = m.ts;
  j["state_net"] = net_json(m.state_net);
  j["output_net"] = opt_net_json(m.output_net);
  j["latent_dim"] = m.latent_dim ? json(*m.latent_dim) : json(nullptr);
  j["encoder"] = opt_net_json(m.encoder);
  j["decoder"] = opt_net_json(m.decoder);
  j["normalization"] = norm_json(m.normalization);
  j["time_invariant"] = m.time_invariant;
  j["time_origin"] = m.time_origin;
  j["time_span"] = m.time_span;
  j["ode_step"] = m.ode_step;
  return j;
}

NeuralStateSpaceModel nss_from(const json& j) {
  NeuralStateSpaceModel m;
  m.nx = j.at("nx").get<Index>();
  m.nu = j.at("nu").get<Index>();
  m.ny = j.at("ny").get<Index>();
  m.ts = j.at("ts").get<double>();
  m.state_net = net_from(j.at("state_net"));
  m.output_net = opt_net_from(j.at("output_net"));
  if (!j.at("latent_dim").is_null()) m.latent_dim = j.at("latent_dim").get<Index>();
  m.encoder = opt_net_from(j.at("encoder"));
  m.decoder = opt_net_from(j.at("decoder"));
  m.normalization = norm_from(j.at("normalization"));
  m.time_invariant = j.at("time_invariant").get<bool>();
  m.time_origin = j.at("time_origin").get<double>();
  m.time_span = j.at("time_span").get<double>();
  m.ode_step = j.at("ode_step").get<double>();
  if (m.nx < 1 || m.nu < 0 || m.ny < m.nx || m.ts < 0.0) throw DataError("model document: bad neural_ss dimensions");
  if (m.latent_dim.has_value() != (m.encoder.has_value() && m.decoder.has_value())) {
    throw DataError("model document: latent_dim needs both encoder and decoder");
  }
  if (m.normalization.inputs.mean.size() != m.nu || m.normalization.outputs.mean.size() != m.ny) {
    throw DataError("model document: normalization does not match the dimensions");
  }
  const Index extra = m.time_invariant ? 0 : 1;
  if (m.state_net.input_dim != m.dynamic_dim() + m.nu + extra || m.state_net.output_dim != m.dynamic_dim()) {
    throw DataError("model document: state network shape does not match the dimensions");
  }
  return m;
}

json nlarx_json(const NlarxModel& m) {
  json j;
  j["output_name"] = m.output_name;
  j["input_names"] = m.input_names;
  j["regressors"] = m.regressor_names();
  json f;
  f["kind"] = to_string(m.mapping.kind);
  f["theta"] = vec_json(m.mapping.theta);
  f["offset"] = m.mapping.offset;
  f["a"] = vec_json(m.mapping.a);
  f["v"] = mat_json(m.mapping.v);
  f["c"] = vec_json(m.mapping.c);
  f["net"] = opt_net_json(m.mapping.net);
  j["mapping"] = f;
  j["normalization"] = to_string(m.normalization);
  j["regressor_scaling"] = scaling_json(m.regressor_scaling);
  j["output_scaling"] = scaling_json(m.output_scaling);
  j["active"] = m.active;
  return j;
}

NlarxModel nlarx_from(const json& j) {
  NlarxModel m;
  m.output_name = j.at("output_name").get<std::string>();
  m.input_names = j.at("input_names").get<std::vector<std::string>>();
  for (const auto& name : j.at("regressors")) {
    try {
      m.regressors.push_back(parse_regressor(name.get<std::string>(), m.input_names, {m.output_name}));
    } catch (const ConfigError& e) {
      throw DataError(std::string("model document: ") + e.what());
    }
  }
  const auto& f = j.at("mapping");
  m.mapping.kind = parse_mapping_kind(f.at("kind").get<std::string>());
  m.mapping.theta = vec_from(f.at("theta"));
  m.mapping.offset = f.at("offset").get<double>();
  m.mapping.a = vec_from(f.at("a"));
  m.mapping.v = mat_from(f.at("v"));
  m.mapping.c = vec_from(f.at("c"));
  m.mapping.net = opt_net_from(f.at("net"));
  m.normalization = parse_normalization(j.at("normalization").get<std::string>());
  m.regressor_scaling = scaling_from(j.at("regressor_scaling"));
  m.output_scaling = scaling_from(j.at("output_scaling"));
  m.active = j.at("active").get<std::vector<bool>>();
  const Index r = m.regressor_count();
  const bool ok = m.mapping.theta.size() == r && static_cast<Index>(m.active.size()) == r &&
                  m.regressor_scaling.mean.size() == r && m.output_scaling.mean.size() == 1 &&
                  m.mapping.a.size() == m.mapping.v.rows() && m.mapping.c.size() == m.mapping.v.rows() &&
                  (m.mapping.v.rows() == 0 || m.mapping.v.cols() == r) &&
                  (!m.mapping.net || m.mapping.net->input_dim == r);
  if (!ok) throw DataError("model document: nlarx shapes are inconsistent");
  return m;
}

json block_json(const LinearSSBlock& b) {
  return {{"a", mat_json(b.a)}, {"b", mat_json(b.b)}, {"c", mat_json(b.c)}, {"d", mat_json(b.d)}, {"ts", b.ts}};
}

json hw_json(const HwModel& m) {
  json j;
  j["input_names"] = m.input_names;
  j["output_names"] = m.output_names;
  json in = json::array(), out = json::array();
  for (const auto& n : m.input_nl) in.push_back(opt_net_json(n));
  for (const auto& n : m.output_nl) out.push_back(opt_net_json(n));
  j["input_nl"] = in;
  j["linear"] = block_json(m.linear);
  j["output_nl"] = out;
  j["normalization"] = norm_json(m.normalization);
  return j;
}

HwModel hw_from(const json& j) {
  HwModel m;
  m.input_names = j.at("input_names").get<std::vector<std::string>>();
  m.output_names = j.at("output_names").get<std::vector<std::string>>();
  for (const auto& n : j.at("input_nl")) m.input_nl.push_back(opt_net_from(n));
  for (const auto& n : j.at("output_nl")) m.output_nl.push_back(opt_net_from(n));
  const auto& l = j.at("linear");
  m.linear.a = mat_from(l.at("a"));
  m.linear.b = mat_from(l.at("b"));
  m.linear.c = mat_from(l.at("c"));
  m.linear.d = mat_from(l.at("d"));
  m.linear.ts = l.at("ts").get<double>();
  m.normalization = norm_from(j.at("normalization"));
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
  return m;
}

}  // namespace

std::string model_kind(const AnyModel& model) {
  switch (model.index()) {
    case 0: return "neural_ss";
    case 1: return "nlarx";
    default: return "hw";
  }
}

std::string to_document(const AnyModel& model) {
  json j = std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NeuralStateSpaceModel>) return nss_json(m);
        else if constexpr (std::is_same_v<T, NlarxModel>) return nlarx_json(m);
        else return hw_json(m);
      },
      model);
  j["format"] = "nlid-model";
  j["version"] = kModelFormatVersion;
  j["kind"] = model_kind(model);
  return j.dump(2) + "\n";
}

AnyModel parse_document(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model document is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", "") != "nlid-model") {
      throw DataError("not an nlid model document (missing format tag)");
    }
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw DataError("unsupported model document version " + std::to_string(version));
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "neural_ss") return nss_from(j);
    if (kind == "nlarx") return nlarx_from(j);
    if (kind == "hw") return hw_from(j);
    throw DataError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw DataError(std::string("model document: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("model document: ") + e.what());
  }
}

void save_model(const AnyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + path.string());
  out << to_document(model);
  if (!out) throw DataError("failed writing model file " + path.string());
}

AnyModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_document(ss.str());
}

}  // namespace nlid
