#include "nlid/benchgen.hpp"
#include "nlid/cli.hpp"
#include "nlid/ekf.hpp"
#include "nlid/errors.hpp"
#include "nlid/model_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <ostream>

namespace nlid::cli {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kTasks = {"benchgen", "train-nlss", "train-nlarx", "train-nlhw",
                                         "sparsify", "compare",    "simulate",    "ekf"};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pct(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

struct Context {
  Config cfg;
  std::string task;
  fs::path dir;
  std::ostream& out;
};

// ---- data -----------------------------------------------------------------

std::optional<SignalTable> load_source(const Config& cfg, const std::string& sec) {
  const auto csv = cfg.get(sec, "csv"), um = cfg.get(sec, "u_matrix"), ym = cfg.get(sec, "y_matrix");
  if (csv.empty() && um.empty() && ym.empty()) return std::nullopt;
  if (!csv.empty() && !(um.empty() && ym.empty())) {
    throw ConfigError("[" + sec + "] csv and u_matrix/y_matrix are mutually exclusive");
  }
  const auto inputs = cfg.get_list(sec, "inputs");
  const auto outputs = cfg.get_list(sec, "outputs");
  const double ts = cfg.get_double(sec, "ts");
  const double start = cfg.get_double(sec, "start_time");
  if (!csv.empty()) {
    if (outputs.empty()) throw ConfigError("[" + sec + "] csv needs outputs = <column names>");
    CsvSchema schema;
    schema.input_names = inputs;
    schema.output_names = outputs;
    if (const auto tc = cfg.get(sec, "time_column"); !tc.empty()) {
      schema.time_column = tc;
    } else {
      if (!(ts > 0.0)) throw ConfigError("[" + sec + "] needs ts > 0 or a time_column");
      schema.ts = ts;
      schema.start_time = start;
    }
    return read_csv(csv, schema);
  }
  if (um.empty() || ym.empty()) throw ConfigError("[" + sec + "] needs both u_matrix and y_matrix");
  if (!(ts > 0.0)) throw ConfigError("[" + sec + "] matrix data needs ts > 0");
  const MatrixXd u = read_matrix(um), y = read_matrix(ym);
  if (u.rows() != y.rows()) throw DataError("u_matrix and y_matrix have different row counts");
  SignalTable t = from_matrices(u, y, ts, start);
  if (inputs.empty() && outputs.empty()) return t;
  if (static_cast<Index>(inputs.size()) != u.cols() || static_cast<Index>(outputs.size()) != y.cols()) {
    throw ConfigError("[" + sec + "] inputs/outputs name counts do not match the matrix columns");
  }
  return SignalTable(u, y, ts, start, inputs, outputs);
}

SignalTable require_data(const Config& cfg) {
  auto d = load_source(cfg, "data");
  if (!d) throw ConfigError("this task needs [data] csv or u_matrix/y_matrix");
  return *d;
}

std::pair<SignalTable, std::optional<SignalTable>> estimation_validation(const Config& cfg) {
  SignalTable data = require_data(cfg);
  if (auto val = load_source(cfg, "validation")) return {data, *val};
  const double frac = cfg.get_double("validation", "split");
  if (!(frac > 0.0 && frac <= 1.0)) throw ConfigError("validation.split must be in (0, 1]");
  if (frac == 1.0) return {data, std::nullopt};
  auto [a, b] = split(data, frac);
  return {a, b};
}

// Channels of `d` by name, in the given order.
SignalTable select(const SignalTable& d, const std::vector<std::string>& inputs,
                   const std::vector<std::string>& outputs) {
  MatrixXd u(d.samples(), static_cast<Index>(inputs.size()));
  MatrixXd y(d.samples(), static_cast<Index>(outputs.size()));
  std::vector<Intersample> modes;
  auto column = [&](const std::string& name) {
    const auto [is_out, c] = d.find_channel(name);
    return is_out ? d.outputs().col(c) : d.inputs().col(c);
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    u.col(static_cast<Index>(i)) = column(inputs[i]);
    const auto [is_out, c] = d.find_channel(inputs[i]);
    modes.push_back(is_out ? Intersample::zoh : d.intersample()[static_cast<std::size_t>(c)]);
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) y.col(static_cast<Index>(i)) = column(outputs[i]);
  return SignalTable(u, y, d.ts(), d.start_time(), inputs, outputs, modes);
}

// ---- options ----------------------------------------------------------------

TrainingOptions training_options(const Config& c) {
  TrainingOptions t;
  t.solver = parse_solver(c.get("training", "solver"));
  t.learn_rate = c.get_double("training", "learn_rate");
  t.max_epochs = c.get_int("training", "max_epochs");
  t.loss = parse_loss(c.get("training", "loss"));
  t.momentum = c.get_double("training", "momentum");
  t.beta1 = c.get_double("training", "beta1");
  t.beta2 = c.get_double("training", "beta2");
  t.rms_decay = c.get_double("training", "rms_decay");
  t.epsilon = c.get_double("training", "epsilon");
  t.lbfgs_memory = c.get_int("training", "lbfgs_memory");
  t.grad_tolerance = c.get_double("training", "grad_tolerance");
  t.seed = c.get_u64("run", "seed");
  t.validate();
  return t;
}

LMOptions lm_options(const Config& c) {
  LMOptions o;
  o.max_iter = c.get_int("lm", "max_iter");
  o.initial_damping = c.get_double("lm", "initial_damping");
  o.damping_increase = c.get_double("lm", "damping_increase");
  o.damping_decrease = c.get_double("lm", "damping_decrease");
  o.max_damping = c.get_double("lm", "max_damping");
  o.gradient_tolerance = c.get_double("lm", "gradient_tolerance");
  o.step_tolerance = c.get_double("lm", "step_tolerance");
  o.cost_tolerance = c.get_double("lm", "cost_tolerance");
  if (o.max_iter < 0 || !(o.initial_damping > 0.0) || !(o.damping_increase > 1.0) || !(o.damping_decrease > 1.0)) {
    throw ConfigError("[lm] needs max_iter >= 0, initial_damping > 0 and damping factors > 1");
  }
  return o;
}

NlarxTrainingOptions nlarx_options(const Config& c) {
  NlarxTrainingOptions o;
  o.focus = parse_focus(c.get("nlarx", "focus"));
  o.search = parse_search(c.get("nlarx", "search"));
  o.normalization = parse_normalization(c.get("nlarx", "normalization"));
  o.lm = lm_options(c);
  o.first_order = training_options(c);
  return o;
}

std::vector<int> parse_lags(const Config& c, const std::string& key) {
  const std::string v = c.get("nlarx", key);
  if (v.empty()) return {};
  auto to_int = [&](const std::string& t) {
    int x = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
      throw ConfigError("nlarx." + key + ": bad lag range '" + v + "'");
    }
    return x;
  };
  if (const auto colon = v.find(':'); colon != std::string::npos) {
    const int a = to_int(v.substr(0, colon)), b = to_int(v.substr(colon + 1));
    if (b < a) throw ConfigError("nlarx." + key + ": empty lag range '" + v + "'");
    return lag_range(a, b);
  }
  std::vector<int> out;
  for (const auto s : c.get_sizes("nlarx", key)) out.push_back(static_cast<int>(s));
  return out;
}

Activation activation(const Config& c, const std::string& sec, const std::string& key) {
  return parse_activation(c.get(sec, key));
}

// ---- simulation of any model ---------------------------------------------

struct Sim {
  std::vector<std::string> channels;
  MatrixXd measured;
  MatrixXd simulated;
};

Sim simulate_any(const AnyModel& any, const SignalTable& data, bool estimate_x0) {
  if (const auto* m = std::get_if<NeuralStateSpaceModel>(&any)) {
    if (data.num_inputs() != m->nu || data.num_outputs() != m->ny) {
      throw DataError("data has " + std::to_string(data.num_inputs()) + " inputs and " +
                      std::to_string(data.num_outputs()) + " outputs, the model needs " + std::to_string(m->nu) +
                      " and " + std::to_string(m->ny));
    }
    const VectorXd x0 = data.outputs().row(0).head(m->nx).transpose();
    return {data.output_names(), data.outputs(), simulate(*m, data, x0).outputs};
  }
  if (const auto* m = std::get_if<NlarxModel>(&any)) {
    const SignalTable t = select(data, m->input_names, {m->output_name});
    MatrixXd sim(t.samples(), 1);
    sim.col(0) = simulate(*m, t);
    return {{m->output_name}, t.outputs(), sim};
  }
  const auto& m = std::get<HwModel>(any);
  const SignalTable t = select(data, m.input_names, m.output_names);
  const MatrixXd sim = estimate_x0 ? simulate(m, t, estimate_initial_state(m, t)) : simulate(m, t);
  return {m.output_names, t.outputs(), sim};
}

bool estimate_flag(const Config& c, const std::string& sec) {
  const auto v = c.get(sec, "initial_state");
  if (v == "estimate") return true;
  if (v == "zero") return false;
  throw ConfigError(sec + ".initial_state must be estimate or zero, got '" + v + "'");
}

// ---- artifacts ---------------------------------------------------------------

struct FitRow {
  std::string label;
  std::string channel;
  double fit;
};

void write_fit_report(const Context& ctx, const std::string& first, const std::vector<FitRow>& rows) {
  std::string s = first + ",channel,fit_percent\n";
  for (const auto& r : rows) {
    s += r.label + "," + r.channel + "," + num(r.fit) + "\n";
    ctx.out << "fit " << r.label << " " << r.channel << " " << pct(r.fit) << "%\n";
  }
  write_text(ctx.dir / "fit_report.csv", s);
}

void add_fits(std::vector<FitRow>& rows, const std::string& label, const Sim& sim) {
  const VectorXd f = fit_percent(sim.measured, sim.simulated);
  for (std::size_t c = 0; c < sim.channels.size(); ++c) rows.push_back({label, sim.channels[c], f(static_cast<Index>(c))});
}

void write_trace(const Context& ctx, const std::vector<EpochRecord>& trace) {
  std::string s = "epoch,loss,grad_norm\n";
  for (const auto& r : trace) s += std::to_string(r.epoch) + "," + num(r.loss) + "," + num(r.grad_norm) + "\n";
  write_text(ctx.dir / "trace.csv", s);
}

VectorXd time_axis(const SignalTable& t) {
  VectorXd x(t.samples());
  for (Index k = 0; k < t.samples(); ++k) x(k) = t.time(k);
  return x;
}

std::string safe(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

// One SVG per channel: measured against each labelled simulation.
void write_plots(const Context& ctx, const std::string& prefix, const SignalTable& data,
                 const std::vector<std::pair<std::string, Sim>>& sims) {
  if (sims.empty()) return;
  const VectorXd x = time_axis(data);
  const auto& first = sims.front().second;
  for (std::size_t c = 0; c < first.channels.size(); ++c) {
    const std::string& ch = first.channels[c];
    std::vector<Series> series{{"measured", first.measured.col(static_cast<Index>(c))}};
    for (const auto& [label, sim] : sims) {
      for (std::size_t j = 0; j < sim.channels.size(); ++j) {
        if (sim.channels[j] != ch) continue;
        const VectorXd f = fit_percent(sim.measured.col(static_cast<Index>(j)), sim.simulated.col(static_cast<Index>(j)));
        series.push_back({label + " (fit " + pct(f(0)) + "%)", sim.simulated.col(static_cast<Index>(j))});
      }
    }
    write_text(ctx.dir / (prefix + "_" + safe(ch) + ".svg"), line_plot_svg(ch + ": measured vs simulated", x, series));
  }
}

template <class M>
M load_kind(const Config& cfg, const std::string& kind) {
  const auto path = cfg.get("run", "model");
  if (path.empty()) throw ConfigError("this task needs run.model = <model document>");
  AnyModel any = load_model(path);
  if (!std::holds_alternative<M>(any)) {
    throw ConfigError("run.model is a " + model_kind(any) + " model, this task needs " + kind);
  }
  return std::get<M>(any);
}

void finish_training(const Context& ctx, const AnyModel& model, const SignalTable& est,
                     const std::optional<SignalTable>& val, bool estimate_val, const AnyModel* baseline = nullptr) {
  save_model(model, ctx.dir / "model.json");
  std::vector<FitRow> rows;
  const Sim se = simulate_any(model, est, false);
  add_fits(rows, "estimation", se);
  std::vector<std::pair<std::string, Sim>> plots{{model_kind(model), se}};
  if (val) {
    const Sim sv = simulate_any(model, *val, estimate_val);
    add_fits(rows, "validation", sv);
    plots = {{model_kind(model), sv}};
    if (baseline) {
      Sim sb = simulate_any(*baseline, *val, estimate_val);
      add_fits(rows, "validation_linear", sb);
      plots.emplace_back("linear", std::move(sb));
    }
  }
  write_fit_report(ctx, "dataset", rows);
  write_plots(ctx, "compare", val ? *val : est, plots);
}

// ---- tasks -------------------------------------------------------------------

void task_benchgen(const Context& ctx) {
  const auto& c = ctx.cfg;
  const BenchmarkSystem& sys = find_benchmark(c.get("benchgen", "system"));
  const int n = c.get_int("benchgen", "samples");
  const double ts = c.get_double("benchgen", "ts");
  const std::uint64_t seed = c.get_u64("run", "seed");
  const auto d = generate(sys.name, n > 0 ? n : sys.samples, ts > 0.0 ? ts : sys.ts, seed,
                          c.get_double("benchgen", "noise"));
  write_csv(d.estimation, ctx.dir / "estimation.csv");
  write_csv(d.validation, ctx.dir / "validation.csv");
  nlohmann::json meta;
  meta["system"] = sys.name;
  meta["description"] = sys.description;
  meta["program"] = to_string(sys.program);
  meta["samples"] = d.estimation.samples() + d.validation.samples();
  meta["estimation_samples"] = d.estimation.samples();
  meta["ts"] = d.estimation.ts();
  meta["noise"] = d.noise;
  meta["seed"] = seed;
  meta["clamped"] = d.clamped;
  meta["inputs"] = sys.input_names;
  meta["outputs"] = sys.output_names;
  meta["states"] = sys.state_names;
  meta["support"] = sys.support;
  write_text(ctx.dir / "benchmark.json", meta.dump(2) + "\n");
  const SignalTable all = concatenate(std::vector<SignalTable>{d.estimation, d.validation});
  for (Index ch = 0; ch < all.num_outputs(); ++ch) {
    const auto& name = all.output_names()[static_cast<std::size_t>(ch)];
    write_text(ctx.dir / ("benchmark_" + safe(name) + ".svg"),
               line_plot_svg(sys.name + ": " + name, time_axis(all), {{name, all.outputs().col(ch)}}));
  }
  ctx.out << "benchgen " << sys.name << ": " << d.estimation.samples() << " estimation + " << d.validation.samples()
          << " validation samples" << (d.clamped ? " (state clamp fired)" : "") << "\n";
  if (!sys.support.empty()) ctx.out << "support " << join(sys.support, " ") << "\n";
}

void task_train_nlss(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto [est, val] = estimation_validation(c);
  const Index ny = est.num_outputs();
  const Index nx = c.get_int("nlss", "nx") > 0 ? c.get_int("nlss", "nx") : ny;
  const int latent = c.get_int("nlss", "latent_dim");
  NssNetworkOptions o;
  o.state_hidden = c.get_sizes("nlss", "state_hidden");
  o.state_activation = activation(c, "nlss", "state_activation");
  o.output_hidden = c.get_sizes("nlss", "output_hidden");
  o.output_activation = activation(c, "nlss", "output_activation");
  o.autoencoder_hidden = c.get_sizes("nlss", "autoencoder_hidden");
  o.autoencoder_activation = activation(c, "nlss", "autoencoder_activation");
  const auto w = c.get("nlss", "weights");
  if (w != "glorot" && w != "zeros") throw ConfigError("nlss.weights must be glorot or zeros, got '" + w + "'");
  o.weights = w == "glorot" ? WeightsInit::glorot : WeightsInit::zeros;
  o.seed = c.get_u64("run", "seed");
  o.time_invariant = c.get_bool("nlss", "time_invariant");
  const double ts = c.get_bool("nlss", "continuous") ? 0.0 : est.ts();
  auto model = create_nss(nx, est.num_inputs(), ny, ts, latent > 0 ? std::optional<Index>(latent) : std::nullopt, o);

  NssTrainingOptions to;
  to.train = training_options(c);
  if (const auto is = c.get("nlss", "input_intersample"); !is.empty()) to.input_intersample = parse_intersample(is);
  to.ode_step = c.get_double("nlss", "ode_step");
  to.prediction_weight = c.get_double("nlss", "prediction_weight");
  to.reconstruction_weight = c.get_double("nlss", "reconstruction_weight");
  to.normalization = parse_normalization(c.get("nlss", "normalization"));
  to.batch_segments = c.get_int("nlss", "batch_segments");
  const int fs = c.get_int("nlss", "frame_size"), fr = c.get_int("nlss", "frame_rate");
  if (fs < 0 || fr < 0) throw ConfigError("nlss.frame_size and frame_rate must be >= 0");
  const SegmentSet segs = fs == 0 ? SegmentSet{est} : segment(est, fs, fr > 0 ? fr : fs);
  const auto rep = train_nss(model, segs, to);
  write_trace(ctx, rep.trace);
  ctx.out << "train-nlss: " << rep.trace.size() << " epochs, stop " << rep.stop_reason << "\n";
  finish_training(ctx, model, est, val, false);
}

void task_train_nlarx(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto [est_all, val_all] = estimation_validation(c);
  std::string output = c.get("nlarx", "output");
  if (output.empty()) {
    if (est_all.num_outputs() < 1) throw DataError("data has no output channel");
    output = est_all.output_names().front();
  }
  const auto inputs = est_all.input_names();
  const SignalTable est = select(est_all, inputs, {output});
  std::optional<SignalTable> val;
  if (val_all) val = select(*val_all, inputs, {output});

  RegressorSpec lin;
  if (const auto ol = parse_lags(c, "output_lags"); !ol.empty()) {
    lin.variables.push_back(output);
    lin.lags.push_back(ol);
  }
  if (const auto il = parse_lags(c, "input_lags"); !il.empty()) {
    for (const auto& u : inputs) {
      lin.variables.push_back(u);
      lin.lags.push_back(il);
    }
  }
  std::vector<RegressorSpec> specs;
  if (!lin.variables.empty()) specs.push_back(lin);
  if (const int deg = c.get_int("nlarx", "polynomial_degree"); deg > 1 && !lin.variables.empty()) {
    RegressorSpec poly = lin;
    poly.kind = RegressorKind::polynomial;
    poly.degree = deg;
    specs.push_back(poly);
  }
  auto regs = expand_regressors(specs, inputs, {output});
  for (const auto& name : c.get_list("nlarx", "regressors", ';')) regs.push_back(parse_regressor(name, inputs, {output}));

  MappingSpec ms;
  ms.kind = parse_mapping_kind(c.get("nlarx", "mapping"));
  ms.units = c.get_int("nlarx", "units");
  ms.hidden = c.get_sizes("nlarx", "hidden");
  ms.activation = activation(c, "nlarx", "activation");
  ms.seed = c.get_u64("run", "seed");
  NlarxModel model = create_nlarx(regs, inputs, output, ms);
  const auto rep = train_nlarx(model, est, nlarx_options(c));
  write_trace(ctx, rep.trace);
  ctx.out << "train-nlarx: " << model.regressor_count() << " regressors, cost " << num(rep.final_cost) << ", stop "
          << rep.stop_reason << "\n";
  finish_training(ctx, model, est, val, false);
}

void task_train_nlhw(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto [est, val] = estimation_validation(c);
  HwStructure st;
  st.input.enabled = c.get_bool("hw", "input_nl");
  st.input.hidden = c.get_sizes("hw", "input_hidden");
  st.input.activation = activation(c, "hw", "input_activation");
  st.output.enabled = c.get_bool("hw", "output_nl");
  st.output.hidden = c.get_sizes("hw", "output_hidden");
  st.output.activation = activation(c, "hw", "output_activation");
  st.max_order = c.get_int("hw", "max_order");
  st.order = c.get_int("hw", "order");
  st.normalization = parse_normalization(c.get("hw", "normalization"));
  st.seed = c.get_u64("run", "seed");
  const bool estimate = estimate_flag(c, "hw");
  LinearFit lf;
  HwModel model = create_hw(SegmentSet{est}, st, &lf);
  HwModel linear = model;
  linear.input_nl.assign(linear.input_nl.size(), std::nullopt);
  linear.output_nl.assign(linear.output_nl.size(), std::nullopt);
  linear.linear = lf.block;
  const auto rep = train_hw(model, SegmentSet{est}, lm_options(c));
  write_trace(ctx, rep.trace);
  ctx.out << "train-nlhw: linear order " << lf.order << ", cost " << num(rep.final_cost) << ", stop "
          << rep.stop_reason << "\n";
  const AnyModel base = linear;
  finish_training(ctx, model, est, val, estimate, &base);
}

void task_sparsify(const Context& ctx) {
  const auto& c = ctx.cfg;
  NlarxModel model = load_kind<NlarxModel>(c, "an nlarx model");
  const auto [est_all, val_all] = estimation_validation(c);
  const SignalTable est = select(est_all, model.input_names, {model.output_name});
  std::optional<SignalTable> val;
  if (val_all) val = select(*val_all, model.input_names, {model.output_name});
  SparsificationOptions so;
  so.measure = parse_sparsity(c.get("sparsify", "measure"));
  so.lambda = c.get_double("sparsify", "lambda");
  so.max_outer_iter = c.get_int("sparsify", "max_outer_iter");
  so.step = c.get_double("sparsify", "step");
  so.log_sum_epsilon = c.get_double("sparsify", "log_sum_epsilon");
  so.reweight_rounds = c.get_int("sparsify", "reweight_rounds");
  so.zero_tolerance = c.get_double("sparsify", "zero_tolerance");
  so.tolerance = c.get_double("sparsify", "tolerance");
  so.keep = c.get_list("sparsify", "keep", ';');
  const auto rep = sparsify(model, SegmentSet{est}, so, nlarx_options(c));
  std::string s = "regressor,group_norm,active,lambda\n";
  std::vector<std::string> kept;
  for (std::size_t j = 0; j < rep.names.size(); ++j) {
    s += "\"" + rep.names[j] + "\"," + num(rep.group_norms(static_cast<Index>(j))) + "," +
         (rep.active[j] ? "true" : "false") + "," + num(rep.lambda) + "\n";
    if (rep.active[j]) kept.push_back(rep.names[j]);
  }
  write_text(ctx.dir / "sparsification.csv", s);
  ctx.out << "sparsify: " << kept.size() << " of " << rep.names.size() << " regressors active after "
          << rep.iterations << " iterations\n";
  ctx.out << "active " << join(kept, " ") << "\n";
  finish_training(ctx, model, est, val, false);
}

void task_compare(const Context& ctx) {
  const auto& c = ctx.cfg;
  auto paths = c.get_list("compare", "models");
  if (paths.empty() && !c.get("run", "model").empty()) paths.push_back(c.get("run", "model"));
  if (paths.empty()) throw ConfigError("compare needs compare.models or run.model");
  const SignalTable data = require_data(c);
  const bool estimate = estimate_flag(c, "compare");
  std::vector<FitRow> rows;
  std::vector<std::pair<std::string, Sim>> sims;
  std::string regs = "model,regressor\n";
  for (const auto& p : paths) {
    const AnyModel m = load_model(p);
    fs::path lp(p);
    const std::string label = (lp.extension() == ".json" ? lp.replace_extension() : lp).generic_string();
    Sim sim = simulate_any(m, data, estimate);
    add_fits(rows, label, sim);
    if (const auto* nl = std::get_if<NlarxModel>(&m)) {
      std::vector<std::string> active;
      for (Index j = 0; j < nl->regressor_count(); ++j) {
        if (!nl->active[static_cast<std::size_t>(j)]) continue;
        active.push_back(nl->regressors[static_cast<std::size_t>(j)].name);
        regs += label + ",\"" + active.back() + "\"\n";
      }
      ctx.out << "regressors " << label << " " << join(active, " ") << "\n";
    }
    sims.emplace_back(label, std::move(sim));
  }
  write_fit_report(ctx, "model", rows);
  write_text(ctx.dir / "regressors.csv", regs);
  write_plots(ctx, "compare", data, sims);
}

void task_simulate(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto path = c.get("run", "model");
  if (path.empty()) throw ConfigError("simulate needs run.model = <model document>");
  const AnyModel m = load_model(path);
  const SignalTable data = require_data(c);
  const Sim sim = simulate_any(m, data, estimate_flag(c, "simulate"));
  std::string s = "t";
  for (const auto& ch : sim.channels) s += "," + ch;
  s += "\n";
  for (Index k = 0; k < data.samples(); ++k) {
    s += num(data.time(k));
    for (Index j = 0; j < sim.simulated.cols(); ++j) s += "," + num(sim.simulated(k, j));
    s += "\n";
  }
  write_text(ctx.dir / "simulation.csv", s);
  std::vector<FitRow> rows;
  add_fits(rows, "simulation", sim);
  write_fit_report(ctx, "dataset", rows);
  write_plots(ctx, "simulate", data, {{model_kind(m), sim}});
}

MatrixXd covariance(const Config& c, const std::string& key, Index n) {
  const auto v = c.get_doubles("ekf", key);
  if (v.size() == 1) return MatrixXd::Identity(n, n) * v[0];
  if (static_cast<Index>(v.size()) == n) {
    VectorXd d(n);
    for (Index i = 0; i < n; ++i) d(i) = v[static_cast<std::size_t>(i)];
    return d.asDiagonal();
  }
  throw ConfigError("ekf." + key + " needs 1 or " + std::to_string(n) + " values");
}

void task_ekf(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto model = load_kind<NeuralStateSpaceModel>(c, "a neural_ss model");
  const SignalTable data = require_data(c);
  if (data.num_inputs() != model.nu || data.num_outputs() != model.ny) {
    throw DataError("data channels do not match the model (" + std::to_string(model.nu) + " inputs, " +
                    std::to_string(model.ny) + " outputs)");
  }
  auto [f, h] = nss_maps(model);
  EkfState st;
  const auto x0 = c.get_doubles("ekf", "x0");
  if (x0.empty()) {
    st.x = data.outputs().row(0).head(model.nx).transpose();
  } else if (static_cast<Index>(x0.size()) == model.nx) {
    st.x = Eigen::Map<const VectorXd>(x0.data(), model.nx);
  } else {
    throw ConfigError("ekf.x0 needs " + std::to_string(model.nx) + " values");
  }
  st.p = covariance(c, "p0", model.nx);
  st.q = covariance(c, "q", model.nx);
  st.r = covariance(c, "r", model.ny);
  st.f = f;
  st.h = h;
  st.validate();
  const Index n = data.samples();
  MatrixXd xs(n, model.nx);
  VectorXd nis(n);
  for (Index k = 0; k < n; ++k) {
    const VectorXd u = data.inputs().row(k).transpose();
    nis(k) = correct(st, data.outputs().row(k).transpose(), u).nis;
    xs.row(k) = st.x.transpose();
    if (k + 1 < n) predict(st, u);
  }
  std::string s = "t";
  for (Index i = 0; i < model.nx; ++i) s += ",x" + std::to_string(i + 1);
  s += ",nis\n";
  for (Index k = 0; k < n; ++k) {
    s += num(data.time(k));
    for (Index i = 0; i < model.nx; ++i) s += "," + num(xs(k, i));
    s += "," + num(nis(k)) + "\n";
  }
  write_text(ctx.dir / "ekf.csv", s);
  std::vector<std::string> names(data.output_names().begin(), data.output_names().begin() + model.nx);
  const Sim sim{names, data.outputs().leftCols(model.nx), xs};
  std::vector<FitRow> rows;
  add_fits(rows, "filtered", sim);
  write_fit_report(ctx, "dataset", rows);
  write_plots(ctx, "ekf", data, {{"filtered", sim}});
  ctx.out << "ekf: mean NIS " << pct(nis.mean()) << " over " << n << " steps\n";
}

std::vector<std::string> task_sections(const std::string& task) {
  if (task == "benchgen") return {"run", "benchgen"};
  if (task == "train-nlss") return {"run", "data", "validation", "nlss", "training"};
  if (task == "train-nlarx") return {"run", "data", "validation", "nlarx", "lm", "training"};
  if (task == "train-nlhw") return {"run", "data", "validation", "hw", "lm"};
  if (task == "sparsify") return {"run", "data", "validation", "nlarx", "lm", "training", "sparsify"};
  if (task == "compare") return {"run", "data", "compare"};
  if (task == "simulate") return {"run", "data", "simulate"};
  return {"run", "data", "ekf"};
}

void dispatch(const Context& ctx) {
  static const std::map<std::string, std::function<void(const Context&)>> table = {
      {"benchgen", task_benchgen}, {"train-nlss", task_train_nlss}, {"train-nlarx", task_train_nlarx},
      {"train-nlhw", task_train_nlhw}, {"sparsify", task_sparsify}, {"compare", task_compare},
      {"simulate", task_simulate}, {"ekf", task_ekf}};
  table.at(ctx.task)(ctx);
}

fs::path default_dir() {
  if (const char* env = std::getenv("NLID_OUTPUT_DIR"); env && *env) return env;
  return "nlid_output";
}

void write_error(const fs::path& dir, const std::string& task, const std::string& category, int code,
                 const std::string& message) {
  nlohmann::json j;
  j["status"] = "error";
  j["task"] = task;
  j["category"] = category;
  j["exit_code"] = code;
  j["message"] = message;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream out(dir / "error.json", std::ios::binary);
  if (out) out << j.dump(2) << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"nlid: nonlinear system identification toolkit", "nlid"};
  std::string task, config_path, output_dir, data, model, system;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  app.add_option("task", task, "task to run")->check(CLI::IsMember(kTasks));
  app.add_option("-c,--config", config_path, "INI run configuration");
  app.add_option("-o,--output-dir", output_dir, "artifact directory");
  app.add_option("-s,--set", sets, "override, section.key=value (repeatable)")->allow_extra_args(false);
  app.add_option("--data", data, "shortcut for data.csv");
  app.add_option("--model", model, "shortcut for run.model");
  app.add_option("--system", system, "shortcut for benchgen.system");
  app.add_option("--seed", seed, "shortcut for run.seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "nlid: config error: " << e.what() << "\n";
    return 2;
  }

  fs::path dir = output_dir.empty() ? default_dir() : fs::path(output_dir);
  std::string category = "internal";
  int code = 1;
  std::string message;
  try {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!data.empty()) cfg.set("data.csv", data);
    if (!model.empty()) cfg.set("run.model", model);
    if (!system.empty()) cfg.set("benchgen.system", system);
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    const std::string cfg_task = cfg.get("run", "task");
    if (task.empty()) task = cfg_task;
    if (task.empty()) throw ConfigError("no task given (positional argument or run.task)");
    if (std::find(kTasks.begin(), kTasks.end(), task) == kTasks.end()) {
      throw ConfigError("unknown task '" + task + "'");
    }
    if (!cfg_task.empty() && cfg_task != task) {
      throw ConfigError("task '" + task + "' conflicts with run.task = " + cfg_task);
    }
    cfg.set("run.task", task);
    if (output_dir.empty() && !cfg.get("run", "output_dir").empty()) dir = cfg.get("run", "output_dir");
    fs::create_directories(dir);
    write_text(dir / "resolved_config.ini", cfg.resolved(task_sections(task)));
    dispatch(Context{cfg, task, dir, out});
    return 0;
  } catch (const ConfigError& e) {
    category = "config", code = 2, message = e.what();
  } catch (const DataError& e) {
    category = "data", code = 3, message = e.what();
  } catch (const NumericalError& e) {
    category = "numerical", code = 4, message = e.what();
  } catch (const fs::filesystem_error& e) {
    category = "data", code = 3, message = e.what();
  } catch (const std::exception& e) {
    message = e.what();
  }
  err << "nlid: " << category << " error: " << message << "\n";
  write_error(dir, task, category, code, message);
  return code;
}

}  // namespace nlid::cli
