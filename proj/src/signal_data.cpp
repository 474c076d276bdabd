#include "nlid/signal_data.hpp"

#include "nlid/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace nlid {

namespace {

std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_finite(const MatrixXd& m, const char* what) {
  for (Index c = 0; c < m.cols(); ++c) {
    for (Index r = 0; r < m.rows(); ++r) {
      if (!std::isfinite(m(r, c))) {
        throw DataError(std::string(what) + ": non-finite entry at (" + std::to_string(r) + "," +
                        std::to_string(c) + ")");
      }
    }
  }
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& cell, std::size_t line_no, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || cell.empty()) {
    throw DataError("unparsable numeric cell '" + cell + "' at line " + std::to_string(line_no) +
                    ", column '" + column + "'");
  }
  return v;
}

// Chooses a sampling interval that reproduces the time column under
// t_k = t_0 + k * ts, preferring one that round-trips bit-exactly.
double infer_ts(const std::vector<double>& t) {
  const auto n = t.size();
  if (n < 2) throw DataError("cannot infer sample time from fewer than 2 time stamps");
  const double span_ts = (t.back() - t.front()) / static_cast<double>(n - 1);
  if (!(span_ts > 0.0)) throw DataError("non-positive sample time inferred from time column");
  for (std::size_t k = 1; k < n; ++k) {
    const double expected = t.front() + static_cast<double>(k) * span_ts;
    if (std::abs(t[k] - expected) > 1e-9 * span_ts) {
      throw DataError("non-uniform sampling at row " + std::to_string(k));
    }
  }
  // Short decimal forms first: several nearby doubles can reproduce a grid
  // with an offset start, and the short one is what the writer most likely had.
  std::vector<double> candidates;
  for (int digits = 15; digits >= 6; --digits) {
    for (double c : {span_ts, t[1] - t[0]}) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.*g", digits, c);
      candidates.push_back(std::strtod(buf, nullptr));
    }
  }
  candidates.push_back(t[1] - t[0]);
  candidates.push_back(span_ts);
  for (double c : candidates) {
    bool exact = true;
    for (std::size_t k = 0; k < n && exact; ++k) {
      exact = (t.front() + static_cast<double>(k) * c == t[k]);
    }
    if (exact) return c;
  }
  return span_ts;
}

}  // namespace

std::string to_string(Intersample mode) {
  switch (mode) {
    case Intersample::zoh: return "zoh";
    case Intersample::foh: return "foh";
    case Intersample::pchip: return "pchip";
  }
  return "zoh";
}

Intersample parse_intersample(const std::string& text) {
  if (text == "zoh") return Intersample::zoh;
  if (text == "foh") return Intersample::foh;
  if (text == "pchip") return Intersample::pchip;
  throw ConfigError("unknown intersample behavior '" + text + "'");
}

SignalTable::SignalTable(MatrixXd inputs, MatrixXd outputs, double ts, double start_time,
                         std::vector<std::string> input_names,
                         std::vector<std::string> output_names,
                         std::vector<Intersample> intersample)
    : inputs_(std::move(inputs)),
      outputs_(std::move(outputs)),
      ts_(ts),
      start_time_(start_time),
      input_names_(std::move(input_names)),
      output_names_(std::move(output_names)),
      intersample_(std::move(intersample)) {
  if (inputs_.rows() != outputs_.rows()) {
    throw DataError("dimension mismatch: inputs have " + std::to_string(inputs_.rows()) +
                    " rows, outputs have " + std::to_string(outputs_.rows()));
  }
  if (outputs_.rows() < 1) throw DataError("signal table needs at least one sample");
  if (!(ts_ > 0.0) || !std::isfinite(ts_)) throw DataError("sample time must be positive");
  if (!std::isfinite(start_time_)) throw DataError("start time must be finite");
  check_finite(inputs_, "inputs");
  check_finite(outputs_, "outputs");
  if (static_cast<Index>(input_names_.size()) != inputs_.cols() ||
      static_cast<Index>(output_names_.size()) != outputs_.cols()) {
    throw DataError("channel name count does not match channel count");
  }
  std::set<std::string> seen;
  for (const auto& names : {input_names_, output_names_}) {
    for (const auto& name : names) {
      if (name.empty()) throw DataError("empty channel name");
      if (!seen.insert(name).second) throw DataError("duplicate channel name '" + name + "'");
    }
  }
  if (intersample_.empty()) {
    intersample_.assign(static_cast<std::size_t>(inputs_.cols()), Intersample::zoh);
  } else if (static_cast<Index>(intersample_.size()) != inputs_.cols()) {
    throw DataError("intersample list must have one entry per input");
  }
}

SignalTable SignalTable::rows(Index first, Index count) const {
  if (first < 0 || count < 1 || first + count > samples()) {
    throw DataError("row slice out of range");
  }
  return SignalTable(inputs_.middleRows(first, count), outputs_.middleRows(first, count), ts_,
                     time(first), input_names_, output_names_, intersample_);
}

SignalTable SignalTable::with_intersample(std::vector<Intersample> modes) const {
  return SignalTable(inputs_, outputs_, ts_, start_time_, input_names_, output_names_,
                     std::move(modes));
}

SignalTable SignalTable::with_values(MatrixXd inputs, MatrixXd outputs) const {
  return SignalTable(std::move(inputs), std::move(outputs), ts_, start_time_, input_names_,
                     output_names_, intersample_);
}

std::pair<bool, Index> SignalTable::find_channel(const std::string& name) const {
  for (std::size_t i = 0; i < input_names_.size(); ++i) {
    if (input_names_[i] == name) return {false, static_cast<Index>(i)};
  }
  for (std::size_t i = 0; i < output_names_.size(); ++i) {
    if (output_names_[i] == name) return {true, static_cast<Index>(i)};
  }
  throw DataError("unknown channel '" + name + "'");
}

SignalTable from_matrices(const MatrixXd& u, const MatrixXd& y, double ts, double start_time) {
  std::vector<std::string> in_names, out_names;
  for (Index i = 0; i < u.cols(); ++i) in_names.push_back("u" + std::to_string(i + 1));
  for (Index i = 0; i < y.cols(); ++i) out_names.push_back("y" + std::to_string(i + 1));
  return SignalTable(u, y, ts, start_time, std::move(in_names), std::move(out_names));
}

SignalTable read_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' has no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  const auto header = split_csv_line(line);

  auto column_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "' in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> in_cols, out_cols;
  for (const auto& n : schema.input_names) in_cols.push_back(column_of(n));
  for (const auto& n : schema.output_names) out_cols.push_back(column_of(n));
  std::optional<std::size_t> t_col;
  if (schema.time_column) t_col = column_of(*schema.time_column);

  std::vector<std::vector<double>> rows;
  std::vector<double> times;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    std::vector<double> row;
    for (auto c : in_cols) row.push_back(parse_number(cells[c], line_no, header[c]));
    for (auto c : out_cols) row.push_back(parse_number(cells[c], line_no, header[c]));
    if (t_col) times.push_back(parse_number(cells[*t_col], line_no, header[*t_col]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("'" + path.string() + "' has no data rows");

  double ts = 0.0;
  double start = schema.start_time;
  if (t_col) {
    ts = schema.ts.value_or(0.0);
    if (times.size() >= 2) {
      ts = infer_ts(times);
    } else if (!schema.ts) {
      throw DataError("single-row file with time column needs an explicit sample time");
    }
    start = times.front();
  } else {
    if (!schema.ts) throw DataError("no time column and no sample time given");
    ts = *schema.ts;
  }

  const auto n = static_cast<Index>(rows.size());
  const auto nu = static_cast<Index>(in_cols.size());
  const auto ny = static_cast<Index>(out_cols.size());
  MatrixXd u(n, nu), y(n, ny);
  for (Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (Index c = 0; c < nu; ++c) u(r, c) = row[static_cast<std::size_t>(c)];
    for (Index c = 0; c < ny; ++c) y(r, c) = row[static_cast<std::size_t>(nu + c)];
  }
  return SignalTable(std::move(u), std::move(y), ts, start, schema.input_names,
                     schema.output_names);
}

void write_csv(const SignalTable& table, const std::filesystem::path& path, bool with_time) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  std::vector<std::string> header;
  if (with_time) header.push_back("t");
  for (const auto& n : table.input_names()) header.push_back(n);
  for (const auto& n : table.output_names()) header.push_back(n);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Index k = 0; k < table.samples(); ++k) {
    bool first = true;
    auto emit = [&](double v) {
      out << (first ? "" : ",") << format17(v);
      first = false;
    };
    if (with_time) emit(table.time(k));
    for (Index c = 0; c < table.num_inputs(); ++c) emit(table.inputs()(k, c));
    for (Index c = 0; c < table.num_outputs(); ++c) emit(table.outputs()(k, c));
    out << '\n';
  }
}

MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) row.push_back(parse_number(tok, line_no, "matrix"));
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError("ragged matrix row at line " + std::to_string(line_no) + " of " +
                      path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("'" + path.string() + "' contains no matrix rows");
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }
  return m;
}

void write_matrix(const MatrixXd& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << format17(m(r, c));
    out << '\n';
  }
}

std::string to_string(NormalizationMethod method) {
  return method == NormalizationMethod::zscore ? "zscore" : "none";
}

NormalizationMethod parse_normalization(const std::string& text) {
  if (text == "zscore") return NormalizationMethod::zscore;
  if (text == "none") return NormalizationMethod::none;
  throw ConfigError("unknown normalization method '" + text + "'");
}

ColumnScaling ColumnScaling::identity(Index columns) {
  return {VectorXd::Zero(columns), VectorXd::Ones(columns)};
}

ColumnScaling ColumnScaling::fit(const MatrixXd& data, const std::vector<std::string>& names) {
  ColumnScaling s{VectorXd(data.cols()), VectorXd(data.cols())};
  const auto n = static_cast<double>(data.rows());
  for (Index c = 0; c < data.cols(); ++c) {
    const double mean = data.col(c).mean();
    const double var = (data.col(c).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (!(sd > 0.0) || sd <= 1e-14 * std::max(1.0, std::abs(mean))) {
      const std::string label =
          c < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(c)]
                                               : "column " + std::to_string(c);
      throw DataError("constant channel '" + label + "' cannot be zscore-normalized");
    }
    s.mean(c) = mean;
    s.scale(c) = sd;
  }
  return s;
}

MatrixXd ColumnScaling::apply(const MatrixXd& x) const {
  return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

MatrixXd ColumnScaling::invert(const MatrixXd& x) const {
  return (x.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
}

NormalizationState NormalizationState::identity(Index nu, Index ny) {
  return {NormalizationMethod::none, ColumnScaling::identity(nu), ColumnScaling::identity(ny)};
}

NormalizationState NormalizationState::fit(std::span<const SignalTable> tables,
                                           NormalizationMethod method) {
  if (tables.empty()) throw DataError("no data to fit normalization on");
  const auto& first = tables.front();
  if (method == NormalizationMethod::none) {
    return identity(first.num_inputs(), first.num_outputs());
  }
  const SignalTable pooled = concatenate(tables);
  return {method, ColumnScaling::fit(pooled.inputs(), pooled.input_names()),
          ColumnScaling::fit(pooled.outputs(), pooled.output_names())};
}

SignalTable NormalizationState::apply(const SignalTable& table) const {
  return table.with_values(inputs.apply(table.inputs()), outputs.apply(table.outputs()));
}

SignalTable NormalizationState::invert(const SignalTable& table) const {
  return table.with_values(inputs.invert(table.inputs()), outputs.invert(table.outputs()));
}

std::pair<SignalTable, NormalizationState> normalize(const SignalTable& data,
                                                     NormalizationMethod method) {
  auto state = NormalizationState::fit(std::span<const SignalTable>(&data, 1), method);
  return {state.apply(data), std::move(state)};
}

SignalTable denormalize(const SignalTable& data, const NormalizationState& state) {
  return state.invert(data);
}

SegmentSet segment(const SignalTable& data, Index frame_size, Index frame_rate) {
  if (frame_size < 1 || frame_rate < 1) throw DataError("frame size and rate must be >= 1");
  if (frame_size > data.samples()) {
    throw DataError("frame size " + std::to_string(frame_size) + " exceeds record length " +
                    std::to_string(data.samples()));
  }
  SegmentSet out;
  for (Index start = 0; start + frame_size <= data.samples(); start += frame_rate) {
    out.push_back(data.rows(start, frame_size));
  }
  return out;
}

std::pair<SignalTable, SignalTable> split(const SignalTable& data, double fraction) {
  const auto n = data.samples();
  const auto first = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
  if (first < 1 || first >= n) throw DataError("split leaves an empty part");
  return {data.rows(0, first), data.rows(first, n - first)};
}

SignalTable concatenate(std::span<const SignalTable> tables) {
  if (tables.empty()) throw DataError("nothing to concatenate");
  const auto& first = tables.front();
  Index n = 0;
  for (const auto& t : tables) {
    if (t.input_names() != first.input_names() || t.output_names() != first.output_names()) {
      throw DataError("cannot concatenate tables with different channels");
    }
    n += t.samples();
  }
  MatrixXd u(n, first.num_inputs()), y(n, first.num_outputs());
  Index r = 0;
  for (const auto& t : tables) {
    u.middleRows(r, t.samples()) = t.inputs();
    y.middleRows(r, t.samples()) = t.outputs();
    r += t.samples();
  }
  return SignalTable(std::move(u), std::move(y), first.ts(), first.start_time(),
                     first.input_names(), first.output_names(), first.intersample());
}

VectorXd fit_percent(const MatrixXd& y_meas, const MatrixXd& y_model) {
  if (y_meas.rows() != y_model.rows() || y_meas.cols() != y_model.cols()) {
    throw DataError("fit_percent: shape mismatch");
  }
  if (y_meas.rows() < 2) throw DataError("fit_percent needs at least 2 samples");
  VectorXd fit(y_meas.cols());
  for (Index c = 0; c < y_meas.cols(); ++c) {
    const double denom = (y_meas.col(c).array() - y_meas.col(c).mean()).matrix().norm();
    if (!(denom > 0.0)) {
      throw DataError("fit_percent: measured channel " + std::to_string(c) + " is constant");
    }
    fit(c) = 100.0 * (1.0 - (y_meas.col(c) - y_model.col(c)).norm() / denom);
  }
  return fit;
}

}  // namespace nlid
