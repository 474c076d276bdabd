#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nlid {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Intersample { zoh, foh, pchip };

std::string to_string(Intersample mode);
Intersample parse_intersample(const std::string& text);

/// Uniformly sampled multi-channel input/output record.
///
/// Rows are samples, columns are channels. Row k is taken at
/// start_time + k * ts. Immutable after construction.
class SignalTable {
 public:
  SignalTable(MatrixXd inputs, MatrixXd outputs, double ts, double start_time,
              std::vector<std::string> input_names, std::vector<std::string> output_names,
              std::vector<Intersample> intersample = {});

  const MatrixXd& inputs() const { return inputs_; }
  const MatrixXd& outputs() const { return outputs_; }
  double ts() const { return ts_; }
  double start_time() const { return start_time_; }
  const std::vector<std::string>& input_names() const { return input_names_; }
  const std::vector<std::string>& output_names() const { return output_names_; }
  const std::vector<Intersample>& intersample() const { return intersample_; }

  Index samples() const { return outputs_.rows(); }
  Index num_inputs() const { return inputs_.cols(); }
  Index num_outputs() const { return outputs_.cols(); }
  double time(Index k) const { return start_time_ + static_cast<double>(k) * ts_; }

  /// Contiguous slice [first, first + count), with start time shifted accordingly.
  SignalTable rows(Index first, Index count) const;
  SignalTable with_intersample(std::vector<Intersample> modes) const;
  SignalTable with_values(MatrixXd inputs, MatrixXd outputs) const;

  /// Column index of a channel by name, searching inputs then outputs.
  /// Returns {is_output, column}; throws DataError when unknown.
  std::pair<bool, Index> find_channel(const std::string& name) const;

 private:
  MatrixXd inputs_;
  MatrixXd outputs_;
  double ts_;
  double start_time_;
  std::vector<std::string> input_names_;
  std::vector<std::string> output_names_;
  std::vector<Intersample> intersample_;
};

/// Matrix-pair ingestion with default names u1.., y1.. and zoh intersample.
SignalTable from_matrices(const MatrixXd& u, const MatrixXd& y, double ts, double start_time = 0.0);

struct CsvSchema {
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  std::optional<std::string> time_column;
  /// Required when no time column is given.
  std::optional<double> ts;
  double start_time = 0.0;
};

SignalTable read_csv(const std::filesystem::path& path, const CsvSchema& schema);
/// Writes "t,<inputs>,<outputs>" with 17 significant digits.
void write_csv(const SignalTable& table, const std::filesystem::path& path, bool with_time = true);

/// Whitespace-separated numeric matrix, one row per line, no header.
MatrixXd read_matrix(const std::filesystem::path& path);
void write_matrix(const MatrixXd& m, const std::filesystem::path& path);

enum class NormalizationMethod { none, zscore };

std::string to_string(NormalizationMethod method);
NormalizationMethod parse_normalization(const std::string& text);

/// Per-column affine scaling x_n = (x - mean) / scale.
struct ColumnScaling {
  VectorXd mean;
  VectorXd scale;

  static ColumnScaling identity(Index columns);
  /// Population statistics (divisor N). Throws DataError on a constant column.
  static ColumnScaling fit(const MatrixXd& data, const std::vector<std::string>& names = {});

  MatrixXd apply(const MatrixXd& x) const;
  MatrixXd invert(const MatrixXd& x) const;
};

struct NormalizationState {
  NormalizationMethod method = NormalizationMethod::none;
  ColumnScaling inputs;
  ColumnScaling outputs;

  static NormalizationState identity(Index nu, Index ny);
  /// Statistics pooled over every sample of every table.
  static NormalizationState fit(std::span<const SignalTable> tables, NormalizationMethod method);

  SignalTable apply(const SignalTable& table) const;
  SignalTable invert(const SignalTable& table) const;
};

std::pair<SignalTable, NormalizationState> normalize(const SignalTable& data, NormalizationMethod method);
SignalTable denormalize(const SignalTable& data, const NormalizationState& state);

/// Ordered contiguous slices of one record; all share Ts and channel names.
using SegmentSet = std::vector<SignalTable>;

/// Frames of `frame_size` samples starting every `frame_rate` rows; the
/// trailing partial frame is dropped.
SegmentSet segment(const SignalTable& data, Index frame_size, Index frame_rate);

/// First `fraction` of the rows and the remainder.
std::pair<SignalTable, SignalTable> split(const SignalTable& data, double fraction);

/// Vertically stacks tables that share channel layout (start time of the first).
SignalTable concatenate(std::span<const SignalTable> tables);

/// NRMSE fit per channel: 100 * (1 - |y - yhat| / |y - mean(y)|).
VectorXd fit_percent(const MatrixXd& y_meas, const MatrixXd& y_model);

}  // namespace nlid
