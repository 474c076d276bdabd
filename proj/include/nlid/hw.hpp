#pragma once

#include "nlid/mlp.hpp"
#include "nlid/optim.hpp"
#include "nlid/signal_data.hpp"

#include <optional>

namespace nlid {

/// Discrete-time x(t+1) = A x + B v, w = C x + D v.
struct LinearSSBlock {
  MatrixXd a, b, c, d;
  double ts = 1.0;

  Index order() const { return a.rows(); }
  Index inputs() const { return b.cols(); }
  Index outputs() const { return c.rows(); }
  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
};

/// v is N x nu (rows are samples); returns N x ny. x0 defaults to zero.
MatrixXd simulate(const LinearSSBlock& block, const MatrixXd& v, const VectorXd& x0 = VectorXd());

struct LinearFit {
  LinearSSBlock block;
  int order = 0;
  std::vector<double> aic;  // per order 1..max_order; NaN where the regression was rank deficient
};

/// ARX(n, n) least squares for n = 1..max_order in observer-canonical form,
/// picking the order of least AIC = N log(SSE/N) + 2 * (parameter count).
/// All orders use the same regression rows (t >= max_order) so their SSE
/// values are comparable.
LinearFit fit_linear_auto(const SegmentSet& data, int max_order = 10);
LinearFit fit_linear_auto(const SignalTable& data, int max_order = 10);

/// Hammerstein-Wiener model on normalized signals:
/// u -> scale -> input_nl (per channel) -> linear -> output_nl (per channel) -> unscale -> y.
struct HwModel {
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  std::vector<std::optional<MLPNetwork>> input_nl;   // 1 -> 1 each; empty optional is the identity
  LinearSSBlock linear;
  std::vector<std::optional<MLPNetwork>> output_nl;
  NormalizationState normalization;

  Index num_inputs() const { return static_cast<Index>(input_names.size()); }
  Index num_outputs() const { return static_cast<Index>(output_names.size()); }
  bool has_input_nl() const;
  bool has_output_nl() const;
  /// Throws ConfigError when channel counts do not chain.
  void validate() const;
};

/// Physical outputs, N x ny. Throws NumericalError on a non-finite value
/// (with the time index) and DataError on a channel mismatch.
MatrixXd simulate(const HwModel& model, const SignalTable& data);
/// Same, from linear-block state x0 (the block acts on normalized signals).
MatrixXd simulate(const HwModel& model, const SignalTable& data, const VectorXd& x0);

/// Linear-block initial state that minimizes the squared normalized
/// simulation error over the first `horizon` samples (0: all), by LM.
VectorXd estimate_initial_state(const HwModel& model, const SignalTable& data, Index horizon = 0);

struct NonlinearitySpec {
  bool enabled = false;
  std::vector<Index> hidden{5, 5};
  Activation activation = Activation::tanh;
};

struct HwStructure {
  NonlinearitySpec input;
  NonlinearitySpec output;
  int max_order = 10;
  int order = 0;  // 0: chosen by fit_linear_auto
  NormalizationMethod normalization = NormalizationMethod::zscore;
  std::uint64_t seed = 0;
};

/// Fits normalization and the linear block, then initializes each
/// nonlinearity by least squares: input networks to the identity over the
/// observed input range, output networks to the static map from the linear
/// block's simulated output to the measured output.
HwModel create_hw(const SegmentSet& data, const HwStructure& structure, LinearFit* fit = nullptr);

struct HwTrainingReport {
  double initial_cost = 0.0;  // sum of squared normalized simulation errors
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  std::string stop_reason;
  std::vector<EpochRecord> trace;
  double fit_percent = 0.0;  // mean over outputs, training data
};

/// Joint LM over every network weight and A, B, C, D on the free-run
/// simulation error; each segment starts from x = 0. Ends with
/// normalize_gain().
HwTrainingReport train_hw(HwModel& model, const SegmentSet& data, const LMOptions& options = {});

/// Rescales the linear block so |C|_2 = 1, absorbing the factor into the
/// first layer of every output network. No-op unless every output channel
/// has a network.
void normalize_gain(HwModel& model);

VectorXd hw_params(const HwModel& model);
void set_hw_params(HwModel& model, const VectorXd& params);

}  // namespace nlid
