#pragma once

#include "nlid/mlp.hpp"
#include "nlid/optim.hpp"
#include "nlid/regressors.hpp"
#include "nlid/signal_data.hpp"

#include <optional>

namespace nlid {

enum class MappingKind { linear_in_regressors, sigmoid_network, neural_network };

std::string to_string(MappingKind k);
MappingKind parse_mapping_kind(const std::string& text);

struct MappingSpec {
  MappingKind kind = MappingKind::linear_in_regressors;
  Index units = 10;                  // sigmoid_network
  std::vector<Index> hidden{10};     // neural_network
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;
};

// Regressor-to-output map on normalized regressors z = (r - mu) / sigma:
//   linear:  F(z) = theta'z + d
//   sigmoid: F(z) = theta'z + d + sum_k a_k * sigmoid(v_k'z + c_k)
//   neural:  F(z) = theta'z + d + net(z)
// Flat parameter order: theta, d, then a, V (row-major), c or the network.
struct MappingFcn {
  MappingKind kind = MappingKind::linear_in_regressors;
  VectorXd theta;
  double offset = 0.0;
  VectorXd a;
  MatrixXd v;  // K x R
  VectorXd c;
  std::optional<MLPNetwork> net;

  Index regressor_count() const { return theta.size(); }
  Index parameter_count() const;
};

VectorXd mapping_params(const MappingFcn& f);
void set_mapping_params(MappingFcn& f, const VectorXd& params);
/// F on a batch of normalized regressor columns (R x M); returns M values.
VectorXd evaluate_mapping(const MappingFcn& f, const MatrixXd& z);
/// Flat parameter indices that multiply regressor j: theta_j plus the
/// first-layer weights on column j.
std::vector<Index> regressor_group(const MappingFcn& f, Index j);

/// Single-output nonlinear ARX model.
struct NlarxModel {
  std::string output_name;
  std::vector<std::string> input_names;
  std::vector<Regressor> regressors;
  MappingFcn mapping;
  NormalizationMethod normalization = NormalizationMethod::none;
  ColumnScaling regressor_scaling;  // mu, sigma per regressor
  ColumnScaling output_scaling;
  std::vector<bool> active;

  Index regressor_count() const { return static_cast<Index>(regressors.size()); }
  Index max_lag() const;
  std::vector<std::string> regressor_names() const;
  Index active_count() const;
};

/// Throws ConfigError on a bad spec or mapping.
NlarxModel create_nlarx(const std::vector<RegressorSpec>& specs, const std::vector<std::string>& input_names,
                        const std::string& output_name, const MappingSpec& mapping = {});
NlarxModel create_nlarx(std::vector<Regressor> regressors, const std::vector<std::string>& input_names,
                        const std::string& output_name, const MappingSpec& mapping = {});

struct NlarxPrediction {
  VectorXd y;         // y(k) belongs to time index k + offset
  Index offset = 0;
};

/// One-step-ahead prediction from measured regressors, physical units.
NlarxPrediction predict_one_step(const NlarxModel& model, const SignalTable& data);

/// Free-run simulation: the first max_lag outputs are taken from `data`,
/// later output regressors use the model's own outputs. Returns all N
/// samples. Throws NumericalError naming the time index of divergence.
VectorXd simulate(const NlarxModel& model, const SignalTable& data);

enum class Focus { prediction, simulation };
enum class SearchMethod { lm, first_order };

std::string to_string(Focus f);
Focus parse_focus(const std::string& text);
std::string to_string(SearchMethod s);
SearchMethod parse_search(const std::string& text);

struct NlarxTrainingOptions {
  Focus focus = Focus::prediction;
  SearchMethod search = SearchMethod::lm;
  NormalizationMethod normalization = NormalizationMethod::zscore;
  LMOptions lm;
  TrainingOptions first_order;
};

struct NlarxTrainingReport {
  double initial_cost = 0.0;  // mean squared normalized residual
  double final_cost = 0.0;
  int iterations = 0;
  std::string stop_reason;
  std::vector<EpochRecord> trace;
  double fit_percent = 0.0;  // in the training focus, on the training data
};

/// Prediction focus with a linear mapping is solved in closed form (column
/// pivoted QR); a rank-deficient dictionary throws DataError naming the
/// dependent columns. Other cases start from that fit and run LM or a
/// first-order solver; simulation focus differentiates through the
/// recursion. Normalization is fitted on the training data.
NlarxTrainingReport train_nlarx(NlarxModel& model, const SegmentSet& data, const NlarxTrainingOptions& options);
NlarxTrainingReport train_nlarx(NlarxModel& model, const SignalTable& data, const NlarxTrainingOptions& options);

/// Mean squared normalized residual of the focus and its gradient with
/// respect to mapping_params (for gradient checks).
double nlarx_loss(const NlarxModel& model, const SegmentSet& data, Focus focus, VectorXd* gradient);

enum class SparsityMeasure { l1, l0, log_sum };

std::string to_string(SparsityMeasure m);
SparsityMeasure parse_sparsity(const std::string& text);

/// Group proximity operator with threshold lambda * step * weight:
///   l1, log_sum: v * max(0, 1 - t / |v|)
///   l0:          0 if |v| <= sqrt(2 t), else v
VectorXd prox(const VectorXd& group, SparsityMeasure measure, double lambda, double step, double weight = 1.0);

struct SparsificationOptions {
  SparsityMeasure measure = SparsityMeasure::l1;
  double lambda = 0.1;
  int max_outer_iter = 500;
  double step = 0.0;  // 0: automatic
  double log_sum_epsilon = 1e-3;
  int reweight_rounds = 5;  // log_sum
  double zero_tolerance = 1e-8;
  double tolerance = 1e-10;
  std::vector<std::string> keep;  // regressors excluded from pruning
};

struct SparsificationReport {
  std::vector<std::string> names;
  VectorXd group_norms;  // after the proximal loop, before re-fitting
  std::vector<bool> active;
  double lambda = 0.0;
  int iterations = 0;
};

/// Proximal-gradient regressor selection on a trained model, then a re-fit
/// of the survivors with `estimation`. Throws ConfigError when every
/// regressor would be eliminated.
SparsificationReport sparsify(NlarxModel& model, const SegmentSet& data, const SparsificationOptions& options,
                              const NlarxTrainingOptions& estimation);

}  // namespace nlid
