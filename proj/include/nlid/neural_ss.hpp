#pragma once

#include "nlid/mlp.hpp"
#include "nlid/optim.hpp"
#include "nlid/signal_data.hpp"

#include <optional>

namespace nlid {

// State-space model whose transition (and optionally output) map is a
// feed-forward network:
//   discrete:   x(k+1) = f(x(k), u(k))        (ts > 0)
//   continuous: dx/dt  = f(x(t), u(t))        (ts == 0, fixed-step RK4)
//   y = [x; g(x, u)]
// With a latent dimension the dynamics run on z = E(x) and x = D(z).
// Networks act on normalized signals; `normalization` maps physical units.
struct NeuralStateSpaceModel {
  Index nx = 0;
  Index nu = 0;
  Index ny = 0;
  double ts = 0.0;
  MLPNetwork state_net;
  std::optional<MLPNetwork> output_net;
  std::optional<Index> latent_dim;
  std::optional<MLPNetwork> encoder;
  std::optional<MLPNetwork> decoder;
  NormalizationState normalization;
  bool time_invariant = true;
  // Time-varying models feed (t - time_origin) / time_span to the networks.
  double time_origin = 0.0;
  double time_span = 1.0;
  // Default RK4 step for continuous-time simulation (0 = unset).
  double ode_step = 0.0;

  bool continuous() const { return ts == 0.0; }
  Index dynamic_dim() const { return latent_dim.value_or(nx); }
};

struct NssNetworkOptions {
  std::vector<Index> state_hidden = kDefaultHiddenLayers;
  Activation state_activation = Activation::tanh;
  std::vector<Index> output_hidden = kDefaultHiddenLayers;
  Activation output_activation = Activation::tanh;
  std::vector<Index> autoencoder_hidden{10};
  Activation autoencoder_activation = Activation::tanh;
  WeightsInit weights = WeightsInit::glorot;
  std::uint64_t seed = 0;
  bool time_invariant = true;
};

/// Throws ConfigError when ny < nx, nx < 1, nu < 0, ts < 0 or latent_dim < 1.
NeuralStateSpaceModel create_nss(Index nx, Index nu, Index ny, double ts,
                                 std::optional<Index> latent_dim = std::nullopt,
                                 const NssNetworkOptions& options = {});

struct NssSimulation {
  MatrixXd states;   // N x nx, physical units
  MatrixXd outputs;  // N x ny
};

struct NssSimulationOptions {
  double ode_step = 0.0;  // 0: use the model's
};

/// Free-run simulation over the grid of `data` from physical state x0.
/// Input channels follow data.intersample() between samples. Throws
/// NumericalError naming the step at which the state stops being finite.
NssSimulation simulate(const NeuralStateSpaceModel& model, const SignalTable& data, const VectorXd& x0,
                       const NssSimulationOptions& options = {});

/// One discrete transition in physical units (no latent form).
VectorXd step_physical(const NeuralStateSpaceModel& model, const VectorXd& x, const VectorXd& u,
                       double t = 0.0);

struct NssTrainingOptions {
  TrainingOptions train;
  /// Overrides the intersample mode of every input channel when set.
  std::optional<Intersample> input_intersample;
  double ode_step = 0.0;  // continuous time: defaults to the data Ts
  double prediction_weight = 1.0;
  double reconstruction_weight = 1.0;
  NormalizationMethod normalization = NormalizationMethod::zscore;
  /// Segments per first-order minibatch, taken in segment order.
  Index batch_segments = 100;

  void validate() const;
};

struct NssTrainingReport {
  std::vector<EpochRecord> trace;
  VectorXd fit_percent;  // per output channel, segment rollouts on training data
  std::string stop_reason;
};

/// Minimizes the mean over all samples of all segments of
/// w_p * L(y_sim, y) + w_r * |D(E(x)) - x|^2 (second term with an autoencoder).
/// Every segment starts from its measured first state. Normalization is
/// fitted on the training data when the model has none yet.
NssTrainingReport train_nss(NeuralStateSpaceModel& model, const SegmentSet& data,
                            const NssTrainingOptions& options);
NssTrainingReport train_nss(NeuralStateSpaceModel& model, const SignalTable& data,
                            const NssTrainingOptions& options);

/// Flat parameters: state_net, output_net, encoder, decoder.
VectorXd nss_params(const NeuralStateSpaceModel& model);
void set_nss_params(NeuralStateSpaceModel& model, const VectorXd& params);

/// Training loss and its gradient with respect to nss_params, on data that
/// is already normalized. Exposed for gradient checks.
double nss_loss(const NeuralStateSpaceModel& model, const SegmentSet& normalized,
                const NssTrainingOptions& options, VectorXd* gradient);

}  // namespace nlid
