#pragma once

#include "nlid/autodiff.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace nlid {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { tanh, sigmoid, relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& text);

enum class WeightsInit { glorot, zeros };

struct InitSpec {
  WeightsInit weights = WeightsInit::glorot;
  std::uint64_t seed = 0;
};

struct DenseLayer {
  MatrixXd weights;  // out x in
  VectorXd bias;     // out
};

/// Fully connected feed-forward network. Hidden layers share one
/// activation; the last layer is affine.
struct MLPNetwork {
  Index input_dim = 0;
  Index output_dim = 0;
  std::vector<Index> hidden;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;
  std::vector<DenseLayer> layers;

  Index parameter_count() const;
};

inline const std::vector<Index> kDefaultHiddenLayers{64, 64};

MLPNetwork create_mlp(Index input_dim, Index output_dim,
                      const std::vector<Index>& hidden = kDefaultHiddenLayers,
                      Activation activation = Activation::tanh, const InitSpec& init = {});

/// Evaluates on one input vector.
VectorXd forward(const MLPNetwork& net, const VectorXd& x);
/// Evaluates on a batch; columns are samples.
MatrixXd forward_batch(const MLPNetwork& net, const MatrixXd& x);

/// Flat parameters: layer by layer, weights (row-major) then bias.
VectorXd get_params(const MLPNetwork& net);
void set_params(MLPNetwork& net, const VectorXd& params);

/// Tape leaves holding a network's parameters, in get_params order.
struct MlpBinding {
  const MLPNetwork* net = nullptr;
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;

  /// Leaves in flatten order (w0, b0, w1, b1, ...).
  std::vector<ad::Var> leaves() const;
};

MlpBinding bind(const MLPNetwork& net, ad::Tape& tape);
/// Recorded forward pass; x is input_dim x batch.
ad::Var forward(const MlpBinding& binding, ad::Var x);

/// Concatenates per-leaf adjoints into a flat vector in get_params order.
VectorXd flatten_gradient(const std::vector<MatrixXd>& adjoints);

}  // namespace nlid
