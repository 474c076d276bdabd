#include "nlid/mlp.hpp"

#include "nlid/errors.hpp"
#include "nlid/rng.hpp"

#include <cmath>

namespace nlid {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
  }
  return "tanh";
}

Activation parse_activation(const std::string& text) {
  if (text == "tanh") return Activation::tanh;
  if (text == "sigmoid") return Activation::sigmoid;
  if (text == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + text + "'");
}

Index MLPNetwork::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

MLPNetwork create_mlp(Index input_dim, Index output_dim, const std::vector<Index>& hidden,
                      Activation activation, const InitSpec& init) {
  if (input_dim < 1 || output_dim < 1) {
    throw ConfigError("network dimensions must be positive");
  }
  for (auto h : hidden) {
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  }
  MLPNetwork net;
  net.input_dim = input_dim;
  net.output_dim = output_dim;
  net.hidden = hidden;
  net.activation = activation;
  net.seed = init.seed;

  CounterRng rng(init.seed);
  Index fan_in = input_dim;
  std::vector<Index> widths = hidden;
  widths.push_back(output_dim);
  for (auto fan_out : widths) {
    DenseLayer layer{MatrixXd::Zero(fan_out, fan_in), VectorXd::Zero(fan_out)};
    if (init.weights == WeightsInit::glorot) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (Index r = 0; r < fan_out; ++r) {
        for (Index c = 0; c < fan_in; ++c) layer.weights(r, c) = rng.uniform(-bound, bound);
      }
    }
    net.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return net;
}

namespace {

void activate(MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::sigmoid:
      z = z.unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
      break;
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
  }
}

ad::Var activate(ad::Var z, Activation a) {
  switch (a) {
    case Activation::tanh: return ad::tanh(z);
    case Activation::sigmoid: return ad::sigmoid(z);
    case Activation::relu: return ad::relu(z);
  }
  return z;
}

}  // namespace

MatrixXd forward_batch(const MLPNetwork& net, const MatrixXd& x) {
  if (x.rows() != net.input_dim) {
    throw DataError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                    std::to_string(net.input_dim));
  }
  MatrixXd h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    MatrixXd z = (l.weights * h).colwise() + l.bias;
    if (i + 1 < net.layers.size()) activate(z, net.activation);
    h = std::move(z);
  }
  return h;
}

VectorXd forward(const MLPNetwork& net, const VectorXd& x) { return forward_batch(net, x); }

VectorXd get_params(const MLPNetwork& net) {
  VectorXd p(net.parameter_count());
  Index k = 0;
  for (const auto& l : net.layers) {
    for (Index r = 0; r < l.weights.rows(); ++r) {
      for (Index c = 0; c < l.weights.cols(); ++c) p(k++) = l.weights(r, c);
    }
    for (Index r = 0; r < l.bias.size(); ++r) p(k++) = l.bias(r);
  }
  return p;
}

void set_params(MLPNetwork& net, const VectorXd& params) {
  if (params.size() != net.parameter_count()) {
    throw DataError("parameter vector has " + std::to_string(params.size()) +
                    " entries, network needs " + std::to_string(net.parameter_count()));
  }
  Index k = 0;
  for (auto& l : net.layers) {
    for (Index r = 0; r < l.weights.rows(); ++r) {
      for (Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = params(k++);
    }
    for (Index r = 0; r < l.bias.size(); ++r) l.bias(r) = params(k++);
  }
}

std::vector<ad::Var> MlpBinding::leaves() const {
  std::vector<ad::Var> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

MlpBinding bind(const MLPNetwork& net, ad::Tape& tape) {
  MlpBinding b;
  b.net = &net;
  for (const auto& l : net.layers) {
    b.weights.push_back(tape.variable(l.weights));
    b.biases.push_back(tape.variable(MatrixXd(l.bias)));
  }
  return b;
}

ad::Var forward(const MlpBinding& binding, ad::Var x) {
  const auto& net = *binding.net;
  if (x.rows() != net.input_dim) {
    throw DataError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                    std::to_string(net.input_dim));
  }
  ad::Var h = x;
  for (std::size_t i = 0; i < binding.weights.size(); ++i) {
    ad::Var z = ad::add(ad::matmul(binding.weights[i], h), binding.biases[i]);
    h = (i + 1 < binding.weights.size()) ? activate(z, net.activation) : z;
  }
  return h;
}

VectorXd flatten_gradient(const std::vector<MatrixXd>& adjoints) {
  Index n = 0;
  for (const auto& a : adjoints) n += a.size();
  VectorXd g(n);
  Index k = 0;
  for (const auto& a : adjoints) {
    // Row-major to match get_params.
    for (Index r = 0; r < a.rows(); ++r) {
      for (Index c = 0; c < a.cols(); ++c) g(k++) = a(r, c);
    }
  }
  return g;
}

}  // namespace nlid
