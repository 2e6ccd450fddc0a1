#ifndef CMGP_MLP_HPP
#define CMGP_MLP_HPP

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numcore.hpp"
#include "rng.hpp"

namespace cmgp {

enum class Activation { Tanh, ReLU };

inline std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

inline Activation activation_from_string(const std::string &s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::ReLU;
  throw InvalidArgument("unknown activation '" + s + "'");
}

/*
 * Fully connected feature extractor. layer_sizes = [P, h_1, ..., d_z];
 * weights[k] is layer_sizes[k+1] x layer_sizes[k]. The activation is
 * applied after every layer, the last one included, so Tanh features stay
 * inside (-1, 1).
 */
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::Tanh;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }

  void validate() const {
    if (layer_sizes.size() < 2) {
      throw InvalidArgument("MLP needs at least an input and an output size");
    }
    if (weights.size() != layer_sizes.size() - 1 ||
        biases.size() != weights.size()) {
      throw DimensionMismatch("MLP layer count inconsistent with layer_sizes");
    }
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (layer_sizes[k] < 1 || layer_sizes[k + 1] < 1 ||
          weights[k].rows() != layer_sizes[k + 1] ||
          weights[k].cols() != layer_sizes[k] ||
          biases[k].size() != layer_sizes[k + 1]) {
        throw DimensionMismatch("MLP layer " + std::to_string(k) +
                                " shape inconsistent with layer_sizes");
      }
    }
  }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static MlpParams glorot(std::vector<int> sizes, Activation activation,
                          Rng &rng) {
    MlpParams p;
    p.layer_sizes = std::move(sizes);
    p.activation = activation;
    for (std::size_t k = 0; k + 1 < p.layer_sizes.size(); ++k) {
      const int fan_in = p.layer_sizes[k];
      const int fan_out = p.layer_sizes[k + 1];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-bound, bound);
      Matrix w(fan_out, fan_in);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
      }
      p.weights.push_back(std::move(w));
      p.biases.push_back(Vector::Zero(fan_out));
    }
    p.validate();
    return p;
  }
};

/// Per-layer cache of one forward pass: inputs[k] feeds layer k,
/// pre[k] is its pre-activation.
struct ForwardTrace {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

namespace detail {

inline Matrix activate(Activation a, const Matrix &z) {
  if (a == Activation::Tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

inline Matrix activation_derivative(Activation a, const Matrix &z) {
  if (a == Activation::Tanh) {
    return (1.0 - z.array().tanh().square()).matrix();
  }
  return (z.array() > 0.0).cast<double>().matrix();
}

} // namespace detail

inline std::pair<Matrix, ForwardTrace> forward(const MlpParams &params,
                                               const Matrix &x) {
  params.validate();
  if (x.cols() != params.input_dim()) {
    throw DimensionMismatch("MLP input has " + std::to_string(x.cols()) +
                            " columns, expected " +
                            std::to_string(params.input_dim()));
  }
  ForwardTrace trace;
  Matrix h = x;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    Matrix z = h * params.weights[k].transpose();
    z.rowwise() += params.biases[k].transpose();
    trace.inputs.push_back(std::move(h));
    h = detail::activate(params.activation, z);
    trace.pre.push_back(std::move(z));
  }
  return {std::move(h), std::move(trace)};
}

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix inputs;
};

/// Reverse-mode gradients of sum_ij G_ij H_ij.
inline MlpGradients backward(const MlpParams &params, const ForwardTrace &trace,
                             const Matrix &upstream) {
  params.validate();
  const std::size_t layers = params.num_layers();
  if (trace.inputs.size() != layers || trace.pre.size() != layers) {
    throw TraceMismatch("trace has " + std::to_string(trace.pre.size()) +
                        " layers, params have " + std::to_string(layers));
  }
  const Eigen::Index n = trace.inputs.front().rows();
  for (std::size_t k = 0; k < layers; ++k) {
    if (trace.inputs[k].rows() != n || trace.pre[k].rows() != n ||
        trace.inputs[k].cols() != params.layer_sizes[k] ||
        trace.pre[k].cols() != params.layer_sizes[k + 1]) {
      throw TraceMismatch("trace layer " + std::to_string(k) +
                          " shape does not match params");
    }
  }
  if (upstream.rows() != n || upstream.cols() != params.output_dim()) {
    throw DimensionMismatch("upstream gradient shape does not match output");
  }
  MlpGradients g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix delta = upstream;
  for (std::size_t k = layers; k-- > 0;) {
    delta = delta.cwiseProduct(
        detail::activation_derivative(params.activation, trace.pre[k]));
    g.weights[k] = delta.transpose() * trace.inputs[k];
    g.biases[k] = delta.colwise().sum().transpose();
    delta = delta * params.weights[k];
  }
  g.inputs = std::move(delta);
  return g;
}

} // namespace cmgp

#endif
