#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nfr/matrix.hpp"

namespace nfr {

enum class Activation { Tanh, Sigmoid, Softplus };

double activate(Activation kind, double x);
/// First derivative; bounded by 1 for every supported kind.
double activate_slope(Activation kind, double x);
/// Same slope given fx = activate(kind, x), which saves re-evaluating h.
double activate_slope(Activation kind, double x, double fx);
std::string to_string(Activation kind);
Activation parse_activation(std::string_view name);

/// Bias-free fully-connected network in the mean-field parameterization:
///
///   g^(l)_j = (1/m^(l-1)) sum_k W^(l)_{j,k} f^(l-1)_k,   f^(l)_j = h(g^(l)_j)
///   out     = (1/m^(L))   sum_j U_j f^(L)_j
///
/// Layer indices are 1-based in the math and 0-based in `weights`, so
/// weights[l - 1] holds W^(l) with shape m^(l) x m^(l-1) (row = output unit).
struct Network {
  Activation activation = Activation::Tanh;
  std::vector<Matrix> weights;
  Matrix top;  // m^(L) x K, row j is u_j
  std::uint64_t seed = 0;

  std::size_t depth() const { return weights.size(); }
  std::size_t input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  std::size_t output_dim() const { return top.cols(); }
  /// m^(l) for l in [0, L]; m^(0) is the input dimension.
  std::size_t width(std::size_t layer) const;
  /// m^(1..L).
  std::vector<std::size_t> hidden_widths() const;
  std::size_t parameter_count() const;

  /// Throws DimensionError on inconsistent shapes and ValueError on non-finite entries.
  void validate() const;

  bool operator==(const Network&) const = default;
};

/// Cached forward quantities for a batch of inputs (one row per sample).
struct ForwardTrace {
  std::vector<Matrix> pre;  // pre[l - 1]: B x m^(l), the g^(l)
  std::vector<Matrix> act;  // act[l]: B x m^(l), act[0] is the input
  Matrix output;            // B x K

  std::size_t batch() const { return output.rows(); }
};

ForwardTrace forward(const Network& net, std::span<const double> x);
ForwardTrace forward_batch(const Network& net, const Matrix& inputs);

/// Gradient buffers shaped like a Network's parameters.
struct Gradients {
  std::vector<Matrix> weights;
  Matrix top;

  static Gradients zeros_like(const Network& net);
  void set_zero();
  void add_scaled(const Gradients& other, double scale);
  bool all_finite() const;
};

struct BackwardResult {
  Gradients grads;
  /// sensitivity[l - 1] is m^(l) x K; row i holds d out / d g^(l)_i.
  std::vector<Matrix> sensitivity;
};

/// Reverse pass for a single-sample trace. Gradients are those of
/// <d_out, out(x)>; sensitivities come from one reverse sweep per output
/// component, each sweep covering every layer.
BackwardResult backward(const Network& net, const ForwardTrace& trace, std::span<const double> d_out);

/// Adds the gradient of sum_b <d_out_b, out(x_b)> to `acc`. d_out is B x K.
void accumulate_gradients(const Network& net, const ForwardTrace& trace, const Matrix& d_out,
                          Gradients& acc);

/// d out_c / d g^(l)_i for every sample of the trace: result[l - 1] is B x m^(l).
std::vector<Matrix> sensitivities(const Network& net, const ForwardTrace& trace, std::size_t component);

enum class LossKind { Squared, Logistic };

struct Loss {
  LossKind kind = LossKind::Squared;
  std::vector<double> target;  // squared
  std::size_t label = 0;       // logistic, 0-based

  static Loss squared(std::vector<double> target) { return {LossKind::Squared, std::move(target), 0}; }
  static Loss logistic(std::size_t label) { return {LossKind::Logistic, {}, label}; }
};

struct LossValue {
  double value = 0.0;
  std::vector<double> d_out;
};

LossValue loss_and_grad(std::span<const double> output, const Loss& loss);

struct InitSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> widths;  // m^(1..L)
  std::size_t output_dim = 1;
  Activation activation = Activation::Tanh;
  /// Multiplies the standard deviation sqrt(m^(l-1)).
  double gain = 1.0;
  /// Extra factor on the layer-1 weights of the last input coordinate, which
  /// is the constant coordinate of embedded scalar inputs.
  double last_input_gain = 1.0;
};

/// W^(l)_{j,k} ~ N(0, gain^2 m^(l-1)) and u_j ~ N(0, gain^2 m^(L)), i.i.d.,
/// then column d of W^(1) times last_input_gain.
Network init_network(const InitSpec& spec, std::uint64_t seed);

}  // namespace nfr
