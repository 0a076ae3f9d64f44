#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nfr/network.hpp"

namespace nfr {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// When set, the learning rate refers to the per-connection weights
  /// W^(l) / m^(l-1) and U / m^(L) that the mean-field sums actually apply,
  /// so the step on W is rescaled by the fan-in (Adam) or its square (SGD).
  bool fan_in_scaling = true;

  void validate() const;
};

/// theta <- theta - lr * g.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

/// One bias-corrected Adam update; `step` is the 1-based step count.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments, std::size_t step,
               double lr, double beta1, double beta2, double eps);

/// Optimizer state for every parameter block of a Network.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const Network& net);

  /// Throws DivergenceError when a gradient is not finite.
  void step(Network& net, const Gradients& grads);
  /// Clears moments and the step count.
  void reset();
  std::size_t steps() const { return step_; }

 private:
  void step_block(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double fan_in);

  OptimizerConfig cfg_;
  std::vector<AdamMoments> moments_;  // one per weight matrix, then the top layer
  std::size_t step_ = 0;
};

}  // namespace nfr
