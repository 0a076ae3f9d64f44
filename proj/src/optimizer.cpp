#include "nfr/optimizer.hpp"

#include <cmath>

#include "nfr/error.hpp"

namespace nfr {

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValueError("learning rate must be finite and non-negative");
  if (kind == OptimizerKind::Adam &&
      (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)))
    throw ValueError("adam needs betas in [0, 1) and eps > 0");
}

namespace {

void check_finite(std::span<const double> grads) {
  bool ok = true;
  for (double g : grads) ok &= std::isfinite(g);
  if (ok) return;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw DivergenceError("non-finite gradient at parameter " + std::to_string(i));
}

}  // namespace

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  check_finite(grads);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments, std::size_t step,
               double lr, double beta1, double beta2, double eps) {
  if (moments.first.size() != params.size()) {
    moments.first.assign(params.size(), 0.0);
    moments.second.assign(params.size(), 0.0);
  }
  check_finite(grads);
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    params[i] -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
  }
}

Optimizer::Optimizer(const OptimizerConfig& cfg, const Network& net) : cfg_(cfg) {
  cfg_.validate();
  moments_.resize(net.depth() + 1);
}

void Optimizer::reset() {
  for (auto& m : moments_) m = AdamMoments{};
  step_ = 0;
}

void Optimizer::step_block(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                           double fan_in) {
  const double scale = cfg_.fan_in_scaling ? fan_in : 1.0;
  if (cfg_.kind == OptimizerKind::Sgd) {
    sgd_step(params, grads, cfg_.lr * scale * scale);
  } else {
    // Adam on w / scale with (lr, eps) is Adam on w with (lr * scale, eps / scale).
    adam_step(params, grads, moments, step_, cfg_.lr * scale, cfg_.beta1, cfg_.beta2, cfg_.eps / scale);
  }
}

void Optimizer::step(Network& net, const Gradients& grads) {
  if (moments_.size() != net.depth() + 1) throw DimensionError("optimizer was built for a different network");
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient");
  ++step_;
  for (std::size_t l = 0; l < net.depth(); ++l)
    step_block(net.weights[l].values(), grads.weights[l].values(), moments_[l],
               static_cast<double>(net.weights[l].cols()));
  step_block(net.top.values(), grads.top.values(), moments_.back(), static_cast<double>(net.top.rows()));
}

}  // namespace nfr
