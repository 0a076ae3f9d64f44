#include "nfr/repopulation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "nfr/error.hpp"

namespace nfr {

ImportanceWeights ImportanceWeights::uniform(const Network& net) {
  ImportanceWeights p;
  for (std::size_t l = 1; l <= net.depth(); ++l) p.layers.emplace_back(net.width(l), 1.0);
  return p;
}

void ImportanceWeights::check_positive(const Network& net) const {
  if (layers.size() != net.depth())
    throw DimensionError("importance weights cover " + std::to_string(layers.size()) + " layers, network has " +
                         std::to_string(net.depth()));
  for (std::size_t l = 1; l <= net.depth(); ++l) {
    if (layers[l - 1].size() != net.width(l))
      throw DimensionError("importance weights for layer " + std::to_string(l) + " have the wrong length");
    for (double v : layers[l - 1])
      if (!(v > 0.0) || !std::isfinite(v))
        throw ValueError("importance weight in layer " + std::to_string(l) + " is not strictly positive");
  }
}

void ImportanceWeights::validate(const Network& net, double floor) const {
  check_positive(net);
  for (std::size_t l = 1; l <= net.depth(); ++l) {
    const auto& w = layers[l - 1];
    double sum = 0.0;
    for (double v : w) {
      if (v < floor) throw ValueError("importance weight in layer " + std::to_string(l) + " is below the floor");
      sum += v;
    }
    const double m = static_cast<double>(w.size());
    if (std::abs(sum - m) > 1e-9 * m)
      throw ValueError("importance weights of layer " + std::to_string(l) + " sum to " + std::to_string(sum) +
                       " instead of " + std::to_string(w.size()));
  }
}

std::vector<double> weighted_forward(const Network& net, const ImportanceWeights& p, std::span<const double> x) {
  p.check_positive(net);
  if (x.size() != net.input_dim()) throw DimensionError("layer 1 expects input of length " +
                                                        std::to_string(net.input_dim()));
  std::vector<double> f(x.begin(), x.end());
  std::vector<double> p_in(x.size(), 1.0);
  for (std::size_t l = 1; l <= net.depth(); ++l) {
    const Matrix& w = net.weights[l - 1];
    std::vector<double> next(w.rows());
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < w.cols(); ++k) s += (w(j, k) / p_in[k]) * (p_in[k] * f[k]);
      next[j] = activate(net.activation, s / static_cast<double>(w.cols()));
    }
    f = std::move(next);
    p_in = p.layers[l - 1];
  }
  const std::size_t m = net.top.rows();
  std::vector<double> out(net.output_dim(), 0.0);
  for (std::size_t c = 0; c < out.size(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (net.top(j, c) / p_in[j]) * (p_in[j] * f[j]);
    out[c] = s / static_cast<double>(m);
  }
  return out;
}

std::vector<double> project_scaled_simplex(std::span<const double> v, double total, double floor) {
  const std::size_t n = v.size();
  if (n == 0) throw ValueError("cannot project an empty vector");
  const double slack = total - static_cast<double>(n) * floor;
  if (!(slack >= 0.0) || !std::isfinite(total))
    throw ValueError("infeasible projection: total " + std::to_string(total) + " is below length * floor");

  bool feasible = true;
  double sum = 0.0;
  for (double x : v) {
    feasible = feasible && x >= floor;
    sum += x;
  }
  if (feasible && std::abs(sum - total) <= 1e-12 * std::max(1.0, std::abs(total)))
    return {v.begin(), v.end()};

  // Shift to the standard simplex {q >= 0, sum q = slack}, then threshold.
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = v[i] - floor;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double prefix = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    prefix += sorted[i];
    const double t = (prefix - slack) / static_cast<double>(i + 1);
    if (sorted[i] - t > 0.0) theta = t;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(v[i] - floor - theta, 0.0) + floor;
  return out;
}

void ProxConfig::validate() const {
  if (!(step > 0.0) || !(tolerance >= 0.0) || !(floor > 0.0))
    throw ValueError("prox config needs step > 0, tolerance >= 0 and floor > 0");
}

ProxResult solve_weights_traced(const Network& net, const RegularizerSpec& spec, const ProxConfig& cfg) {
  cfg.validate();
  ProxResult result{ImportanceWeights::uniform(net), {}};
  auto& p = result.weights;
  double current = weighted_reg(net, spec, p);
  result.objective.push_back(current);
  if (cfg.iterations == 0) return result;

  auto check_finite = [](const std::vector<std::vector<double>>& g) {
    for (const auto& layer : g)
      for (double v : layer)
        if (!std::isfinite(v)) throw ValueError("importance-weight gradient is not finite");
  };

  auto grad = weighted_reg_grad_p(net, spec, p);
  check_finite(grad);
  double largest = 0.0;
  for (const auto& layer : grad)
    for (double v : layer) largest = std::max(largest, std::abs(v));
  if (largest == 0.0) return result;
  double step = cfg.step / largest;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    if (it > 0) {
      grad = weighted_reg_grad_p(net, spec, p);
      check_finite(grad);
    }
    bool accepted = false;
    ImportanceWeights candidate;
    double value = 0.0;
    for (std::size_t h = 0; h <= cfg.max_halvings; ++h) {
      candidate.layers.clear();
      for (std::size_t l = 0; l < p.layers.size(); ++l) {
        std::vector<double> moved(p.layers[l].size());
        for (std::size_t j = 0; j < moved.size(); ++j) moved[j] = p.layers[l][j] - step * grad[l][j];
        candidate.layers.push_back(
            project_scaled_simplex(moved, static_cast<double>(moved.size()), cfg.floor));
      }
      value = weighted_reg(net, spec, candidate);
      if (value <= current) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double decrease = current - value;
    p = std::move(candidate);
    current = value;
    result.objective.push_back(current);
    if (decrease <= cfg.tolerance * std::max(current, std::numeric_limits<double>::min())) break;
  }
  return result;
}

ImportanceWeights solve_weights(const Network& net, const RegularizerSpec& spec, const ProxConfig& cfg) {
  return solve_weights_traced(net, spec, cfg).weights;
}

Network resample(const Network& net, const ImportanceWeights& p, std::uint64_t seed, ResampleDraws* draws) {
  net.validate();
  p.validate(net, 0.0);
  std::mt19937_64 rng(seed);
  Network out = net;
  if (draws != nullptr) draws->layers.assign(net.depth(), {});

  for (std::size_t l = net.depth(); l >= 1; --l) {
    const auto& weights = p.layers[l - 1];
    const std::size_t m = weights.size();
    std::vector<double> cdf(m);
    std::partial_sum(weights.begin(), weights.end(), cdf.begin());
    std::uniform_real_distribution<double> uniform(0.0, cdf.back());
    std::vector<std::size_t> source(m);
    for (auto& s : source) {
      const double r = uniform(rng);
      s = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
      s = std::min(s, m - 1);
    }

    const Matrix& w_in = out.weights[l - 1];
    Matrix new_in(w_in.rows(), w_in.cols());
    for (std::size_t j = 0; j < m; ++j) std::ranges::copy(w_in.row(source[j]), new_in.row(j).begin());
    out.weights[l - 1] = std::move(new_in);

    Matrix& w_out = l == net.depth() ? out.top : out.weights[l];
    if (l == net.depth()) {
      Matrix new_top(w_out.rows(), w_out.cols());
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t c = 0; c < w_out.cols(); ++c) new_top(j, c) = w_out(source[j], c) / weights[source[j]];
      w_out = std::move(new_top);
    } else {
      Matrix new_next(w_out.rows(), w_out.cols());
      for (std::size_t i = 0; i < w_out.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) new_next(i, j) = w_out(i, source[j]) / weights[source[j]];
      w_out = std::move(new_next);
    }
    if (draws != nullptr) draws->layers[l - 1] = std::move(source);
  }
  return out;
}

}  // namespace nfr
