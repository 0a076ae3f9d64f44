#include "nfr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nfr/error.hpp"

namespace nfr {

VarianceTerms approx_variance_terms(const Network& net, const Matrix& inputs) {
  net.validate();
  if (inputs.rows() == 0) throw ValueError("variance estimate needs a non-empty batch");
  const std::size_t depth = net.depth(), batch = inputs.rows(), k_out = net.output_dim();
  const ForwardTrace trace = forward_batch(net, inputs);

  VarianceTerms terms;
  terms.layer.assign(depth > 1 ? depth - 1 : 0, 0.0);

  // squared norms are summed over output components, one sensitivity sweep each
  for (std::size_t c = 0; c < k_out; ++c) {
    const auto sens = sensitivities(net, trace, c);
    for (std::size_t l = 2; l <= depth; ++l) {
      const Matrix& w = net.weights[l - 1];
      const Matrix& a = sens[l - 1];
      const Matrix& g = trace.pre[l - 1];
      const Matrix& f = trace.act[l - 1];
      const std::size_t m_out = w.rows(), m_in = w.cols();
      const double norm = static_cast<double>(m_in) * static_cast<double>(m_in);
      std::vector<double> aw(m_in);
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        std::fill(aw.begin(), aw.end(), 0.0);
        double ag = 0.0;
        for (std::size_t i = 0; i < m_out; ++i) {
          const double ai = a(b, i);
          ag += ai * g(b, i);
          auto row = w.row(i);
          for (std::size_t j = 0; j < m_in; ++j) aw[j] += ai * row[j];
        }
        double s = 0.0;
        for (std::size_t j = 0; j < m_in; ++j) {
          const double t = f(b, j) * aw[j] - ag;
          s += t * t;
        }
        acc += s / norm;
      }
      terms.layer[l - 2] += acc / static_cast<double>(batch);
    }
  }

  const Matrix& f = trace.act[depth];
  const std::size_t m = net.top.rows();
  const double norm = static_cast<double>(m) * static_cast<double>(m);
  double acc = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < k_out; ++c) {
        const double t = net.top(j, c) * f(b, j) - trace.output(b, c);
        s += t * t;
      }
    acc += s / norm;
  }
  terms.top = acc / static_cast<double>(batch);
  terms.total = terms.top;
  for (double t : terms.layer) terms.total += t;
  return terms;
}

double approx_variance(const Network& net, const Matrix& inputs) { return approx_variance_terms(net, inputs).total; }

std::vector<KKTPair> kkt_pairs(const Network& net, const RegularizerSpec& spec, std::size_t layer) {
  net.validate();
  spec.validate(net.depth());
  if (layer < 1 || layer > net.depth())
    throw DimensionError("layer " + std::to_string(layer) + " is outside [1, " + std::to_string(net.depth()) + "]");
  if (spec.o1 != 1.0 || spec.o2 != 2.0 || spec.o3 != 2.0)
    throw ValueError("optimality estimates are defined for the L12 regularizer only");

  const Matrix& w = net.weights[layer - 1];
  const std::size_t m_out = w.rows(), m_in = w.cols();
  std::vector<double> col(m_in, 0.0);
  for (std::size_t j = 0; j < m_out; ++j)
    for (std::size_t k = 0; k < m_in; ++k) col[k] += std::abs(w(j, k));

  std::vector<KKTPair> pairs(m_out);
  const double lam = spec.lambda[layer - 1] / (static_cast<double>(m_out) * static_cast<double>(m_in));
  for (std::size_t j = 0; j < m_out; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < m_in; ++k) s += col[k] * std::abs(w(j, k));
    pairs[j].layer = layer;
    pairs[j].neuron = j;
    pairs[j].u_val = lam * s;
  }
  if (layer < net.depth()) {
    const Matrix& next = net.weights[layer];
    const double lam_next = spec.lambda[layer];
    for (std::size_t j = 0; j < m_out; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < next.rows(); ++i) s += std::abs(next(i, j));
      s /= static_cast<double>(next.rows());
      pairs[j].v_val = lam_next * s * s;
    }
  } else {
    for (std::size_t j = 0; j < m_out; ++j) {
      double s = 0.0;
      for (double v : net.top.row(j)) s += v * v;
      pairs[j].v_val = spec.lambda_u * s;
    }
  }
  return pairs;
}

double pearson(std::span<const KKTPair> pairs) {
  if (pairs.size() < 2) throw ValueError("degenerate scatter: need at least two pairs");
  const double n = static_cast<double>(pairs.size());
  double mu = 0.0, mv = 0.0;
  for (const auto& p : pairs) {
    mu += p.u_val;
    mv += p.v_val;
  }
  mu /= n;
  mv /= n;
  double suu = 0.0, svv = 0.0, suv = 0.0;
  for (const auto& p : pairs) {
    const double du = p.u_val - mu, dv = p.v_val - mv;
    suu += du * du;
    svv += dv * dv;
    suv += du * dv;
  }
  if (suu == 0.0 || svv == 0.0) throw ValueError("degenerate scatter: zero variance");
  return std::clamp(suv / std::sqrt(suu * svv), -1.0, 1.0);
}

std::vector<double> sparsity_cdf(std::span<const Matrix* const> ws, std::span<const double> thresholds) {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= 0.0)) throw ValueError("sparsity thresholds must be non-negative");
    if (i > 0 && thresholds[i] < thresholds[i - 1]) throw ValueError("sparsity thresholds must be sorted");
  }
  std::vector<double> mags;
  for (const Matrix* w : ws)
    for (double v : w->values()) mags.push_back(std::abs(v));
  std::sort(mags.begin(), mags.end());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto count = std::upper_bound(mags.begin(), mags.end(), t) - mags.begin();
    out.push_back(mags.empty() ? 1.0 : static_cast<double>(count) / static_cast<double>(mags.size()));
  }
  return out;
}

std::vector<double> sparsity_cdf(const Matrix& w, std::span<const double> thresholds) {
  const Matrix* one[] = {&w};
  return sparsity_cdf(std::span<const Matrix* const>(one), thresholds);
}

Matrix feature_functions(const Network& net, std::size_t layer, const Matrix& grid,
                         std::span<const std::size_t> neurons) {
  net.validate();
  if (layer < 1 || layer > net.depth())
    throw DimensionError("layer " + std::to_string(layer) + " is outside [1, " + std::to_string(net.depth()) + "]");
  for (auto j : neurons)
    if (j >= net.width(layer))
      throw DimensionError("neuron " + std::to_string(j) + " is outside layer " + std::to_string(layer));
  const ForwardTrace trace = forward_batch(net, grid);
  const Matrix& f = trace.act[layer];
  Matrix out(grid.rows(), neurons.size());
  for (std::size_t r = 0; r < grid.rows(); ++r)
    for (std::size_t c = 0; c < neurons.size(); ++c) out(r, c) = f(r, neurons[c]);
  return out;
}

}  // namespace nfr
