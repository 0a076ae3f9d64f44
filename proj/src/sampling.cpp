#include "nfr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "nfr/error.hpp"
#include "nfr/seeding.hpp"

namespace nfr {

Network subsample(const MasterSurrogate& master, std::span<const std::size_t> widths, std::uint64_t seed,
                  SampledUnits* units) {
  const Network& src = master.net;
  src.validate();
  if (widths.size() != src.depth())
    throw DimensionError("expected " + std::to_string(src.depth()) + " widths, got " + std::to_string(widths.size()));
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> idx(src.depth());
  for (std::size_t l = 1; l <= src.depth(); ++l) {
    if (widths[l - 1] == 0) throw ValueError("subsample widths must be positive");
    std::uniform_int_distribution<std::size_t> pick(0, src.width(l) - 1);
    idx[l - 1].resize(widths[l - 1]);
    for (auto& i : idx[l - 1]) i = pick(rng);
  }

  Network out;
  out.activation = src.activation;
  out.seed = seed;
  for (std::size_t l = 1; l <= src.depth(); ++l) {
    const Matrix& w = src.weights[l - 1];
    const auto& rows = idx[l - 1];
    Matrix sub(rows.size(), l == 1 ? w.cols() : idx[l - 2].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (l == 1) {
        std::ranges::copy(w.row(rows[i]), sub.row(i).begin());
      } else {
        const auto& cols = idx[l - 2];
        for (std::size_t j = 0; j < cols.size(); ++j) sub(i, j) = w(rows[i], cols[j]);
      }
    }
    out.weights.push_back(std::move(sub));
  }
  const auto& last = idx.back();
  out.top = Matrix(last.size(), src.output_dim());
  for (std::size_t j = 0; j < last.size(); ++j) std::ranges::copy(src.top.row(last[j]), out.top.row(j).begin());
  if (units != nullptr) units->layers = std::move(idx);
  return out;
}

namespace {

struct TrialError {
  double l1 = 0.0;
  double mse = 0.0;
};

StudyResult run_study(const MasterSurrogate& master, std::span<const std::size_t> widths, std::size_t trials,
                      const Matrix& inputs, std::uint64_t seed) {
  if (trials == 0) throw ValueError("a study needs at least one trial");
  if (inputs.rows() == 0) throw ValueError("a study needs a non-empty input batch");
  const Matrix reference = forward_batch(master.net, inputs).output;
  const std::size_t batch = inputs.rows(), k_out = reference.cols();

  StudyResult result;
  for (std::size_t w = 0; w < widths.size(); ++w) {
    std::vector<std::size_t> layer_widths(master.net.depth(), widths[w]);
    std::vector<TrialError> errors(trials);
    parallel_for(trials, [&](std::size_t t) {
      const Network net = subsample(master, layer_widths, derive_seed(seed, w, t));
      const Matrix out = forward_batch(net, inputs).output;
      TrialError e;
      for (std::size_t b = 0; b < batch; ++b) {
        double sq = 0.0;
        for (std::size_t c = 0; c < k_out; ++c) {
          const double d = out(b, c) - reference(b, c);
          sq += d * d;
        }
        e.l1 += std::sqrt(sq);
        e.mse += sq;
      }
      e.l1 /= static_cast<double>(batch);
      e.mse /= static_cast<double>(batch);
      errors[t] = e;
    });

    StudyRow row;
    row.width = widths[w];
    row.trials = trials;
    for (const auto& e : errors) {
      row.mean_l1 += e.l1;
      row.mean_mse += e.mse;
    }
    const double n = static_cast<double>(trials);
    row.mean_l1 /= n;
    row.mean_mse /= n;
    if (trials >= 2) {
      double v1 = 0.0, v2 = 0.0;
      for (const auto& e : errors) {
        v1 += (e.l1 - row.mean_l1) * (e.l1 - row.mean_l1);
        v2 += (e.mse - row.mean_mse) * (e.mse - row.mean_mse);
      }
      row.se_l1 = std::sqrt(v1 / (n - 1.0) / n);
      row.se_mse = std::sqrt(v2 / (n - 1.0) / n);
    }
    result.rows.push_back(row);
  }

  bool fit = result.rows.size() >= 2;
  for (const auto& r : result.rows) fit = fit && r.mean_mse > 0.0;
  if (fit) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(result.rows.size());
    for (const auto& r : result.rows) {
      const double x = std::log(static_cast<double>(r.width)), y = std::log(r.mean_mse);
      sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    if (denom > 0.0) result.slope = (n * sxy - sx * sy) / denom;
  }
  return result;
}

}  // namespace

StudyResult consistency_study(const MasterSurrogate& master, std::span<const std::size_t> widths,
                              std::size_t trials, const Matrix& inputs, std::uint64_t seed) {
  return run_study(master, widths, trials, inputs, seed);
}

StudyResult variance_study(const MasterSurrogate& master, std::span<const std::size_t> widths,
                           std::size_t trials, const Matrix& inputs, std::uint64_t seed) {
  return run_study(master, widths, trials, inputs, seed);
}

double LeadingTerms::total() const {
  double t = top;
  for (double c : layer) t += c;
  return t;
}

double LeadingTerms::predicted_mse(std::span<const std::size_t> widths) const {
  if (widths.size() != layer.size() + 1) throw DimensionError("one width per hidden layer expected");
  double t = top / static_cast<double>(widths.back());
  for (std::size_t l = 0; l < layer.size(); ++l) t += layer[l] / static_cast<double>(widths[l]);
  return t;
}

LeadingTerms leading_terms(const MasterSurrogate& master, const Matrix& inputs, bool chain_activation_slope) {
  const Network& net = master.net;
  net.validate();
  if (inputs.rows() == 0) throw ValueError("leading terms need a non-empty input batch");
  const std::size_t depth = net.depth(), batch = inputs.rows(), k_out = net.output_dim();
  const ForwardTrace trace = forward_batch(net, inputs);

  LeadingTerms terms;
  terms.layer.assign(depth - 1, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    // d[i * K + c]: derivative of f with respect to unit i's feature value
    std::vector<double> d(net.top.values().begin(), net.top.values().end());
    for (std::size_t l = depth - 1; l >= 1; --l) {
      // layer l + 1 couples units of layer l (columns) to units of layer l + 1 (rows)
      const Matrix& w = net.weights[l];
      const std::size_t m_up = w.rows(), m_low = w.cols();
      const double inv_up = static_cast<double>(m_up);
      std::vector<double> slope(m_up), chained(m_up * k_out);
      for (std::size_t i = 0; i < m_up; ++i) {
        slope[i] = activate_slope(net.activation, trace.pre[l](b, i), trace.act[l + 1](b, i));
        const double s = chain_activation_slope ? slope[i] : 1.0;
        for (std::size_t c = 0; c < k_out; ++c) chained[i * k_out + c] = s * d[i * k_out + c];
      }
      // e_k = E_i [s_i D_i w_ik], q = E_i [s_i D_i g_i]
      std::vector<double> e(m_low * k_out, 0.0), q(k_out, 0.0), next(m_low * k_out, 0.0);
      for (std::size_t i = 0; i < m_up; ++i) {
        const double gi = trace.pre[l](b, i);
        for (std::size_t c = 0; c < k_out; ++c) q[c] += chained[i * k_out + c] * gi;
        auto row = w.row(i);
        for (std::size_t k = 0; k < m_low; ++k)
          for (std::size_t c = 0; c < k_out; ++c) {
            e[k * k_out + c] += chained[i * k_out + c] * row[k];
            next[k * k_out + c] += row[k] * slope[i] * d[i * k_out + c];
          }
      }
      double acc = 0.0;
      for (std::size_t k = 0; k < m_low; ++k) {
        const double fk = trace.act[l](b, k);
        for (std::size_t c = 0; c < k_out; ++c) {
          const double t = (fk * e[k * k_out + c] - q[c]) / inv_up;
          acc += t * t;
        }
      }
      terms.layer[l - 1] += acc / static_cast<double>(m_low);
      for (double& v : next) v /= inv_up;
      d = std::move(next);
    }
    const std::size_t m = net.top.rows();
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < k_out; ++c) {
        const double t = trace.act[depth](b, j) * net.top(j, c) - trace.output(b, c);
        acc += t * t;
      }
    terms.top += acc / static_cast<double>(m);
  }
  for (double& c : terms.layer) c /= static_cast<double>(batch);
  terms.top /= static_cast<double>(batch);
  return terms;
}

}  // namespace nfr
