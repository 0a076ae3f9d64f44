#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nfr/matrix.hpp"
#include "nfr/network.hpp"
#include "nfr/regularizers.hpp"

namespace nfr {

/// Batch-averaged terms of the discretization variance estimate V(w, u).
struct VarianceTerms {
  /// layer[l - 2] is the term of layer l = 2..L.
  std::vector<double> layer;
  double top = 0.0;
  double total = 0.0;
};

/// V(w, u) = E_x [ sum_{l=2}^{L} 1/(m^(l-1))^2 sum_j || sum_i a^(l)_i (f^(l-1)_j W^(l)_{ij} - g^(l)_i) ||^2
///               + 1/(m^(L))^2 sum_j || u_j f^(L)_j - out ||^2 ]
/// where a^(l)_i = d out / d g^(l)_i. Rows of `inputs` are the samples.
VarianceTerms approx_variance_terms(const Network& net, const Matrix& inputs);
double approx_variance(const Network& net, const Matrix& inputs);

struct KKTPair {
  std::size_t layer = 0;
  std::size_t neuron = 0;
  double u_val = 0.0;  // incoming-side balance
  double v_val = 0.0;  // outgoing-side balance
};

/// Per-neuron optimality estimates for layer l under the l_{1,2} regularizer:
///   u_j = lambda^(l) / (m^(l) m^(l-1)) sum_k (sum_{j'} |W^(l)_{j'k}|) |W^(l)_{jk}|
///   v_j = lambda^(l+1) ((1/m^(l+1)) sum_i |W^(l+1)_{ij}|)^2   (l < L)
///   v_j = lambda_u ||u_j||^2                                 (l = L)
std::vector<KKTPair> kkt_pairs(const Network& net, const RegularizerSpec& spec, std::size_t layer);

/// Pearson correlation of (u_val, v_val).
double pearson(std::span<const KKTPair> pairs);

/// Fraction of entries with |w| <= t for every threshold t (sorted, non-negative).
std::vector<double> sparsity_cdf(const Matrix& w, std::span<const double> thresholds);
/// Same, pooled over the entries of several matrices.
std::vector<double> sparsity_cdf(std::span<const Matrix* const> ws, std::span<const double> thresholds);

/// f^(l)_j on every grid input: rows follow `grid` rows, columns follow `neurons`.
Matrix feature_functions(const Network& net, std::size_t layer, const Matrix& grid,
                         std::span<const std::size_t> neurons);

}  // namespace nfr
