#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nfr/importance_weights.hpp"
#include "nfr/matrix.hpp"
#include "nfr/network.hpp"

namespace nfr {

/// The l_{a,b} family: r1(w) = |w|^o1, r2(c) = c^o2, r_u(u) = ||u||^o3.
struct RegularizerSpec {
  double o1 = 1.0;
  double o2 = 2.0;
  double o3 = 2.0;
  std::vector<double> lambda;  // lambda[l - 1] weighs layer l
  double lambda_u = 0.0;

  /// "L12" = (1, 2, 2), "L21" = (2, 1, 2), "L_half_4" = (0.5, 4, 2); every
  /// penalty set to `penalty`.
  static RegularizerSpec preset(std::string_view name, std::size_t depth, double penalty);

  void validate(std::size_t depth) const;
  RegularizerSpec scaled(double factor) const;
};

/// (1/m_in) sum_k ( (1/m_out) sum_j |w_{j,k}|^o1 )^o2 with rows indexing outputs.
double layer_reg(const Matrix& w, double o1, double o2);
/// (1/m) sum_j ||u_j||^o3.
double top_reg(const Matrix& u, double o3);
double total_reg(const Network& net, const RegularizerSpec& spec);

/// Analytic subgradient of total_reg; the subgradient of |w|^o1 at 0 is 0.
Gradients reg_grad(const Network& net, const RegularizerSpec& spec);
/// acc += scale * reg_grad(net, spec), without allocating.
void add_reg_grad(const Network& net, const RegularizerSpec& spec, double scale, Gradients& acc);

/// The regularizer after the importance-weighting transform w -> w / p_in,
/// u -> u / p_L, with averages over units taken under p instead of uniform.
double weighted_reg(const Network& net, const RegularizerSpec& spec, const ImportanceWeights& p);

/// d weighted_reg / d p^(l)_j for every hidden layer.
std::vector<std::vector<double>> weighted_reg_grad_p(const Network& net, const RegularizerSpec& spec,
                                                     const ImportanceWeights& p);

}  // namespace nfr
