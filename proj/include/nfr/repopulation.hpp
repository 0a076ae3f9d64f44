#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nfr/importance_weights.hpp"
#include "nfr/network.hpp"
#include "nfr/regularizers.hpp"

namespace nfr {

/// Network output evaluated through the importance-weighted form: every
/// connection weight is divided by the weight of its input-side unit and
/// every activation multiplied by its own weight. Equal to forward() up to
/// rounding for any positive p.
std::vector<double> weighted_forward(const Network& net, const ImportanceWeights& p, std::span<const double> x);

/// Euclidean projection onto {q : q_j >= floor, sum_j q_j = total}.
std::vector<double> project_scaled_simplex(std::span<const double> v, double total, double floor);

struct ProxConfig {
  /// First trial step, as the largest per-coordinate move of the first
  /// iteration; the actual step is step / max|grad| at p = 1.
  double step = 0.5;
  std::size_t iterations = 500;
  /// Stop once an accepted iteration lowers the objective by less than this
  /// (relative to the current objective).
  double tolerance = 1e-10;
  double floor = kDefaultWeightFloor;
  /// Halvings allowed within one iteration before giving up.
  std::size_t max_halvings = 30;

  void validate() const;
};

struct ProxResult {
  ImportanceWeights weights;
  std::vector<double> objective;  // objective[0] at p = 1, then one entry per accepted iteration
};

/// Projected gradient descent on weighted_reg over the scaled simplex of
/// each hidden layer, starting from p = 1. Steps that raise the objective are
/// halved, so the recorded objective never increases.
ProxResult solve_weights_traced(const Network& net, const RegularizerSpec& spec, const ProxConfig& cfg);
ImportanceWeights solve_weights(const Network& net, const RegularizerSpec& spec, const ProxConfig& cfg);

/// Indices drawn per hidden layer by the last resample() call (for inspection).
struct ResampleDraws {
  std::vector<std::vector<std::size_t>> layers;  // layers[l - 1][slot] = source unit
};

/// Feature repopulation: for l = L down to 1, every slot j of layer l draws a
/// source unit j' with probability p^(l)_{j'} / m^(l), copies its incoming
/// row verbatim and takes its outgoing weights divided by p^(l)_{j'}.
Network resample(const Network& net, const ImportanceWeights& p, std::uint64_t seed,
                 ResampleDraws* draws = nullptr);

}  // namespace nfr
