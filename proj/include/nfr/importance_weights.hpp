#pragma once

#include <cstddef>
#include <vector>

#include "nfr/network.hpp"

namespace nfr {

inline constexpr double kDefaultWeightFloor = 1e-8;

/// Per-neuron importance weights p^(l) for the hidden layers l = 1..L.
/// A valid set has every entry >= floor and sum_j p^(l)_j = m^(l), so the
/// all-ones assignment is the neutral element. The input layer always
/// carries weight 1 and is not stored.
struct ImportanceWeights {
  std::vector<std::vector<double>> layers;  // layers[l - 1] has length m^(l)

  static ImportanceWeights uniform(const Network& net);

  /// Shape and strict positivity only; enough for the reweighted formulas.
  void check_positive(const Network& net) const;
  /// Full invariant: shape, floor and per-layer sums (relative tolerance 1e-9).
  void validate(const Network& net, double floor = kDefaultWeightFloor) const;

  bool operator==(const ImportanceWeights&) const = default;
};

}  // namespace nfr
