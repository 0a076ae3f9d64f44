#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nfr/matrix.hpp"
#include "nfr/network.hpp"

namespace nfr {

/// A wide network standing in for the continuous one: each hidden layer's
/// feature distribution is uniform over the master's units, the connection
/// function w(z^(l), z^(l-1)) is the master weight between the two units and
/// u(z^(L)) is the master's top row.
struct MasterSurrogate {
  Network net;
};

/// Unit indices drawn per hidden layer: layers[l - 1][i] is the master unit
/// behind slot i of layer l.
struct SampledUnits {
  std::vector<std::vector<std::size_t>> layers;
};

/// Discrete network whose hidden units are drawn i.i.d. uniformly (with
/// replacement) from the master, widths m^(1..L).
Network subsample(const MasterSurrogate& master, std::span<const std::size_t> widths, std::uint64_t seed,
                  SampledUnits* units = nullptr);

struct StudyRow {
  std::size_t width = 0;
  std::size_t trials = 0;
  double mean_l1 = 0.0;   // E ||f_hat - f||, averaged over the input batch
  double mean_mse = 0.0;  // E ||f_hat - f||^2
  std::optional<double> se_l1;
  std::optional<double> se_mse;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  /// Least-squares slope of log mean_mse against log width; absent with fewer
  /// than two widths or a zero error.
  std::optional<double> slope;
};

/// Equal width m in every hidden layer for each entry of `widths`; trial t
/// of width index w uses seed derive_seed(seed, w, t).
StudyResult consistency_study(const MasterSurrogate& master, std::span<const std::size_t> widths,
                              std::size_t trials, const Matrix& inputs, std::uint64_t seed);
StudyResult variance_study(const MasterSurrogate& master, std::span<const std::size_t> widths,
                           std::size_t trials, const Matrix& inputs, std::uint64_t seed);

/// Leading-order constants of E||f_hat - f||^2 evaluated on the master:
///   C_l   = E_x E_{z^(l)} || E_{z^(l+1)} s(z^(l+1)) D^(l+1) [f^(l)(z^(l)) w(z^(l+1), z^(l)) - g^(l+1)(z^(l+1))] ||^2
///   C_top = E_x E_{z^(L)} || f^(L)(z^(L)) u(z^(L)) - f ||^2
/// with D^(L) = u and D^(l) = E_{z^(l+1)} [w h'(g^(l+1)) D^(l+1)]. The factor
/// s is h'(g^(l+1)) when `chain_activation_slope` is set and 1 otherwise.
struct LeadingTerms {
  std::vector<double> layer;  // C_1 .. C_{L-1}
  double top = 0.0;

  double total() const;
  /// sum_l C_l / m^(l) + C_top / m^(L).
  double predicted_mse(std::span<const std::size_t> widths) const;
};

LeadingTerms leading_terms(const MasterSurrogate& master, const Matrix& inputs, bool chain_activation_slope = true);

}  // namespace nfr
