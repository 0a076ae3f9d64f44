#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nfr/matrix.hpp"

namespace nfr {

/// The 1-D regression target 2 (2 cos^2 x - 1)^2 - 1 (= cos 4x).
double synthetic_target(double x);

/// Scalar inputs with their targets.
struct Dataset {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const { return x.size(); }
};

/// n points with x ~ Uniform[lo, hi] and y = synthetic_target(x).
Dataset gen_data(std::size_t n, double lo, double hi, std::uint64_t seed);

/// Network inputs for scalar x: (x) for input_dim 1 and (x, 1) for input_dim 2.
/// The constant coordinate lets a bias-free network represent even functions.
Matrix embed_inputs(std::span<const double> x, std::size_t input_dim);

void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path);

}  // namespace nfr
