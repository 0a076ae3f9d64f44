#include "nfr/data.hpp"

#include <cmath>
#include <random>

#include "nfr/csv.hpp"
#include "nfr/error.hpp"

namespace nfr {

double synthetic_target(double x) {
  const double c = std::cos(x);
  const double inner = 2.0 * c * c - 1.0;
  return 2.0 * inner * inner - 1.0;
}

Dataset gen_data(std::size_t n, double lo, double hi, std::uint64_t seed) {
  if (!(lo < hi)) throw ValueError("data range needs lo < hi");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(lo, hi);
  Dataset d;
  d.x.resize(n);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.x[i] = uniform(rng);
    d.y[i] = synthetic_target(d.x[i]);
  }
  return d;
}

Matrix embed_inputs(std::span<const double> x, std::size_t input_dim) {
  if (input_dim != 1 && input_dim != 2)
    throw DimensionError("scalar inputs embed into 1 or 2 dimensions, network expects " + std::to_string(input_dim));
  Matrix m(x.size(), input_dim);
  for (std::size_t i = 0; i < x.size(); ++i) {
    m(i, 0) = x[i];
    if (input_dim == 2) m(i, 1) = 1.0;
  }
  return m;
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  CsvWriter out(path, {"x", "y"});
  for (std::size_t i = 0; i < data.size(); ++i) out.row({data.x[i], data.y[i]});
}

Dataset read_dataset_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 2 || t.header[0] != "x" || t.header[1] != "y")
    throw FormatError("'" + path + "' must have the header x,y");
  Dataset d;
  for (const auto& r : t.rows) {
    d.x.push_back(r[0]);
    d.y.push_back(r[1]);
  }
  return d;
}

}  // namespace nfr
