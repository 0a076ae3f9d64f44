#include "nfr/matrix.hpp"

#include <algorithm>

namespace nfr {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  constexpr std::size_t tile = 16;
  for (std::size_t r0 = 0; r0 < rows_; r0 += tile)
    for (std::size_t c0 = 0; c0 < cols_; c0 += tile)
      for (std::size_t r = r0; r < std::min(r0 + tile, rows_); ++r)
        for (std::size_t c = c0; c < std::min(c0 + tile, cols_); ++c) t(c, r) = (*this)(r, c);
  return t;
}

}  // namespace nfr
