#include "permweld/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "permweld/error.hpp"

namespace permweld {

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ValidationError("matrix: value count does not match " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  }
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::transposed() const {
  BasicMatrix<T> out(cols_, rows_);
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows_; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols_; c0 += kBlock) {
      const std::size_t r1 = std::min(rows_, r0 + kBlock);
      const std::size_t c1 = std::min(cols_, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out.data_[c * rows_ + r] = data_[r * cols_ + c];
      }
    }
  }
  return out;
}

template <typename T>
BasicMatrix<T> gather_rows(const BasicMatrix<T>& m, std::span<const std::size_t> idx) {
  BasicMatrix<T> out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw ValidationError("gather_rows: index out of range");
    std::memcpy(out.row(i).data(), m.row(idx[i]).data(), m.cols() * sizeof(T));
  }
  return out;
}

template class BasicMatrix<float>;
template class BasicMatrix<double>;
template BasicMatrix<float> gather_rows(const BasicMatrix<float>&, std::span<const std::size_t>);
template BasicMatrix<double> gather_rows(const BasicMatrix<double>&, std::span<const std::size_t>);

}  // namespace permweld
