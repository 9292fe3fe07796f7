#include "ultr/nn/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ultr/common.hpp"

namespace ultr::nn {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows_ * cols_) {
    throw ValidationError("matrix: " + std::to_string(data_.size()) + " values for shape " +
                          std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (!same_shape(o)) throw ValidationError("matrix +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* where) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ValidationError(std::string(where) + ": expected " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
  }
}

}  // namespace ultr::nn
