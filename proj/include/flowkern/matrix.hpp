// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flowkern/bf16.hpp"
#include "flowkern/errors.hpp"

namespace flowkern {

/// Read-only view over a dense row-major block of rows.
template <typename T>
class MatrixView {
 public:
  MatrixView() = default;
  MatrixView(std::span<const T> data, std::size_t rows, std::size_t cols)
      : data_(data), rows_(rows), cols_(cols) {
    if (data.size() != rows * cols) {
      throw ShapeError("matrix view: span size does not match dims");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  std::span<const T> row(std::size_t r) const {
    return data_.subspan(r * cols_, cols_);
  }
  std::span<const T> data() const { return data_; }

  MatrixView row_range(std::size_t begin, std::size_t count) const {
    return MatrixView(data_.subspan(begin * cols_, count * cols_), count,
                      cols_);
  }

 private:
  std::span<const T> data_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

/// Dense row-major matrix with value semantics.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
      throw ShapeError("matrix: data size does not match dims");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) {
    return std::span<T>(data_).subspan(r * cols_, cols_);
  }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols_, cols_);
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  MatrixView<T> view() const { return MatrixView<T>(data_, rows_, cols_); }
  operator MatrixView<T>() const { return view(); }
  MatrixView<T> row_range(std::size_t begin, std::size_t count) const {
    return view().row_range(begin, count);
  }

  /// Appends one row; on an empty 0×0 matrix the row fixes the column count.
  void append_row(std::span<const T> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) {
      throw ShapeError("append_row: width mismatch");
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixBf16 = Matrix<Bf16>;
using ViewF = MatrixView<float>;

inline MatrixF to_float(const MatrixBf16& m) {
  MatrixF out(m.rows(), m.cols());
  std::transform(m.data().begin(), m.data().end(), out.data().begin(),
                 [](Bf16 b) { return b.to_float(); });
  return out;
}

inline MatrixBf16 to_bf16(const MatrixF& m) {
  MatrixBf16 out(m.rows(), m.cols());
  std::transform(m.data().begin(), m.data().end(), out.data().begin(),
                 [](float f) { return bf16_round(f); });
  return out;
}

/// Rounds every element to the nearest bf16 value in place.
inline void round_to_bf16(MatrixF& m) {
  for (float& v : m.data()) v = round_bf16(v);
}

inline MatrixF transpose(const MatrixF& m) {
  MatrixF out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

inline float max_abs(std::span<const float> v) {
  float best = 0.0f;
  for (float x : v) best = std::max(best, std::fabs(x));
  return best;
}

/// max |actual - expected| / max |expected|: error relative to the reference's
/// dynamic range. Falls back to absolute error for an all-zero reference.
inline double max_rel_error(std::span<const float> actual,
                            std::span<const float> expected) {
  if (actual.size() != expected.size()) {
    throw ShapeError("max_rel_error: size mismatch");
  }
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<double>(actual[i]) -
                                    static_cast<double>(expected[i])));
    scale = std::max(scale, std::fabs(static_cast<double>(expected[i])));
  }
  if (std::isnan(diff)) return diff;
  return scale > 0.0 ? diff / scale : diff;
}

inline double max_rel_error(const MatrixF& actual, const MatrixF& expected) {
  if (actual.rows() != expected.rows() || actual.cols() != expected.cols()) {
    throw ShapeError("max_rel_error: shape mismatch");
  }
  return max_rel_error(actual.data(), expected.data());
}

}  // namespace flowkern
