// Copyright 2026-present the dphrase authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dphrase {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (JSONL lines, config files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Index or position outside the valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Binary file could not be read or written, or is corrupt.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  /// Appends one row; `values.size()` must equal cols().
  void append_row(std::span<const T> values) {
    if (values.size() != cols_) {
      throw Error("append_row: expected " + std::to_string(cols_) +
                  " columns, got " + std::to_string(values.size()));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), T{}); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;

double dot(std::span<const double> a, std::span<const double> b);
/// Mixed precision inner product, accumulated in double in index order.
double dot(std::span<const float> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void axpy(double alpha, std::span<const float> x, std::span<double> y);

/// out = M * x
void matvec(const MatrixD& m, std::span<const double> x, std::span<double> out);
/// out += M^T * x
void matvec_transposed_add(const MatrixD& m, std::span<const double> x,
                           std::span<double> out);
/// M += alpha * a b^T
void outer_add(double alpha, std::span<const double> a,
               std::span<const double> b, MatrixD& m);

}  // namespace dphrase
