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

#include "dphrase/common.h"

namespace dphrase {

namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(std::string(what) + ": size mismatch (" + std::to_string(a) +
                " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dot(std::span<const float> a, std::span<const double> b) {
  check_same(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * b[i];
  }
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void axpy(double alpha, std::span<const float> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] += alpha * static_cast<double>(x[i]);
  }
}

void matvec(const MatrixD& m, std::span<const double> x,
            std::span<double> out) {
  check_same(m.cols(), x.size(), "matvec");
  check_same(m.rows(), out.size(), "matvec");
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
}

void matvec_transposed_add(const MatrixD& m, std::span<const double> x,
                           std::span<double> out) {
  check_same(m.rows(), x.size(), "matvec_transposed_add");
  check_same(m.cols(), out.size(), "matvec_transposed_add");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (x[r] != 0.0) axpy(x[r], m.row(r), out);
  }
}

void outer_add(double alpha, std::span<const double> a,
               std::span<const double> b, MatrixD& m) {
  check_same(m.rows(), a.size(), "outer_add");
  check_same(m.cols(), b.size(), "outer_add");
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r] != 0.0) axpy(alpha * a[r], b, m.row(r));
  }
}

}  // namespace dphrase
