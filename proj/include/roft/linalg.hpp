// Copyright 2026 The roft Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "roft/error.hpp"

namespace roft {

// Small dense row-major matrix for the eigen/SVD kernels and the quadratic lab.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ContractError("Matrix: value count does not match shape");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(const std::vector<double>& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  Matrix transpose() const {
    Matrix t(cols, rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data) m = std::max(m, std::abs(v));
    return m;
  }

  bool is_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ContractError("Matrix multiply: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += av * b(p, j);
    }
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ContractError("Matrix subtract: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline std::vector<double> operator*(const Matrix& a, const std::vector<double>& x) {
  if (a.cols != x.size()) throw ContractError("Matrix-vector multiply: dimension mismatch");
  std::vector<double> out(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += a(i, j) * x[j];
    out[i] = s;
  }
  return out;
}

/// Eigendecomposition A = Q diag(values) Q^T of a symmetric matrix.
/// `values` are sorted descending; `vectors` holds the matching orthonormal
/// eigenvectors as columns.
struct EigenPair {
  std::vector<double> values;
  Matrix vectors;
};

/// Cyclic Jacobi eigensolver for small symmetric matrices.
///
/// Sweeps over all off-diagonal pairs with plane rotations until the
/// off-diagonal Frobenius mass is negligible relative to the whole matrix.
/// Throws ContractError if `a` is not square or ‖A − Aᵀ‖∞ ≥ 1e-10.
inline EigenPair sym_eig(const Matrix& a) {
  if (a.rows != a.cols) throw ContractError("sym_eig: matrix is not square");
  if (!a.is_finite()) throw ContractError("sym_eig: non-finite entry");
  const std::size_t n = a.rows;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) >= 1e-10)
        throw ContractError("sym_eig: matrix is not symmetric");

  Matrix m = a;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(j, i) = m(i, j);
  Matrix v = Matrix::identity(n);

  double total = 0.0;
  for (double x : m.data) total += x * x;

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off == 0.0 || std::sqrt(off) <= 1e-17 * std::sqrt(total)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        m(p, q) = 0.0;
        m(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return m(x, x) > m(y, y); });
  EigenPair out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = m(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

/// Thin singular value decomposition A = U diag(s) Vᵀ with r = min(rows, cols)
/// columns in U and V and `s` sorted descending.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix v;
};

namespace detail {

// Appends unit vectors orthogonal to the first `filled` columns of `u` into
// columns filled..u.cols-1 (modified Gram-Schmidt over the standard basis).
inline void complete_orthonormal(Matrix& u, std::size_t filled) {
  std::size_t col = filled;
  for (std::size_t e = 0; e < u.rows && col < u.cols; ++e) {
    std::vector<double> w(u.rows, 0.0);
    w[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < col; ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < u.rows; ++k) d += u(k, j) * w[k];
        for (std::size_t k = 0; k < u.rows; ++k) w[k] -= d * u(k, j);
      }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (std::size_t k = 0; k < u.rows; ++k) u(k, col) = w[k] / norm;
    ++col;
  }
}

// SVD for rows >= cols through the eigendecomposition of AᵀA.
inline SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  Matrix gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += a(k, i) * a(k, j);
      gram(i, j) = s;
      gram(j, i) = s;
    }
  EigenPair eig = sym_eig(gram);
  SvdResult out{Matrix(m, n), std::vector<double>(n), std::move(eig.vectors)};
  for (std::size_t j = 0; j < n; ++j) out.s[j] = std::sqrt(std::max(eig.values[j], 0.0));

  const double tol = static_cast<double>(std::max(m, n)) * 1e-15 * (n > 0 ? out.s[0] : 0.0);
  std::size_t filled = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (out.s[j] <= tol) break;
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a(r, k) * out.v(k, j);
      out.u(r, j) = s / out.s[j];
    }
    ++filled;
  }
  complete_orthonormal(out.u, filled);
  return out;
}

}  // namespace detail

/// SVD computed from the eigendecomposition of the smaller Gram matrix.
/// Left vectors for (numerically) zero singular values are completed to an
/// orthonormal set so that U always has orthonormal columns.
inline SvdResult svd(const Matrix& a) {
  if (!a.is_finite()) throw ContractError("svd: non-finite entry");
  if (a.rows >= a.cols) return detail::svd_tall(a);
  SvdResult t = detail::svd_tall(a.transpose());
  return SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
}

}  // namespace roft
