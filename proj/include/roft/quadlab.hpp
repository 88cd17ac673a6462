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
#include <cstdint>
#include <limits>
#include <vector>

#include "json.hpp"
#include "roft/error.hpp"
#include "roft/linalg.hpp"
#include "roft/rng.hpp"

namespace roft {

/// Quadratic surrogate L(θ) = base + ½(θ − θ*)ᵀH(θ − θ*) regularized toward
/// θ_pre with strength δ.
struct QuadProblem {
  Matrix hessian;
  std::vector<double> theta_star;
  std::vector<double> theta_pre;
  double delta = 0.0;
  double base = 0.0;

  void validate() const {
    const std::size_t n = hessian.rows;
    if (hessian.cols != n || theta_star.size() != n || theta_pre.size() != n)
      throw ContractError("QuadProblem: dimension mismatch");
  }

  double loss(const std::vector<double>& theta) const {
    const std::size_t n = theta.size();
    std::vector<double> d(n), r(n);
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = theta[i] - theta_star[i];
      r[i] = theta[i] - theta_pre[i];
    }
    const auto hd = hessian * d;
    double q = 0.0, reg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      q += d[i] * hd[i];
      reg += r[i] * r[i];
    }
    return base + 0.5 * q + 0.5 * delta * reg;
  }
};

/// Minimizer via the eigenbasis of H = QΛQᵀ:
///   Qᵀθ̃ = (Λ + δI)⁻¹ΛQᵀθ* + δ(Λ + δI)⁻¹Qᵀθ_pre.
/// Throws DomainError if some Λᵢ + δ <= 0.
inline std::vector<double> closed_form(const QuadProblem& p) {
  p.validate();
  const EigenPair eig = sym_eig(p.hessian);
  const Matrix qt = eig.vectors.transpose();
  const auto star = qt * p.theta_star;
  const auto pre = qt * p.theta_pre;
  std::vector<double> z(star.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double denom = eig.values[i] + p.delta;
    if (!(denom > 0.0)) throw DomainError("closed_form: eigenvalue + delta is not positive");
    z[i] = (eig.values[i] * star[i] + p.delta * pre[i]) / denom;
  }
  return eig.vectors * z;
}

/// Gradient descent on the regularized quadratic with step 1/(λ_max + δ),
/// until ‖∇‖₂ < 1e-10. For very large δ that threshold sits below the rounding
/// floor of the gradient, so it is raised to 64·ε·(λ_max + δ)·scale, where scale
/// bounds the magnitude of θ*, θ_pre. Throws ConvergenceError after `max_iter` steps.
inline std::vector<double> numeric(const QuadProblem& p, std::size_t max_iter = 1'000'000) {
  p.validate();
  const EigenPair eig = sym_eig(p.hessian);
  const double lmax = std::max(eig.values.empty() ? 0.0 : eig.values.front(), 0.0);
  if (!(lmax + p.delta > 0.0)) throw DomainError("numeric: lambda_max + delta is not positive");
  const double step = 1.0 / (lmax + p.delta);
  const std::size_t n = p.theta_star.size();
  double scale = 1.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max({scale, std::abs(p.theta_star[i]), std::abs(p.theta_pre[i])});
  const double tol = std::max(1e-10, 64.0 * std::numeric_limits<double>::epsilon() * (lmax + p.delta) * scale);
  std::vector<double> theta = p.theta_pre;
  std::vector<double> d(n), g(n);
  for (std::size_t it = 0; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) d[i] = theta[i] - p.theta_star[i];
    const auto hd = p.hessian * d;
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = hd[i] + p.delta * (theta[i] - p.theta_pre[i]);
      norm += g[i] * g[i];
    }
    if (std::sqrt(norm) < tol) return theta;
    if (it == max_iter) break;
    for (std::size_t i = 0; i < n; ++i) theta[i] -= step * g[i];
  }
  throw ConvergenceError("numeric: gradient norm still >= " + std::to_string(tol) + " after " + std::to_string(max_iter) + " iterations");
}

/// Orthonormal Q from modified Gram-Schmidt QR of a seeded Gaussian matrix.
inline Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q(n, n);
  for (double& x : q.data) x = rng.normal();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += q(i, k) * q(i, j);
      for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
  }
  return q;
}

/// Random instance: H = QΛQᵀ with Λ log-uniform in [1e-2, 1e1], Gaussian θ*, θ_pre.
inline QuadProblem random_quad_problem(std::size_t dim, std::uint64_t seed, double delta) {
  Rng rng(hash_combine(seed, 0x9ad));
  const Matrix q = random_orthogonal(dim, rng);
  std::vector<double> lambda(dim);
  for (double& l : lambda) l = std::pow(10.0, rng.uniform(-2.0, 1.0));
  Matrix h = q * Matrix::diagonal(lambda) * q.transpose();
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j) {
      const double s = 0.5 * (h(i, j) + h(j, i));
      h(i, j) = s;
      h(j, i) = s;
    }
  QuadProblem p;
  p.hessian = std::move(h);
  p.theta_star.resize(dim);
  p.theta_pre.resize(dim);
  for (double& x : p.theta_star) x = rng.normal();
  for (double& x : p.theta_pre) x = rng.normal();
  p.delta = delta;
  p.base = rng.uniform();
  return p;
}

struct VerifyRecord {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  double delta = 0.0;
  double error = 0.0;

  nlohmann::json to_json() const { return {{"dim", dim}, {"seed", seed}, {"delta", delta}, {"error", error}}; }
};

inline std::vector<VerifyRecord> verify_records(std::size_t dim, std::uint64_t seed, const std::vector<double>& deltas) {
  if (dim == 0 || dim > 32) throw ContractError("verify: dim must lie in [1, 32]");
  std::vector<VerifyRecord> out;
  for (double delta : deltas) {
    const QuadProblem p = random_quad_problem(dim, seed, delta);
    const auto a = closed_form(p);
    const auto b = numeric(p);
    double err = 0.0;
    for (std::size_t i = 0; i < dim; ++i) err = std::max(err, std::abs(a[i] - b[i]));
    out.push_back({dim, seed, delta, err});
  }
  return out;
}

/// max over the δ grid of ‖closed_form − numeric‖∞ on one seeded instance.
inline double verify(std::size_t dim, std::uint64_t seed, const std::vector<double>& deltas) {
  double worst = 0.0;
  for (const auto& r : verify_records(dim, seed, deltas)) worst = std::max(worst, r.error);
  return worst;
}

inline const std::vector<double>& delta_grid() {
  static const std::vector<double> grid{1.0, 0.1, 0.01, 0.001, 0.0001};
  return grid;
}

}  // namespace roft
