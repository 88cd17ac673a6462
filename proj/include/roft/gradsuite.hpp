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

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "roft/error.hpp"
#include "roft/gradcheck.hpp"
#include "roft/model.hpp"
#include "roft/penalties.hpp"
#include "roft/pretrain.hpp"
#include "roft/rng.hpp"

namespace roft {

struct GradCheckResult {
  std::string name;
  std::size_t configs = 0;
  double max_relative_error = 0.0;
};

namespace detail {

struct GradCase {
  std::vector<Tensor> inputs;  // differentiated leaves
  std::function<Tensor(const std::vector<Tensor>&)> loss;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

// Autodiff gradient vs central differences, concatenated over all inputs.
inline double check_case(const GradCase& c, double h, bool wrong_sign) {
  std::vector<Tensor> leaves;
  std::vector<double> x;
  for (const Tensor& t : c.inputs) {
    leaves.push_back(t.clone(true));
    x.insert(x.end(), t.values().begin(), t.values().end());
  }
  backward(c.loss(leaves));
  std::vector<double> analytic;
  for (const Tensor& t : leaves) {
    if (t.has_grad())
      analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
    else
      analytic.insert(analytic.end(), t.numel(), 0.0);
  }
  if (wrong_sign)
    for (double& g : analytic) g = -g;
  const auto f = [&](std::span<const double> v) {
    std::vector<Tensor> probe;
    std::size_t off = 0;
    for (const Tensor& t : c.inputs) {
      probe.emplace_back(t.shape(), std::vector<double>(v.begin() + off, v.begin() + off + t.numel()));
      off += t.numel();
    }
    return c.loss(probe).item();
  };
  return relative_error(analytic, finite_diff_grad(f, x, h));
}

inline void random_mask(std::vector<std::uint8_t>& mask, Rng& rng) {
  for (auto& m : mask) m = rng.uniform() < 0.8;
  mask[rng.below(mask.size())] = 1;
}

inline ParamSet params_from(const std::vector<std::string>& names, const std::vector<Tensor>& ts) {
  ParamSet p;
  for (std::size_t i = 0; i < names.size(); ++i) p.tensors.emplace(names[i], ts[i]);
  return p;
}

inline GradCase make_grad_case(const std::string& name, std::uint64_t seed) {
  Rng rng(hash_combine(seed, stable_hash(name)));
  const std::size_t n = 2 + rng.below(5), d = 2 + rng.below(4);
  GradCase c;
  if (name == "bce" || name == "mse") {
    const bool bce = name == "bce";
    std::vector<double> labels(n * d);
    std::vector<std::uint8_t> mask(n * d);
    random_mask(mask, rng);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = bce ? static_cast<double>(rng.below(2)) : rng.normal();
      if (!mask[i]) labels[i] = std::nan("");
    }
    c.inputs = {random_tensor({n, d}, rng, 2.0)};
    c.loss = [=](const std::vector<Tensor>& t) {
      return bce ? bce_with_logits(t[0], labels, mask) : masked_mse(t[0], labels, mask);
    };
  } else if (name == "sce") {
    const double gamma = 1.0 + static_cast<double>(seed % 3);
    c.inputs = {random_tensor({n, d}, rng), random_tensor({n, d}, rng)};
    c.loss = [gamma](const std::vector<Tensor>& t) { return sce_loss(t[0], t[1], gamma).loss; };
  } else if (name == "l2sp") {
    GinConfig arch{2 + rng.below(3), 2 + rng.below(3), 1 + rng.below(2)};
    ParamSet theta = init_encoder(arch, rng.next());
    init_head(theta, 2, rng.next());
    ParamSet pre = theta.clone();
    for (auto& [nm, t] : pre.tensors)
      for (double& v : t.mutable_values()) v += 0.3 * rng.normal();
    const double delta = rng.uniform(0.01, 1.0);
    const std::vector<std::string> names = theta.names();
    for (const auto& nm : names) c.inputs.push_back(theta.at(nm));
    c.loss = [=](const std::vector<Tensor>& t) { return l2sp_penalty(params_from(names, t), pre, delta); };
  } else if (name == "feature_map") {
    const Tensor ref = random_tensor({n, d}, rng);
    const double delta = rng.uniform(0.01, 1.0);
    c.inputs = {random_tensor({n, d}, rng)};
    c.loss = [=](const std::vector<Tensor>& t) { return feature_map_penalty(t[0], ref, delta); };
  } else if (name == "bss") {
    const std::size_t rows = 3 + rng.below(6), cols = 2 + rng.below(5);
    const std::size_t k = 1 + rng.below(std::min(rows, cols) - 1);
    const double delta = rng.uniform(0.01, 1.0);
    c.inputs = {random_tensor({rows, cols}, rng)};
    c.loss = [=](const std::vector<Tensor>& t) { return bss_penalty(t[0], k, delta); };
  } else if (name == "gin") {
    // Two small graphs: a path and a triangle with a pendant.
    GraphBatch batch;
    const std::size_t in = 2 + rng.below(3);
    batch.node_feats = random_tensor({7, in}, rng);
    const std::vector<Edge> undirected{{0, 1}, {1, 2}, {3, 4}, {4, 5}, {5, 3}, {5, 6}};
    for (auto [u, v] : undirected) {
      batch.edges.push_back({u, v});
      batch.edges.push_back({v, u});
    }
    batch.segment = {0, 0, 0, 1, 1, 1, 1};
    batch.graph_count = 2;
    batch.task_count = 2;
    batch.labels = {1, 0, 0, 1};
    batch.label_mask = {1, 1, 1, 1};
    ParamSet p = init_encoder(GinConfig{in, 3 + rng.below(3), 1}, rng.next());
    init_head(p, 2, rng.next());
    for (auto& [nm, t] : p.tensors)
      for (double& v : t.mutable_values()) v += 0.1 * rng.normal();  // nonzero biases and eps
    const std::vector<std::string> names = p.names();
    for (const auto& nm : names) c.inputs.push_back(p.at(nm));
    c.loss = [=](const std::vector<Tensor>& t) {
      const ParamSet q = params_from(names, t);
      return bce_with_logits(predict(encode(batch, q, Mode::eval), q), batch.labels, batch.label_mask);
    };
  } else {
    throw ContractError("gradient suite: unknown case '" + name + "'");
  }
  return c;
}

}  // namespace detail

inline const std::vector<std::string>& gradient_suite_cases() {
  static const std::vector<std::string> names{"bce", "mse", "sce", "l2sp", "feature_map", "bss", "gin"};
  return names;
}

/// Finite-difference audit of one loss or penalty over `configs` seeded
/// random instances. `wrong_sign` negates the analytic gradient so the
/// harness can be shown to fail.
inline GradCheckResult run_gradient_check(const std::string& name, std::size_t configs, std::uint64_t seed = 0,
                                          double h = 1e-5, bool wrong_sign = false) {
  GradCheckResult r{name, configs, 0.0};
  for (std::size_t i = 0; i < configs; ++i) {
    const double e = detail::check_case(detail::make_grad_case(name, hash_combine(seed, i)), h, wrong_sign);
    r.max_relative_error = std::max(r.max_relative_error, std::isnan(e) ? INFINITY : e);
  }
  return r;
}

}  // namespace roft
