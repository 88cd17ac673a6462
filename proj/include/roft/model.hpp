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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roft/error.hpp"
#include "roft/rng.hpp"
#include "roft/tensor.hpp"

namespace roft {

/// GIN encoder shape. The reference architecture is 5 layers x 300 hidden;
/// the defaults here are desk-scale.
struct GinConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 32;
  std::size_t layers = 3;

  bool operator==(const GinConfig&) const = default;
};

enum class Mode { train, eval };

/// A batch of graphs flattened into one node matrix.
struct GraphBatch {
  Tensor node_feats;                // nodes x features
  std::vector<Edge> edges;          // directed; each bond appears in both directions
  std::vector<std::size_t> segment;  // node -> graph
  std::vector<double> labels;       // graphs x tasks, NaN where missing
  std::vector<std::uint8_t> label_mask;
  std::size_t graph_count = 0;
  std::size_t task_count = 0;

  std::size_t node_count() const { return segment.size(); }

  void validate() const {
    const std::size_t n = node_count();
    if (!node_feats.defined() || node_feats.rows() != n)
      throw ContractError("GraphBatch: node feature rows do not match segment length");
    for (const auto& [u, v] : edges)
      if (u >= n || v >= n) throw ContractError("GraphBatch: edge endpoint out of range");
    for (std::size_t s : segment)
      if (s >= graph_count) throw ContractError("GraphBatch: segment index out of range");
    if (labels.size() != graph_count * task_count || label_mask.size() != labels.size())
      throw ContractError("GraphBatch: label matrix shape mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (std::isnan(labels[i]) && label_mask[i]) throw ContractError("GraphBatch: missing label marked observed");
  }
};

/// Which interpolation group a parameter belongs to.
struct ParamGroup {
  enum class Kind { embed, layer, head, other } kind = Kind::other;
  std::size_t layer = 0;
};

inline ParamGroup param_group(const std::string& name) {
  if (name.rfind("embed.", 0) == 0) return {ParamGroup::Kind::embed, 0};
  if (name.rfind("head.", 0) == 0) return {ParamGroup::Kind::head, 0};
  if (name.rfind("layer.", 0) == 0) {
    const auto dot = name.find('.', 6);
    if (dot != std::string::npos && dot > 6) {
      std::size_t idx = 0;
      for (std::size_t i = 6; i < dot; ++i) {
        if (name[i] < '0' || name[i] > '9') return {};
        idx = idx * 10 + static_cast<std::size_t>(name[i] - '0');
      }
      return {ParamGroup::Kind::layer, idx};
    }
  }
  return {};
}

/// Named parameter collection of an encoder (+ optional head).
///
/// Names follow "embed.{leaf}", "layer.{i}.{leaf}" and "head.{leaf}". The map
/// keeps names sorted, which fixes the serialization order.
struct ParamSet {
  std::map<std::string, Tensor> tensors;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("ParamSet: no parameter named '" + name + "'");
    return it->second;
  }

  std::size_t layer_count() const {
    std::size_t count = 0;
    for (const auto& [name, t] : tensors) {
      const ParamGroup g = param_group(name);
      if (g.kind == ParamGroup::Kind::layer) count = std::max(count, g.layer + 1);
    }
    return count;
  }

  bool has_head() const { return contains("head.weight"); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tensors) out.push_back(name);
    return out;
  }

  // Deep copy; every leaf gets requires_grad = `requires_grad`.
  ParamSet clone(bool requires_grad = false) const {
    ParamSet out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.clone(requires_grad));
    return out;
  }

  // Encoder + embed only (drops head.*).
  ParamSet encoder_only() const {
    ParamSet out;
    for (const auto& [name, t] : tensors)
      if (param_group(name).kind != ParamGroup::Kind::head) out.tensors.emplace(name, t);
    return out;
  }

  void set_trainable(const std::function<bool(const std::string&)>& pred) {
    for (auto& [name, t] : tensors) t.set_requires_grad(pred(name));
  }
};

inline std::string layer_prefix(std::size_t k) { return "layer." + std::to_string(k) + "."; }

/// Names of every parameter of encoder layer k.
inline std::vector<std::string> layer_param_names(const ParamSet& params, std::size_t k) {
  if (k >= params.layer_count())
    throw ContractError("layer_param_names: layer " + std::to_string(k) + " out of range (" +
                        std::to_string(params.layer_count()) + " layers)");
  const std::string prefix = layer_prefix(k);
  std::vector<std::string> out;
  for (const auto& [name, t] : params.tensors)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

namespace detail {

inline Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& x : w) x = rng.uniform(-a, a);
  return Tensor({in, out}, std::move(w));
}

}  // namespace detail

/// Fresh encoder: Glorot-uniform weights, zero biases, eps = 0.
inline ParamSet init_encoder(const GinConfig& cfg, std::uint64_t seed) {
  if (cfg.in_dim == 0 || cfg.hidden == 0 || cfg.layers == 0)
    throw ContractError("init_encoder: dimensions must be positive");
  Rng rng(hash_combine(seed, 0xe4c0de));
  ParamSet p;
  p.tensors.emplace("embed.weight", detail::glorot(cfg.in_dim, cfg.hidden, rng));
  p.tensors.emplace("embed.bias", Tensor::zeros({cfg.hidden}));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string pre = layer_prefix(i);
    p.tensors.emplace(pre + "eps", Tensor::zeros({1}));
    p.tensors.emplace(pre + "mlp.0.weight", detail::glorot(cfg.hidden, cfg.hidden, rng));
    p.tensors.emplace(pre + "mlp.0.bias", Tensor::zeros({cfg.hidden}));
    p.tensors.emplace(pre + "mlp.1.weight", detail::glorot(cfg.hidden, cfg.hidden, rng));
    p.tensors.emplace(pre + "mlp.1.bias", Tensor::zeros({cfg.hidden}));
  }
  return p;
}

/// Adds (or replaces) a freshly initialized prediction head.
inline void init_head(ParamSet& params, std::size_t tasks, std::uint64_t seed) {
  const std::size_t hidden = params.at("embed.weight").cols();
  Rng rng(hash_combine(seed, 0x4ead));
  params.tensors.insert_or_assign("head.weight", detail::glorot(hidden, tasks, rng));
  params.tensors.insert_or_assign("head.bias", Tensor::zeros({tasks}));
}

/// Architecture recovered from parameter shapes.
inline GinConfig infer_config(const ParamSet& params) {
  const Tensor& w = params.at("embed.weight");
  return GinConfig{w.rows(), w.cols(), params.layer_count()};
}

inline std::uint64_t dropout_key(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch) {
  return hash_combine(hash_combine(hash_combine(0xd20f, seed), epoch), batch);
}

/// Node-level GIN embeddings given explicit input rows (so callers can swap
/// in masked features). Layer i computes
///   h ← MLP_i((1 + eps_i)·h + Σ_{u ∈ N(v)} h_u)
/// with ReLU between layers and dropout after each layer in train mode.
inline Tensor encode_nodes_from(const Tensor& inputs, const GraphBatch& batch, const ParamSet& params, Mode mode,
                                double dropout_rate, std::uint64_t key) {
  const std::size_t layers = params.layer_count();
  const Tensor& ew = params.at("embed.weight");
  if (inputs.ndim() != 2 || inputs.cols() != ew.rows())
    throw ContractError("encode: node feature width " + std::to_string(inputs.cols()) + " does not match embed input " +
                        std::to_string(ew.rows()));
  if (inputs.rows() != batch.node_count()) throw ContractError("encode: node row count mismatch");
  Tensor h = add_rowwise(matmul(inputs, ew), params.at("embed.bias"));
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string pre = layer_prefix(i);
    Tensor self_term = scale_by(h, add_scalar(params.at(pre + "eps"), 1.0));
    Tensor agg = add(self_term, neighbor_sum(h, batch.edges));
    Tensor z = relu(add_rowwise(matmul(agg, params.at(pre + "mlp.0.weight")), params.at(pre + "mlp.0.bias")));
    h = add_rowwise(matmul(z, params.at(pre + "mlp.1.weight")), params.at(pre + "mlp.1.bias"));
    if (i + 1 < layers) h = relu(h);
    h = dropout(h, dropout_rate, hash_combine(key, i), mode == Mode::train);
  }
  return h;
}

inline Tensor encode_nodes(const GraphBatch& batch, const ParamSet& params, Mode mode, double dropout_rate,
                           std::uint64_t key) {
  return encode_nodes_from(batch.node_feats, batch, params, mode, dropout_rate, key);
}

/// Graph embeddings (graph_count x hidden) with mean-pool readout.
inline Tensor encode(const GraphBatch& batch, const ParamSet& params, Mode mode, double dropout_rate = 0.0,
                     std::uint64_t key = 0) {
  batch.validate();
  return segment_mean(encode_nodes(batch, params, mode, dropout_rate, key), batch.segment, batch.graph_count);
}

/// Affine head g_φ: embeddings @ head.weight + head.bias. Raw scores/logits.
inline Tensor predict(const Tensor& embeddings, const ParamSet& params) {
  const Tensor& w = params.at("head.weight");
  if (embeddings.ndim() != 2 || embeddings.cols() != w.rows())
    throw ContractError("predict: embedding width does not match head input width");
  return add_rowwise(matmul(embeddings, w), params.at("head.bias"));
}

/// Layer-wise interpolation θ[i] = (1 − αᵢ)·pre[i] + αᵢ·ft[i].
///
/// The embed group uses α₀. The head is copied from `ft`. Endpoints are
/// exact: αᵢ = 0 copies pre bits, αᵢ = 1 copies ft bits, and equal entries
/// are passed through unchanged.
inline ParamSet interpolate(const ParamSet& pre, const ParamSet& ft, std::span<const double> alphas) {
  const std::size_t layers = ft.layer_count();
  if (alphas.size() != layers)
    throw ContractError("interpolate: " + std::to_string(alphas.size()) + " coefficients for " +
                        std::to_string(layers) + " layers");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ContractError("interpolate: coefficient outside [0, 1]");
  ParamSet out;
  for (const auto& [name, f] : ft.tensors) {
    const ParamGroup g = param_group(name);
    if (g.kind == ParamGroup::Kind::head) {
      out.tensors.emplace(name, f.clone(false));
      continue;
    }
    if (g.kind == ParamGroup::Kind::other) throw ContractError("interpolate: unrecognized parameter '" + name + "'");
    const Tensor& p = pre.at(name);
    if (p.shape() != f.shape()) throw ContractError("interpolate: shape mismatch for '" + name + "'");
    const double a = alphas[g.kind == ParamGroup::Kind::embed ? 0 : g.layer];
    std::vector<double> v(f.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (a == 0.0 || p[i] == f[i]) {
        v[i] = p[i];
      } else if (a == 1.0) {
        v[i] = f[i];
      } else {
        v[i] = p[i] + a * (f[i] - p[i]);
      }
    }
    out.tensors.emplace(name, Tensor(f.shape(), std::move(v)));
  }
  for (const auto& [name, p] : pre.tensors)
    if (param_group(name).kind != ParamGroup::Kind::head && !ft.contains(name))
      throw ContractError("interpolate: '" + name + "' missing from fine-tuned parameters");
  return out;
}

/// d(loss)/d(param) for every parameter; parameters off the loss path, or
/// with requires_grad off, get zeros.
inline std::map<std::string, Tensor> grad(const Tensor& loss, const ParamSet& params) {
  if (loss.numel() != 1) throw ContractError("grad: loss must be a scalar");
  for (const auto& [name, t] : params.tensors) t.clear_grad();
  backward(loss);
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params.tensors) {
    if (t.requires_grad() && t.has_grad())
      out.emplace(name, Tensor(t.shape(), std::vector<double>(t.grad().begin(), t.grad().end())));
    else
      out.emplace(name, Tensor::zeros(t.shape()));
  }
  return out;
}

enum class TaskKind { classification, regression };

inline std::string to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "regression"; }

/// Masked BCE-with-logits (classification) or masked MSE (regression).
inline Tensor task_loss(const Tensor& outputs, const GraphBatch& batch, TaskKind kind) {
  if (kind == TaskKind::classification) return bce_with_logits(outputs, batch.labels, batch.label_mask);
  return masked_mse(outputs, batch.labels, batch.label_mask);
}

}  // namespace roft
