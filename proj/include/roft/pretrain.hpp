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
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "roft/checkpoint.hpp"
#include "roft/data.hpp"
#include "roft/model.hpp"
#include "roft/optim.hpp"

namespace roft {

enum class Paradigm { ssl, supervised };

inline std::string to_string(Paradigm p) { return p == Paradigm::ssl ? "ssl" : "supervised"; }

inline Paradigm parse_paradigm(const std::string& s) {
  if (s == "ssl") return Paradigm::ssl;
  if (s == "supervised") return Paradigm::supervised;
  throw ConfigError("paradigm: expected 'ssl' or 'supervised', got '" + s + "'");
}

// mask_rate and gamma defaults are GraphMAE conventions.
struct PretrainConfig {
  Paradigm paradigm = Paradigm::ssl;
  double mask_rate = 0.25;
  double gamma = 2.0;
  std::size_t epochs = 50;
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double dropout_rate = 0.0;

  void validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)");
    if (!(gamma >= 1.0)) throw ConfigError("gamma must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  }
};

struct SceResult {
  Tensor loss;
  std::size_t skipped_rows = 0;  // zero-norm targets (cosine undefined)
};

/// Scaled cosine error: mean over rows of (1 − cos(x_row, x̂_row))^γ.
/// Rows whose target has zero norm are left out and counted.
inline SceResult sce_loss(const Tensor& target, const Tensor& recon, double gamma) {
  detail::require_same_shape(target, recon, "sce_loss");
  if (!(gamma >= 1.0)) throw ContractError("sce_loss: gamma must be >= 1");
  const std::size_t n = target.rows(), d = target.cols();
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += target[r * d + j] * target[r * d + j];
    if (s > 0.0) keep.push_back(r);
  }
  SceResult out;
  out.skipped_rows = n - keep.size();
  if (keep.empty()) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  Tensor x = keep.size() == n ? target : gather_rows(target, keep);
  Tensor y = keep.size() == n ? recon : gather_rows(recon, keep);
  // relu absorbs rounding that pushes cos a hair above 1.
  Tensor err = relu(add_scalar(scale(row_cosine(x, y), -1.0), 1.0));
  out.loss = mean(pow(err, gamma));
  return out;
}

/// ⌈mask_rate · nodes⌉ node indices chosen uniformly without replacement
/// (sorted). Deterministic for a given seed.
inline std::vector<std::size_t> mask_nodes(const GraphBatch& batch, double mask_rate, std::uint64_t seed) {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ContractError("mask_nodes: mask_rate must lie in (0, 1)");
  const std::size_t n = batch.node_count();
  const auto count = std::min(
      n, static_cast<std::size_t>(std::ceil(mask_rate * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(hash_combine(seed, 0x3a5c));
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::size_t skipped_rows = 0;
  ParamSet task_head;  // supervised only; kept in memory, never saved

  nlohmann::json log_json() const {
    nlohmann::json log = nlohmann::json::array();
    for (std::size_t e = 0; e < epoch_loss.size(); ++e) log.push_back({{"epoch", e}, {"loss", epoch_loss[e]}});
    return log;
  }
};

/// Masked-feature reconstruction: masked node rows are replaced by a learned
/// token, the encoder output is mapped back to feature space by an affine
/// decoder, and SCE is taken over the masked rows. The saved checkpoint holds
/// only embed + encoder layers.
inline PretrainResult pretrain_ssl(const Dataset& ds, GinConfig arch, const PretrainConfig& cfg) {
  cfg.validate();
  arch.in_dim = ds.feat_dim;
  ParamSet params = init_encoder(arch, cfg.seed);
  {
    Rng rng(hash_combine(cfg.seed, 0xdec0));
    params.tensors.emplace("mask_token", Tensor::zeros({arch.in_dim}));
    params.tensors.emplace("decoder.weight", detail::glorot(arch.hidden, arch.in_dim, rng));
    params.tensors.emplace("decoder.bias", Tensor::zeros({arch.in_dim}));
  }
  params.set_trainable([](const std::string&) { return true; });

  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  PretrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto bs = batches(ds, all, cfg.batch_size, cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t b = 0; b < bs.size(); ++b) {
      const GraphBatch& batch = bs[b];
      const std::uint64_t key = dropout_key(cfg.seed, epoch, b);
      const auto masked = mask_nodes(batch, cfg.mask_rate, key);
      Tensor inputs = replace_rows(batch.node_feats, masked, params.at("mask_token"));
      Tensor h = encode_nodes_from(inputs, batch, params, Mode::train, cfg.dropout_rate, key);
      Tensor recon = add_rowwise(matmul(gather_rows(h, masked), params.at("decoder.weight")),
                                 params.at("decoder.bias"));
      SceResult sce = sce_loss(gather_rows(batch.node_feats, masked), recon, cfg.gamma);
      require_finite_loss(sce.loss, "pretrain_ssl", epoch, b);
      result.skipped_rows += sce.skipped_rows;
      total += sce.loss.item();
      descend(sce.loss, params, cfg.learning_rate);
    }
    result.epoch_loss.push_back(bs.empty() ? 0.0 : total / static_cast<double>(bs.size()));
  }
  result.checkpoint.params = params.encoder_only();
  result.checkpoint.params.tensors.erase("mask_token");
  result.checkpoint.params.tensors.erase("decoder.weight");
  result.checkpoint.params.tensors.erase("decoder.bias");
  result.checkpoint.params = result.checkpoint.params.clone(false);
  result.checkpoint.meta = CheckpointMeta{arch, "ssl", "", 0};
  return result;
}

/// Multi-task supervised pretraining with masked BCE/MSE; the task head is
/// dropped from the saved checkpoint.
inline PretrainResult pretrain_supervised(const Dataset& ds, GinConfig arch, const PretrainConfig& cfg) {
  cfg.validate();
  arch.in_dim = ds.feat_dim;
  ParamSet params = init_encoder(arch, cfg.seed);
  init_head(params, ds.task_count, cfg.seed);
  params.set_trainable([](const std::string&) { return true; });

  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  PretrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto bs = batches(ds, all, cfg.batch_size, cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t b = 0; b < bs.size(); ++b) {
      const std::uint64_t key = dropout_key(cfg.seed, epoch, b);
      Tensor out = predict(encode(bs[b], params, Mode::train, cfg.dropout_rate, key), params);
      Tensor loss = task_loss(out, bs[b], ds.task_kind);
      require_finite_loss(loss, "pretrain_supervised", epoch, b);
      total += loss.item();
      descend(loss, params, cfg.learning_rate);
    }
    result.epoch_loss.push_back(bs.empty() ? 0.0 : total / static_cast<double>(bs.size()));
  }
  result.checkpoint.params = params.encoder_only().clone(false);
  result.checkpoint.meta = CheckpointMeta{arch, "supervised", "", 0};
  for (const char* n : {"head.weight", "head.bias"}) result.task_head.tensors.emplace(n, params.at(n).clone(false));
  return result;
}

}  // namespace roft
