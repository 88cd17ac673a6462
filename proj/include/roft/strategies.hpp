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
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "roft/data.hpp"
#include "roft/metrics.hpp"
#include "roft/model.hpp"
#include "roft/optim.hpp"
#include "roft/penalties.hpp"

namespace roft {

enum class StrategyKind { full, lp, surgical, lp_ft, wise, l2sp, feature_map, bss, dwise };

inline constexpr std::array<StrategyKind, 9> kAllStrategies{
    StrategyKind::full, StrategyKind::lp,          StrategyKind::surgical, StrategyKind::lp_ft, StrategyKind::wise,
    StrategyKind::l2sp, StrategyKind::feature_map, StrategyKind::bss,      StrategyKind::dwise};

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::full: return "full";
    case StrategyKind::lp: return "lp";
    case StrategyKind::surgical: return "surgical";
    case StrategyKind::lp_ft: return "lp_ft";
    case StrategyKind::wise: return "wise";
    case StrategyKind::l2sp: return "l2sp";
    case StrategyKind::feature_map: return "feature_map";
    case StrategyKind::bss: return "bss";
    case StrategyKind::dwise: return "dwise";
  }
  return "?";
}

inline StrategyKind parse_strategy_kind(const std::string& s) {
  for (StrategyKind k : kAllStrategies)
    if (to_string(k) == s) return k;
  throw ConfigError("field 'kind': unknown strategy '" + s + "'");
}

/// Fine-tuning configuration. Defaults follow the benchmark protocol:
/// lr 0.001, 100 epochs, batch 32, dropout 0.5.
struct StrategyConfig {
  StrategyKind kind = StrategyKind::full;
  double alpha = 0.5;         // wise
  double alpha_init = 0.9;    // dwise
  double alpha_lr = 0.005;    // dwise
  std::size_t alpha_epochs = 200;
  double delta = 0.01;        // l2sp / feature_map / bss
  std::optional<std::size_t> k;  // surgical layer, or bss singular-value count
  std::size_t epochs = 100;
  double learning_rate = 0.001;
  double dropout_rate = 0.5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  std::size_t surgical_layer() const { return k.value_or(0); }
  std::size_t bss_k() const { return k.value_or(1); }

  void validate(std::size_t layers) const {
    const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(alpha)) throw ConfigError("field 'alpha' must lie in [0, 1]");
    if (!unit(alpha_init)) throw ConfigError("field 'alpha_init' must lie in [0, 1]");
    if (!(alpha_lr >= 0.0)) throw ConfigError("field 'alpha_lr' must be >= 0");
    if (!(delta > 0.0)) throw ConfigError("field 'delta' must be > 0");
    if (kind == StrategyKind::surgical && surgical_layer() >= layers)
      throw ConfigError("field 'k': surgical layer " + std::to_string(surgical_layer()) + " >= layer count " +
                        std::to_string(layers));
    if (kind == StrategyKind::bss && bss_k() < 1) throw ConfigError("field 'k': bss needs k >= 1");
    if (epochs == 0) throw ConfigError("field 'epochs' must be >= 1");
    if (batch_size == 0) throw ConfigError("field 'batch_size' must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("field 'learning_rate' must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("field 'dropout_rate' must lie in [0, 1)");
  }

  static StrategyConfig from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"kind",  "alpha", "alpha_init",    "alpha_lr",   "alpha_epochs",
                                             "delta", "k",     "epochs",        "learning_rate", "dropout_rate",
                                             "batch_size", "seed"};
    if (!j.is_object()) throw ConfigError("strategy config must be a JSON object");
    for (const auto& [key, v] : j.items())
      if (!known.count(key)) throw ConfigError("field '" + key + "': unknown strategy field");
    StrategyConfig c;
    try {
      if (!j.contains("kind")) throw ConfigError("field 'kind' is required");
      c.kind = parse_strategy_kind(j.at("kind").get<std::string>());
      c.alpha = j.value("alpha", c.alpha);
      c.alpha_init = j.value("alpha_init", c.alpha_init);
      c.alpha_lr = j.value("alpha_lr", c.alpha_lr);
      c.alpha_epochs = j.value("alpha_epochs", c.alpha_epochs);
      c.delta = j.value("delta", c.delta);
      if (j.contains("k") && !j.at("k").is_null()) c.k = j.at("k").get<std::size_t>();
      c.epochs = j.value("epochs", c.epochs);
      c.learning_rate = j.value("learning_rate", c.learning_rate);
      c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
      c.batch_size = j.value("batch_size", c.batch_size);
      c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("strategy config: ") + e.what());
    }
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"kind", to_string(kind)},       {"alpha", alpha},          {"alpha_init", alpha_init},
                     {"alpha_lr", alpha_lr},          {"alpha_epochs", alpha_epochs}, {"delta", delta},
                     {"epochs", epochs},              {"learning_rate", learning_rate},
                     {"dropout_rate", dropout_rate},  {"batch_size", batch_size},  {"seed", seed}};
    j["k"] = k ? nlohmann::json(*k) : nlohmann::json(nullptr);
    return j;
  }
};

/// Train/val/test view of a dataset for one run.
struct FinetuneData {
  const Dataset* ds = nullptr;
  std::vector<std::size_t> train, val, test;
};

struct RunArtifacts {
  ParamSet final_params;
  MetricKind metric = MetricKind::auc;
  std::vector<double> epoch_val_metric;
  std::vector<double> epoch_test_metric;
  std::size_t best_epoch = 0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  double test_metric = std::numeric_limits<double>::quiet_NaN();
  std::optional<std::vector<double>> alphas;
  nlohmann::json train_log = nlohmann::json::array();
};

inline MetricKind metric_for(TaskKind k) { return k == TaskKind::classification ? MetricKind::auc : MetricKind::rmse; }

struct Evaluation {
  double loss = std::numeric_limits<double>::quiet_NaN();
  double metric = std::numeric_limits<double>::quiet_NaN();  // NaN when undefined
};

/// Metric of raw model outputs on a batch; NaN if undefined.
inline double batch_metric(const Tensor& outputs, const GraphBatch& batch, TaskKind kind) {
  try {
    if (kind == TaskKind::classification)
      return roc_auc(outputs.values(), batch.labels, batch.label_mask, batch.task_count);
    return rmse(outputs.values(), batch.labels, batch.label_mask);
  } catch (const UndefinedMetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline Evaluation evaluate(const ParamSet& params, const GraphBatch& batch, TaskKind kind) {
  Tensor out = predict(encode(batch, params, Mode::eval), params);
  return {task_loss(out, batch, kind).item(), batch_metric(out, batch, kind)};
}

// ---------------------------------------------------------------------------
// Layer-wise α search
// ---------------------------------------------------------------------------

/// Objective for the α search: given interpolated parameters (leaves with
/// requires_grad), return the validation loss graph and a higher-is-better
/// selection score.
using AlphaObjective = std::function<std::pair<Tensor, double>(const ParamSet&)>;

struct AlphaSearch {
  std::vector<double> alphas;  // best-scoring iterate
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> trajectory;
  std::vector<double> scores;
};

/// Projected gradient descent on per-layer mixing coefficients.
///
/// ∂L/∂αᵢ = ⟨∂L/∂θ[i], ft[i] − pre[i]⟩, with the embed group counted in α₀.
/// Each αᵢ is clamped to [0, 1] after every step. Runs `steps` updates and
/// returns the best-scoring iterate among the steps + 1 visited.
inline AlphaSearch optimize_alphas(const ParamSet& pre, const ParamSet& ft, double alpha_init, double alpha_lr,
                                   std::size_t steps, const AlphaObjective& objective) {
  const std::size_t layers = ft.layer_count();
  if (!(alpha_init >= 0.0 && alpha_init <= 1.0)) throw ContractError("optimize_alphas: alpha_init outside [0, 1]");
  std::vector<double> alphas(layers, alpha_init);
  AlphaSearch out;
  for (std::size_t step = 0;; ++step) {
    ParamSet theta = interpolate(pre, ft, alphas);
    theta.set_trainable([](const std::string& n) { return param_group(n).kind != ParamGroup::Kind::head; });
    auto [loss, score] = objective(theta);
    out.trajectory.push_back(alphas);
    out.scores.push_back(score);
    if (step == 0 || score > out.best_score) {
      out.best_score = score;
      out.alphas = alphas;
    }
    if (step == steps) break;

    const auto grads = grad(loss, theta);
    std::vector<double> g(layers, 0.0);
    for (const auto& [name, gt] : grads) {
      const ParamGroup grp = param_group(name);
      if (grp.kind == ParamGroup::Kind::head) continue;
      const std::size_t i = grp.kind == ParamGroup::Kind::embed ? 0 : grp.layer;
      const Tensor& f = ft.at(name);
      const Tensor& p = pre.at(name);
      double acc = 0.0;
      for (std::size_t e = 0; e < gt.numel(); ++e) acc += gt[e] * (f[e] - p[e]);
      g[i] += acc;
    }
    for (std::size_t i = 0; i < layers; ++i) alphas[i] = std::clamp(alphas[i] - alpha_lr * g[i], 0.0, 1.0);
  }
  return out;
}

/// α search on a validation batch: loss = masked BCE/MSE, score = AUC or −RMSE
/// (−loss when the metric is undefined).
inline AlphaSearch dwise_optimize_alphas(const ParamSet& pre, const ParamSet& ft, const GraphBatch& val,
                                         const StrategyConfig& cfg, TaskKind kind) {
  if (val.graph_count == 0) throw ConfigError("dwise: empty validation set");
  const AlphaObjective objective = [&](const ParamSet& theta) {
    Tensor out = predict(encode(val, theta, Mode::eval), theta);
    Tensor loss = task_loss(out, val, kind);
    double m = batch_metric(out, val, kind);
    if (std::isnan(m)) return std::make_pair(loss, -loss.item());
    return std::make_pair(loss, kind == TaskKind::classification ? m : -m);
  };
  return optimize_alphas(pre, ft, cfg.alpha_init, cfg.alpha_lr, cfg.alpha_epochs, objective);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

enum class Penalty { none, l2sp, feature_map, bss };

struct LoopResult {
  ParamSet best;   // snapshot at the best validation epoch
  ParamSet last;   // parameters after the final epoch
  std::vector<double> val, test;
  std::size_t best_epoch = 0;
};

inline LoopResult train_loop(ParamSet params, const ParamSet& pre, const FinetuneData& data, const GraphBatch& val,
                             const GraphBatch& test, const StrategyConfig& cfg,
                             const std::function<bool(const std::string&)>& trainable, Penalty penalty,
                             const std::string& phase, nlohmann::json& log) {
  const Dataset& ds = *data.ds;
  const MetricKind mk = metric_for(ds.task_kind);
  params.set_trainable(trainable);
  const std::uint64_t stream = hash_combine(cfg.seed, stable_hash(phase));
  LoopResult r;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto bs = batches(ds, data.train, cfg.batch_size, cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t b = 0; b < bs.size(); ++b) {
      const GraphBatch& batch = bs[b];
      Tensor emb = encode(batch, params, Mode::train, cfg.dropout_rate, dropout_key(stream, epoch, b));
      Tensor loss = task_loss(predict(emb, params), batch, ds.task_kind);
      switch (penalty) {
        case Penalty::none: break;
        case Penalty::l2sp: loss = add(loss, l2sp_penalty(params, pre, cfg.delta)); break;
        case Penalty::feature_map:
          loss = add(loss, feature_map_penalty(emb, encode(batch, pre, Mode::eval), cfg.delta));
          break;
        case Penalty::bss:
          if (batch.graph_count >= std::max<std::size_t>(2, cfg.bss_k()))
            loss = add(loss, bss_penalty(emb, cfg.bss_k(), cfg.delta));
          break;
      }
      if (!std::isfinite(loss.item()))
        throw NonFiniteLossError("finetune(" + to_string(cfg.kind) + ", " + phase + "): non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(b));
      total += loss.item();
      descend(loss, params, cfg.learning_rate);
    }
    const Evaluation ev = evaluate(params, val, ds.task_kind);
    const Evaluation et = evaluate(params, test, ds.task_kind);
    r.val.push_back(ev.metric);
    r.test.push_back(et.metric);
    if (epoch == 0 || better(ev.metric, r.val[r.best_epoch], mk)) {
      r.best_epoch = epoch;
      r.best = params.clone(false);
    }
    log.push_back({{"phase", phase},
                   {"epoch", epoch},
                   {"train_loss", bs.empty() ? 0.0 : total / static_cast<double>(bs.size())},
                   {"val_" + to_string(mk), ev.metric},
                   {"test_" + to_string(mk), et.metric}});
  }
  r.last = params.clone(false);
  return r;
}

inline bool is_head(const std::string& n) { return param_group(n).kind == ParamGroup::Kind::head; }

}  // namespace detail

/// Shared setup: validates the config and prepares a head-initialized copy of
/// the pretrained encoder.
inline ParamSet prepare_for_finetune(const ParamSet& pretrained, const FinetuneData& data, const StrategyConfig& cfg) {
  if (!data.ds) throw ContractError("finetune: no dataset");
  const GinConfig arch = infer_config(pretrained);
  if (arch.in_dim != data.ds->feat_dim)
    throw ValidationError("finetune: checkpoint expects " + std::to_string(arch.in_dim) + " node features, dataset has " +
                          std::to_string(data.ds->feat_dim));
  cfg.validate(arch.layers);
  if (cfg.kind == StrategyKind::bss && cfg.bss_k() > arch.hidden)
    throw ConfigError("field 'k': bss k exceeds hidden width");
  if (data.train.empty() || data.val.empty() || data.test.empty())
    throw ValidationError("finetune: train, val and test must be non-empty");
  ParamSet params = pretrained.encoder_only().clone(false);
  init_head(params, data.ds->task_count, cfg.seed);
  return params;
}

inline RunArtifacts to_artifacts(detail::LoopResult&& r, MetricKind mk, nlohmann::json log) {
  RunArtifacts a;
  a.metric = mk;
  a.final_params = std::move(r.best);
  a.best_epoch = r.best_epoch;
  a.val_metric = r.val[r.best_epoch];
  a.test_metric = r.test[r.best_epoch];
  a.epoch_val_metric = std::move(r.val);
  a.epoch_test_metric = std::move(r.test);
  a.train_log = std::move(log);
  return a;
}

/// Uniform-α interpolation of a finished full fine-tuning run.
inline RunArtifacts apply_wise(const ParamSet& pretrained, const RunArtifacts& base, double alpha,
                               const FinetuneData& data) {
  const std::vector<double> alphas(base.final_params.layer_count(), alpha);
  RunArtifacts out = base;
  out.final_params = interpolate(pretrained, base.final_params, alphas);
  out.alphas = alphas;
  const TaskKind kind = data.ds->task_kind;
  out.val_metric = evaluate(out.final_params, make_batch(*data.ds, data.val), kind).metric;
  out.test_metric = evaluate(out.final_params, make_batch(*data.ds, data.test), kind).metric;
  return out;
}

/// Layer-wise α search on validation, applied to a finished full run.
inline RunArtifacts apply_dwise(const ParamSet& pretrained, const RunArtifacts& base, const StrategyConfig& cfg,
                                const FinetuneData& data) {
  const TaskKind kind = data.ds->task_kind;
  const GraphBatch val = make_batch(*data.ds, data.val);
  AlphaSearch search = dwise_optimize_alphas(pretrained, base.final_params, val, cfg, kind);
  RunArtifacts out = base;
  out.final_params = interpolate(pretrained, base.final_params, search.alphas);
  out.alphas = search.alphas;
  for (std::size_t s = 0; s < search.scores.size(); ++s)
    out.train_log.push_back({{"phase", "alpha"}, {"step", s}, {"alphas", search.trajectory[s]}, {"score", search.scores[s]}});
  out.val_metric = evaluate(out.final_params, val, kind).metric;
  out.test_metric = evaluate(out.final_params, make_batch(*data.ds, data.test), kind).metric;
  return out;
}

/// Runs one fine-tuning strategy from a pretrained encoder.
///
/// `final_params` is the best-validation snapshot of the trained model (for
/// wise/dwise: the interpolation built from that snapshot). lp_ft reports the
/// curves of its second (full) phase.
inline RunArtifacts finetune(const ParamSet& pretrained, const FinetuneData& data, const StrategyConfig& cfg) {
  ParamSet params = prepare_for_finetune(pretrained, data, cfg);
  const ParamSet pre = pretrained.encoder_only();
  const GraphBatch val = make_batch(*data.ds, data.val);
  const GraphBatch test = make_batch(*data.ds, data.test);
  const MetricKind mk = metric_for(data.ds->task_kind);
  const auto all = [](const std::string&) { return true; };
  nlohmann::json log = nlohmann::json::array();
  using detail::Penalty;
  // Reads `log` only after the loop has filled it.
  const auto done = [&](detail::LoopResult r) { return to_artifacts(std::move(r), mk, log); };

  switch (cfg.kind) {
    case StrategyKind::full:
      return done(detail::train_loop(params, pre, data, val, test, cfg, all, Penalty::none, "full", log));
    case StrategyKind::lp:
      return done(detail::train_loop(params, pre, data, val, test, cfg, detail::is_head, Penalty::none, "lp", log));
    case StrategyKind::surgical: {
      const std::string prefix = layer_prefix(cfg.surgical_layer());
      const auto pick = [&](const std::string& n) { return detail::is_head(n) || n.rfind(prefix, 0) == 0; };
      return done(detail::train_loop(params, pre, data, val, test, cfg, pick, Penalty::none, "surgical", log));
    }
    case StrategyKind::lp_ft: {
      auto probe = detail::train_loop(params, pre, data, val, test, cfg, detail::is_head, Penalty::none, "lp", log);
      return done(detail::train_loop(std::move(probe.last), pre, data, val, test, cfg, all, Penalty::none, "full", log));
    }
    case StrategyKind::l2sp:
      return done(detail::train_loop(params, pre, data, val, test, cfg, all, Penalty::l2sp, "l2sp", log));
    case StrategyKind::feature_map:
      return done(detail::train_loop(params, pre, data, val, test, cfg, all, Penalty::feature_map, "feature_map", log));
    case StrategyKind::bss:
      return done(detail::train_loop(params, pre, data, val, test, cfg, all, Penalty::bss, "bss", log));
    case StrategyKind::wise:
    case StrategyKind::dwise: {
      RunArtifacts base =
          done(detail::train_loop(params, pre, data, val, test, cfg, all, Penalty::none, "full", log));
      return cfg.kind == StrategyKind::wise ? apply_wise(pre, base, cfg.alpha, data) : apply_dwise(pre, base, cfg, data);
    }
  }
  throw ConfigError("field 'kind': unhandled strategy");
}

/// Names whose values a strategy is allowed to change.
inline std::set<std::string> contracted_trainable(const ParamSet& params, const StrategyConfig& cfg) {
  std::set<std::string> out;
  for (const auto& [name, t] : params.tensors) {
    const bool head = detail::is_head(name);
    switch (cfg.kind) {
      case StrategyKind::lp:
        if (head) out.insert(name);
        break;
      case StrategyKind::surgical:
        if (head || name.rfind(layer_prefix(cfg.surgical_layer()), 0) == 0) out.insert(name);
        break;
      default:
        out.insert(name);
    }
  }
  return out;
}

}  // namespace roft
