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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "roft/gradsuite.hpp"
#include "roft/penalties.hpp"
#include "roft/strategies.hpp"
#include "roft/synth.hpp"

namespace {

using roft::ParamSet;
using roft::StrategyConfig;
using roft::StrategyKind;
using roft::Tensor;

std::uint64_t leaf_hash(const Tensor& t) {
  return roft::stable_hash(
      std::string_view(reinterpret_cast<const char*>(t.values().data()), t.numel() * sizeof(double)));
}

struct Fixture {
  roft::Dataset ds;
  ParamSet pre;
  roft::Split sp;
  roft::FinetuneData data() const { return {&ds, sp.train, sp.val, sp.test}; }
};

Fixture make_fixture(std::size_t n = 60, std::uint64_t seed = 0, std::size_t layers = 3) {
  Fixture f;
  roft::SynthSpec spec;
  spec.size = n;
  spec.seed = seed;
  f.ds = roft::generate_dataset(spec);
  f.pre = roft::init_encoder({f.ds.feat_dim, 8, layers}, seed + 1);
  roft::Rng rng(seed + 2);
  for (auto& [name, t] : f.pre.tensors)
    for (double& v : t.mutable_values()) v += 0.05 * rng.normal();
  f.sp = roft::split(f.ds, roft::SplitScheme::random, {0.6, 0.2, 0.2}, seed);
  return f;
}

StrategyConfig quick(StrategyKind kind) {
  StrategyConfig c;
  c.kind = kind;
  c.epochs = 2;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.k = kind == StrategyKind::surgical ? std::optional<std::size_t>(1) : std::nullopt;
  c.alpha_epochs = 20;
  return c;
}

Tensor predictions(const ParamSet& p, const Fixture& f, const std::vector<std::size_t>& idx) {
  return roft::predict(roft::encode(roft::make_batch(f.ds, idx), p, roft::Mode::eval), p);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

// ----- configuration -------------------------------------------------------

TEST(StrategyConfigJson, RoundTripAndErrors) {
  StrategyConfig c;
  c.kind = StrategyKind::bss;
  c.k = 2;
  c.delta = 0.1;
  const StrategyConfig back = StrategyConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  try {
    StrategyConfig::from_json({{"kind", "sgd"}});
    FAIL();
  } catch (const roft::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'kind'"), std::string::npos);
  }
  EXPECT_THROW(StrategyConfig::from_json({{"kind", "full"}, {"alpah", 0.1}}), roft::ConfigError);
  EXPECT_THROW(StrategyConfig::from_json({{"alpha", 0.1}}), roft::ConfigError);
}

TEST(StrategyConfigJson, ValidationRules) {
  StrategyConfig c;
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(3), roft::ConfigError);
  c = {};
  c.delta = 0.0;
  EXPECT_THROW(c.validate(3), roft::ConfigError);
  c = {};
  c.kind = StrategyKind::surgical;
  c.k = 3;
  EXPECT_THROW(c.validate(3), roft::ConfigError);
  c.k = 2;
  EXPECT_NO_THROW(c.validate(3));
  c = {};
  c.kind = StrategyKind::bss;
  c.k = 0;
  EXPECT_THROW(c.validate(3), roft::ConfigError);
  for (StrategyKind k : roft::kAllStrategies) EXPECT_EQ(roft::parse_strategy_kind(roft::to_string(k)), k);
}

// ----- penalties -----------------------------------------------------------

TEST(L2sp, Examples) {
  ParamSet theta, pre;
  theta.tensors.emplace("layer.0.eps", Tensor({2}, {1.0, 0.0}, true));
  theta.tensors.emplace("head.bias", Tensor({1}, {9.0}, true));
  pre.tensors.emplace("layer.0.eps", Tensor({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(roft::l2sp_penalty(theta, pre, 0.1).item(), 0.05);
  ParamSet same = pre;
  EXPECT_EQ(roft::l2sp_penalty(same, pre, 0.1).item(), 0.0);
  const auto g = roft::grad(roft::l2sp_penalty(theta, pre, 0.1), theta);
  EXPECT_DOUBLE_EQ(g.at("layer.0.eps")[0], 0.1);
  EXPECT_EQ(g.at("head.bias")[0], 0.0);
  EXPECT_LT(roft::run_gradient_check("l2sp", 50).max_relative_error, 1e-4);
}

TEST(FeatureMap, Examples) {
  const Tensor ref({1, 2}, {0.0, 0.0});
  EXPECT_EQ(roft::feature_map_penalty(ref, ref, 1.0).item(), 0.0);
  Tensor f({1, 2}, {1.0, 1.0}, true);
  EXPECT_DOUBLE_EQ(roft::feature_map_penalty(f, ref, 1.0).item(), 1.0);
  roft::backward(roft::feature_map_penalty(f, Tensor({1, 2}, {0.5, 3.0}), 2.0));
  EXPECT_DOUBLE_EQ(f.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(f.grad()[1], -4.0);
  EXPECT_THROW(roft::feature_map_penalty(f, Tensor({2, 1}, {0, 0}), 1.0), roft::ContractError);
}

TEST(Bss, Examples) {
  EXPECT_NEAR(roft::bss_penalty(Tensor({2, 2}, {2, 0, 0, 1}), 1, 0.5).item(), 0.5, 1e-12);
  EXPECT_NEAR(roft::bss_penalty(Tensor({3, 2}, {2, 0, 0, 1, 0, 0}), 1, 0.5).item(), 0.5, 1e-12);
  EXPECT_NEAR(roft::bss_penalty(Tensor({2, 2}, {2, 1, 0, 0}), 1, 0.5).item(), 0.0, 1e-12);
  EXPECT_THROW(roft::bss_penalty(Tensor({2, 2}, {1, 0, 0, 1}), 3, 1.0), roft::ContractError);
  EXPECT_LT(roft::run_gradient_check("bss", 50).max_relative_error, 1e-4);
}

TEST(Penalties, NonNegative) {
  roft::Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(12), b(12);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    EXPECT_GE(roft::feature_map_penalty(Tensor({4, 3}, a), Tensor({4, 3}, b), 0.3).item(), 0.0);
    EXPECT_GE(roft::bss_penalty(Tensor({4, 3}, a), 2, 0.3).item(), 0.0);
  }
}

// ----- strategies ------------------------------------------------------------

TEST(Finetune, TrainabilityPartitionForEveryKind) {
  const Fixture f = make_fixture();
  for (StrategyKind kind : roft::kAllStrategies) {
    const StrategyConfig cfg = quick(kind);
    ParamSet start = f.pre.clone();
    roft::init_head(start, f.ds.task_count, cfg.seed);
    const roft::RunArtifacts run = roft::finetune(f.pre, f.data(), cfg);
    const auto allowed = roft::contracted_trainable(start, cfg);
    ASSERT_EQ(run.final_params.names(), start.names());
    for (const auto& [name, t] : start.tensors) {
      const bool changed = leaf_hash(t) != leaf_hash(run.final_params.at(name));
      EXPECT_EQ(changed, allowed.count(name) == 1) << roft::to_string(kind) << " " << name;
    }
  }
}

TEST(Finetune, LpFreezesEncoder) {
  const Fixture f = make_fixture();
  const auto run = roft::finetune(f.pre, f.data(), quick(StrategyKind::lp));
  for (const auto& [name, t] : f.pre.tensors) EXPECT_TRUE(same_bits(t, run.final_params.at(name))) << name;
}

TEST(Finetune, WiseAtOneMatchesFullRun) {
  const Fixture f = make_fixture();
  StrategyConfig full = quick(StrategyKind::full), wise = quick(StrategyKind::wise);
  wise.alpha = 1.0;
  const auto a = roft::finetune(f.pre, f.data(), full), b = roft::finetune(f.pre, f.data(), wise);
  EXPECT_TRUE(same_bits(predictions(a.final_params, f, f.data().test), predictions(b.final_params, f, f.data().test)));
}

TEST(Finetune, DwiseAtUniformAlphaEqualsWise) {
  const Fixture f = make_fixture();
  const auto base = roft::finetune(f.pre, f.data(), quick(StrategyKind::full));
  for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
    const auto wise = roft::apply_wise(f.pre, base, alpha, f.data());
    StrategyConfig cfg = quick(StrategyKind::dwise);
    cfg.alpha_init = alpha;
    cfg.alpha_lr = 0.0;
    const auto dwise = roft::apply_dwise(f.pre, base, cfg, f.data());
    EXPECT_EQ(*dwise.alphas, std::vector<double>(3, alpha));
    EXPECT_TRUE(same_bits(predictions(wise.final_params, f, f.data().test),
                          predictions(dwise.final_params, f, f.data().test)));
    EXPECT_EQ(wise.test_metric, dwise.test_metric);
  }
}

TEST(Finetune, LpFtContinuesFromProbedHead) {
  const Fixture f = make_fixture();
  const auto run = roft::finetune(f.pre, f.data(), quick(StrategyKind::lp_ft));
  std::size_t lp = 0, full = 0;
  for (const auto& entry : run.train_log) (entry.at("phase") == "lp" ? lp : full)++;
  EXPECT_EQ(lp, 2u);
  EXPECT_EQ(full, 2u);
  EXPECT_EQ(run.epoch_val_metric.size(), 2u);
}

TEST(Finetune, BestEpochMatchesCurve) {
  const Fixture f = make_fixture();
  StrategyConfig cfg = quick(StrategyKind::full);
  cfg.epochs = 6;
  const auto run = roft::finetune(f.pre, f.data(), cfg);
  const auto best = roft::select_best(run.epoch_val_metric, run.epoch_test_metric, run.metric);
  EXPECT_EQ(run.best_epoch, best.epoch);
  EXPECT_EQ(run.test_metric, best.test);
}

TEST(Finetune, DeterministicForFixedSeed) {
  const Fixture f = make_fixture();
  for (StrategyKind kind : {StrategyKind::full, StrategyKind::bss, StrategyKind::dwise, StrategyKind::feature_map}) {
    const auto a = roft::finetune(f.pre, f.data(), quick(kind)), b = roft::finetune(f.pre, f.data(), quick(kind));
    for (const auto& [name, t] : a.final_params.tensors)
      EXPECT_TRUE(same_bits(t, b.final_params.at(name))) << roft::to_string(kind) << " " << name;
    EXPECT_GE(a.train_log.size(), 2u);
    EXPECT_EQ(a.train_log, b.train_log);
  }
}

TEST(Finetune, RegressionUsesRmse) {
  Fixture f = make_fixture();
  roft::SynthSpec spec;
  spec.size = 60;
  spec.kind = roft::TaskKind::regression;
  f.ds = roft::generate_dataset(spec);
  const auto run = roft::finetune(f.pre, f.data(), quick(StrategyKind::l2sp));
  EXPECT_EQ(run.metric, roft::MetricKind::rmse);
  for (double v : run.epoch_val_metric) EXPECT_GE(v, 0.0);
}

TEST(Finetune, ErrorsSurface) {
  Fixture f = make_fixture();
  StrategyConfig cfg = quick(StrategyKind::full);
  cfg.learning_rate = 1e200;
  cfg.epochs = 5;
  EXPECT_THROW(roft::finetune(f.pre, f.data(), cfg), roft::NonFiniteLossError);
  roft::FinetuneData no_val = f.data();
  no_val.val.clear();
  EXPECT_THROW(roft::finetune(f.pre, no_val, quick(StrategyKind::dwise)), roft::ValidationError);
  const ParamSet wrong = roft::init_encoder({3, 8, 3}, 0);
  EXPECT_THROW(roft::finetune(wrong, f.data(), quick(StrategyKind::full)), roft::ValidationError);
  StrategyConfig surg = quick(StrategyKind::surgical);
  surg.k = 7;
  EXPECT_THROW(roft::finetune(f.pre, f.data(), surg), roft::ConfigError);
}

TEST(Finetune, SeparableTaskReachesHighAuc) {
  roft::SynthSpec spec;
  spec.size = 200;
  spec.seed = 11;
  const roft::Dataset ds = roft::generate_dataset(spec);
  const ParamSet pre = roft::init_encoder({ds.feat_dim, 32, 3}, 0);
  const roft::Split sp = roft::split(ds, roft::SplitScheme::random, {0.8, 0.1, 0.1}, 0);
  StrategyConfig cfg;
  cfg.epochs = 100;
  cfg.learning_rate = 0.01;
  const auto run = roft::finetune(pre, {&ds, sp.train, sp.val, sp.test}, cfg);
  EXPECT_GE(run.test_metric, 0.95);
}

// ----- α search --------------------------------------------------------------

ParamSet scalar_model(double v) {
  ParamSet p;
  p.tensors.emplace("layer.0.eps", Tensor({1}, {v}));
  return p;
}

roft::AlphaObjective quadratic(double target) {
  return [target](const ParamSet& theta) {
    Tensor l = roft::square(roft::add_scalar(theta.at("layer.0.eps"), -target));
    return std::make_pair(l, -l.item());
  };
}

TEST(AlphaSearch, ConvergesToAnalyticMinimizer) {
  const auto r = roft::optimize_alphas(scalar_model(0.0), scalar_model(2.0), 0.9, 0.1, 200, quadratic(1.2));
  EXPECT_NEAR(r.alphas[0], 0.6, 1e-3);
  const auto s = roft::optimize_alphas(scalar_model(-1.0), scalar_model(3.0), 0.1, 0.02, 200, quadratic(0.0));
  EXPECT_NEAR(s.alphas[0], 0.25, 1e-3);
}

TEST(AlphaSearch, ClampsToUnitInterval) {
  // Minimizer beyond ft: α is pushed to 1 and stays there.
  const auto r = roft::optimize_alphas(scalar_model(0.0), scalar_model(1.0), 0.5, 0.5, 50, quadratic(5.0));
  for (const auto& a : r.trajectory) {
    EXPECT_GE(a[0], 0.0);
    EXPECT_LE(a[0], 1.0);
  }
  EXPECT_EQ(r.alphas[0], 1.0);
}

TEST(AlphaSearch, FrozenWhenSegmentEmptyOrRateZero) {
  const auto same = roft::optimize_alphas(scalar_model(1.0), scalar_model(1.0), 0.7, 0.1, 30, quadratic(0.0));
  for (const auto& a : same.trajectory) EXPECT_EQ(a[0], 0.7);
  const auto frozen = roft::optimize_alphas(scalar_model(0.0), scalar_model(2.0), 0.9, 0.0, 30, quadratic(1.2));
  EXPECT_EQ(frozen.alphas[0], 0.9);
  EXPECT_EQ(frozen.trajectory.size(), 31u);
}

TEST(AlphaSearch, DwiseOnRealModelKeepsBestIterate) {
  const Fixture f = make_fixture();
  const auto base = roft::finetune(f.pre, f.data(), quick(StrategyKind::full));
  StrategyConfig cfg = quick(StrategyKind::dwise);
  const auto val = roft::make_batch(f.ds, f.data().val);
  const auto search = roft::dwise_optimize_alphas(f.pre, base.final_params, val, cfg, f.ds.task_kind);
  EXPECT_EQ(search.alphas.size(), 3u);
  EXPECT_EQ(search.best_score, *std::max_element(search.scores.begin(), search.scores.end()));
  roft::GraphBatch empty;
  EXPECT_THROW(roft::dwise_optimize_alphas(f.pre, base.final_params, empty, cfg, f.ds.task_kind), roft::ConfigError);
}

}  // namespace
