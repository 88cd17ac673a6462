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

#include "roft/checkpoint.hpp"
#include "roft/metrics.hpp"
#include "roft/pretrain.hpp"
#include "roft/synth.hpp"

namespace {

using roft::Tensor;

roft::Dataset synth(std::size_t n, std::uint64_t seed = 0) {
  roft::SynthSpec spec;
  spec.size = n;
  spec.seed = seed;
  return roft::generate_dataset(spec);
}

TEST(Sce, PerfectReconstructionIsZero) {
  const Tensor x({2, 3}, {1, 2, 3, -1, 0, 4});
  for (double g : {1.0, 2.0, 3.5}) EXPECT_NEAR(roft::sce_loss(x, x, g).loss.item(), 0.0, 1e-15);
}

TEST(Sce, OrthogonalAndAntiparallelRows) {
  EXPECT_DOUBLE_EQ(roft::sce_loss(Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {0, 3}), 1.0).loss.item(), 1.0);
  EXPECT_DOUBLE_EQ(roft::sce_loss(Tensor({1, 2}, {1, 2}), Tensor({1, 2}, {-2, -4}), 2.0).loss.item(), 4.0);
}

TEST(Sce, ZeroNormTargetRowsAreSkipped) {
  const auto r = roft::sce_loss(Tensor({2, 2}, {0, 0, 1, 0}), Tensor({2, 2}, {1, 1, 0, 1}), 1.0);
  EXPECT_EQ(r.skipped_rows, 1u);
  EXPECT_DOUBLE_EQ(r.loss.item(), 1.0);
}

TEST(Sce, BoundedBetweenZeroAndTwoToGamma) {
  roft::Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(12), b(12);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const double g = 1.0 + 3.0 * rng.uniform();
    const double l = roft::sce_loss(Tensor({4, 3}, a), Tensor({4, 3}, b), g).loss.item();
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, std::pow(2.0, g) + 1e-12);
  }
}

TEST(Sce, GammaBelowOneIsRejected) {
  const Tensor x({1, 2}, {1, 0});
  EXPECT_THROW(roft::sce_loss(x, x, 0.5), roft::ContractError);
}

roft::GraphBatch batch_of(std::size_t nodes) {
  roft::GraphBatch b;
  b.node_feats = Tensor::zeros({nodes, 2});
  b.segment.assign(nodes, 0);
  b.graph_count = 1;
  return b;
}

TEST(MaskNodes, CeilingCountAndDeterminism) {
  const auto b = batch_of(7);
  EXPECT_EQ(roft::mask_nodes(b, 1.0 / 7.0, 0).size(), 1u);
  EXPECT_EQ(roft::mask_nodes(b, 0.3, 0).size(), 3u);
  EXPECT_EQ(roft::mask_nodes(b, 0.3, 11), roft::mask_nodes(b, 0.3, 11));
  EXPECT_THROW(roft::mask_nodes(b, 0.0, 0), roft::ContractError);
  EXPECT_THROW(roft::mask_nodes(b, 1.0, 0), roft::ContractError);
}

TEST(MaskNodes, FractionWithinOneNodeOfRate) {
  roft::Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(60);
    const double rate = 0.01 + 0.98 * rng.uniform();
    const auto idx = roft::mask_nodes(batch_of(n), rate, rng.next());
    const double frac = static_cast<double>(idx.size()) / static_cast<double>(n);
    EXPECT_GE(frac, rate - 1e-12);
    EXPECT_LE(frac, rate + 1.0 / static_cast<double>(n) + 1e-12);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
  }
}

TEST(PretrainConfig, Validation) {
  roft::PretrainConfig c;
  c.mask_rate = 1.0;
  EXPECT_THROW(c.validate(), roft::ConfigError);
  c = {};
  c.gamma = 0.9;
  EXPECT_THROW(c.validate(), roft::ConfigError);
  EXPECT_THROW(roft::parse_paradigm("contrastive"), roft::ConfigError);
}

TEST(PretrainSsl, SmokeCheckpointLoads) {
  roft::PretrainConfig cfg;
  cfg.epochs = 1;
  const auto r = roft::pretrain_ssl(synth(10), {0, 8, 2}, cfg);
  EXPECT_EQ(r.checkpoint.meta.paradigm, "ssl");
  const auto back = roft::deserialize_checkpoint(roft::serialize_checkpoint(r.checkpoint.params, r.checkpoint.meta));
  EXPECT_EQ(back.params.names(), roft::init_encoder({8, 8, 2}, 0).names());
  EXPECT_EQ(r.epoch_loss.size(), 1u);
}

TEST(PretrainSsl, LossDescends) {
  roft::PretrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 0.01;
  const auto r = roft::pretrain_ssl(synth(200), {0, 16, 2}, cfg);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(PretrainSsl, SameSeedBitIdentical) {
  roft::PretrainConfig cfg;
  cfg.epochs = 3;
  cfg.dropout_rate = 0.2;
  const auto ds = synth(40);
  const auto a = roft::pretrain_ssl(ds, {0, 8, 2}, cfg), b = roft::pretrain_ssl(ds, {0, 8, 2}, cfg);
  EXPECT_EQ(roft::serialize_checkpoint(a.checkpoint.params, a.checkpoint.meta),
            roft::serialize_checkpoint(b.checkpoint.params, b.checkpoint.meta));
}

TEST(PretrainSupervised, HeadDroppedAndTagged) {
  roft::PretrainConfig cfg;
  cfg.paradigm = roft::Paradigm::supervised;
  cfg.epochs = 1;
  const auto r = roft::pretrain_supervised(synth(10), {0, 8, 2}, cfg);
  EXPECT_EQ(r.checkpoint.meta.paradigm, "supervised");
  for (const auto& n : r.checkpoint.params.names()) EXPECT_NE(n.rfind("head.", 0), 0u) << n;
  const auto ssl = roft::pretrain_ssl(synth(10), {0, 8, 2}, roft::PretrainConfig{});
  EXPECT_EQ(r.checkpoint.params.names(), ssl.checkpoint.params.names());
}

TEST(PretrainSupervised, LearnsSignOfMeanFeature) {
  roft::Dataset ds = synth(200, 4);
  for (auto& m : ds.molecules)
    m.labels = {std::accumulate(m.node_feats.begin(), m.node_feats.end(), 0.0) > 0.0 ? 1.0 : 0.0};
  roft::PretrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 0.05;
  const auto r = roft::pretrain_supervised(ds, {0, 16, 2}, cfg);
  roft::ParamSet full = r.checkpoint.params;
  for (const auto& [n, t] : r.task_head.tensors) full.tensors.emplace(n, t);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto batch = roft::make_batch(ds, all);
  const Tensor out = roft::predict(roft::encode(batch, full, roft::Mode::eval), full);
  const double auc = roft::roc_auc(out.values(), batch.labels, batch.label_mask, 1);
  EXPECT_GT(auc, 0.9);
}

}  // namespace
