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
#include <set>

#include "roft/gradsuite.hpp"
#include "roft/model.hpp"
#include "roft/rng.hpp"

namespace {

using roft::GraphBatch;
using roft::Mode;
using roft::ParamSet;
using roft::Tensor;

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Naive row-major matmul oracle.
std::vector<double> naive_mm(const std::vector<double>& a, const std::vector<double>& b, std::size_t n, std::size_t k,
                             std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * m + j] += a[i * k + t] * b[t * m + j];
  return c;
}

GraphBatch make_batch(std::size_t nodes, std::size_t feat, std::vector<std::pair<std::uint32_t, std::uint32_t>> bonds,
                      std::vector<std::size_t> segment, std::size_t graphs, std::vector<double> feats) {
  GraphBatch b;
  b.node_feats = Tensor({nodes, feat}, std::move(feats));
  for (auto [u, v] : bonds) {
    b.edges.push_back({u, v});
    b.edges.push_back({v, u});
  }
  b.segment = std::move(segment);
  b.graph_count = graphs;
  b.task_count = 1;
  b.labels.assign(graphs, 0.0);
  b.label_mask.assign(graphs, 1);
  return b;
}

void set_identity(ParamSet& p, const std::string& name) {
  Tensor& t = p.tensors.at(name);
  auto v = t.mutable_values();
  std::fill(v.begin(), v.end(), 0.0);
  for (std::size_t i = 0; i < std::min(t.rows(), t.cols()); ++i) v[i * t.cols() + i] = 1.0;
}

TEST(Encode, ThreeNodePathHandTrace) {
  ParamSet p = roft::init_encoder({2, 2, 1}, 0);
  for (const char* n : {"embed.weight", "layer.0.mlp.0.weight", "layer.0.mlp.1.weight"}) set_identity(p, n);
  const GraphBatch b = make_batch(3, 2, {{0, 1}, {1, 2}}, {0, 0, 0}, 1, {1, 0, 0, 1, 2, 3});
  const Tensor h = roft::encode_nodes(b, p, Mode::eval, 0.0, 0);
  // Node sums: x0 + x1, x1 + x0 + x2, x2 + x1.
  EXPECT_EQ(vec(h.values()), (std::vector<double>{1, 1, 3, 4, 2, 4}));
  EXPECT_EQ(vec(roft::encode(b, p, Mode::eval).values()), (std::vector<double>{2, 3}));
}

TEST(Encode, IsolatedNodeAppliesMlpToSelfTerm) {
  ParamSet p = roft::init_encoder({3, 4, 1}, 5);
  p.tensors.at("layer.0.eps").mutable_values()[0] = 0.25;
  p.tensors.at("layer.0.mlp.0.bias").mutable_values()[1] = 0.3;
  const std::vector<double> x{0.5, -1.0, 2.0};
  const GraphBatch b = make_batch(1, 3, {}, {0}, 1, x);
  auto h = naive_mm(x, vec(p.at("embed.weight").values()), 1, 3, 4);
  for (double& v : h) v *= 1.25;
  auto z = naive_mm(h, vec(p.at("layer.0.mlp.0.weight").values()), 1, 4, 4);
  for (std::size_t i = 0; i < 4; ++i) z[i] = std::max(0.0, z[i] + p.at("layer.0.mlp.0.bias")[i]);
  const auto out = naive_mm(z, vec(p.at("layer.0.mlp.1.weight").values()), 1, 4, 4);
  const Tensor e = roft::encode(b, p, Mode::eval);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(e[i], out[i], 1e-14);
}

TEST(Encode, IdenticalGraphsGiveIdenticalRows) {
  const ParamSet p = roft::init_encoder({2, 5, 3}, 1);
  const GraphBatch b =
      make_batch(6, 2, {{0, 1}, {1, 2}, {3, 4}, {4, 5}}, {0, 0, 0, 1, 1, 1}, 2, {1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6});
  const Tensor e = roft::encode(b, p, Mode::eval);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(e.at(0, j), e.at(1, j));
}

TEST(Encode, SegmentPermutationPermutesRows) {
  roft::Rng rng(4);
  const ParamSet p = roft::init_encoder({2, 4, 2}, 2);
  std::vector<double> f(10);
  for (double& v : f) v = rng.normal();
  // Graph A: nodes 0-2 path; graph B: nodes 3-4 edge.
  const GraphBatch ab = make_batch(5, 2, {{0, 1}, {1, 2}, {3, 4}}, {0, 0, 0, 1, 1}, 2, f);
  std::vector<double> g(f.begin() + 6, f.end());
  g.insert(g.end(), f.begin(), f.begin() + 6);
  const GraphBatch ba = make_batch(5, 2, {{0, 1}, {2, 3}, {3, 4}}, {0, 0, 1, 1, 1}, 2, g);
  const Tensor e1 = roft::encode(ab, p, Mode::eval), e2 = roft::encode(ba, p, Mode::eval);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(e1.at(0, j), e2.at(1, j), 1e-14);
    EXPECT_NEAR(e1.at(1, j), e2.at(0, j), 1e-14);
  }
}

TEST(Encode, ShapeMismatchIsContractError) {
  const ParamSet p = roft::init_encoder({3, 4, 1}, 0);
  const GraphBatch b = make_batch(1, 2, {}, {0}, 1, {1, 2});
  EXPECT_THROW(roft::encode(b, p, Mode::eval), roft::ContractError);
  GraphBatch bad = make_batch(2, 3, {}, {0, 0}, 1, {1, 2, 3, 4, 5, 6});
  bad.edges.push_back({0, 7});
  EXPECT_THROW(bad.validate(), roft::ContractError);
}

TEST(Encode, DropoutOnlyInTrainMode) {
  const ParamSet p = roft::init_encoder({2, 8, 2}, 3);
  const GraphBatch b = make_batch(3, 2, {{0, 1}, {1, 2}}, {0, 0, 0}, 1, {1, 2, 3, 4, 5, 6});
  const auto eval1 = vec(roft::encode(b, p, Mode::eval, 0.5, 1).values());
  const auto eval2 = vec(roft::encode(b, p, Mode::eval, 0.5, 2).values());
  EXPECT_EQ(eval1, eval2);
  EXPECT_NE(vec(roft::encode(b, p, Mode::train, 0.5, 1).values()), eval1);
  EXPECT_EQ(vec(roft::encode(b, p, Mode::train, 0.5, 1).values()), vec(roft::encode(b, p, Mode::train, 0.5, 1).values()));
}

TEST(Encode, OneLayerGinGradientsMatchFiniteDifferences) {
  EXPECT_LT(roft::run_gradient_check("gin", 50).max_relative_error, 1e-4);
}

TEST(Predict, ZeroWeightsGiveBias) {
  ParamSet p = roft::init_encoder({2, 3, 1}, 0);
  roft::init_head(p, 2, 0);
  std::fill(p.tensors.at("head.weight").mutable_values().begin(), p.tensors.at("head.weight").mutable_values().end(),
            0.0);
  p.tensors.at("head.bias").mutable_values()[0] = 1.5;
  p.tensors.at("head.bias").mutable_values()[1] = -2.0;
  const Tensor out = roft::predict(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), p);
  EXPECT_EQ(vec(out.values()), (std::vector<double>{1.5, -2.0, 1.5, -2.0}));
}

TEST(Predict, IdentityHeadOnOneDimEmbedding) {
  ParamSet p;
  p.tensors.emplace("head.weight", Tensor({1, 1}, {1.0}));
  p.tensors.emplace("head.bias", Tensor({1}, {0.0}));
  EXPECT_EQ(vec(roft::predict(Tensor({3, 1}, {0.1, -2, 7}), p).values()), (std::vector<double>{0.1, -2, 7}));
}

TEST(Predict, MatchesNaiveMatmul) {
  roft::Rng rng(8);
  ParamSet p = roft::init_encoder({2, 6, 1}, 0);
  roft::init_head(p, 3, 1);
  for (double& v : p.tensors.at("head.bias").mutable_values()) v = rng.normal();
  std::vector<double> e(4 * 6);
  for (double& v : e) v = rng.normal();
  auto expect = naive_mm(e, vec(p.at("head.weight").values()), 4, 6, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) expect[i * 3 + j] += p.at("head.bias")[j];
  const auto got = vec(roft::predict(Tensor({4, 6}, e), p).values());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
  EXPECT_THROW(roft::predict(Tensor({4, 5}, std::vector<double>(20)), p), roft::ContractError);
}

ParamSet random_pair_member(std::uint64_t seed, std::size_t layers) {
  ParamSet p = roft::init_encoder({3, 4, layers}, seed);
  roft::Rng rng(seed + 100);
  for (auto& [n, t] : p.tensors)
    for (double& v : t.mutable_values()) v += rng.normal();
  roft::init_head(p, 2, seed);
  return p;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

TEST(Interpolate, EndpointsAreBitExact) {
  const ParamSet pre = random_pair_member(1, 3).encoder_only(), ft = random_pair_member(2, 3);
  const std::vector<double> zero(3, 0.0), one(3, 1.0);
  const ParamSet at0 = roft::interpolate(pre, ft, zero), at1 = roft::interpolate(pre, ft, one);
  for (const auto& [n, t] : at0.tensors) {
    EXPECT_TRUE(bit_equal(t, roft::param_group(n).kind == roft::ParamGroup::Kind::head ? ft.at(n) : pre.at(n))) << n;
    EXPECT_TRUE(bit_equal(at1.at(n), ft.at(n))) << n;
  }
}

TEST(Interpolate, MidpointArithmetic) {
  ParamSet pre, ft;
  pre.tensors.emplace("layer.0.eps", Tensor({2}, {1, 2}));
  ft.tensors.emplace("layer.0.eps", Tensor({2}, {3, 4}));
  const std::vector<double> a{0.5};
  EXPECT_EQ(vec(roft::interpolate(pre, ft, a).at("layer.0.eps").values()), (std::vector<double>{2, 3}));
}

TEST(Interpolate, SelfInterpolationIsIdentity) {
  const ParamSet p = random_pair_member(3, 2);
  const std::vector<double> a{0.37, 0.81};
  const ParamSet q = roft::interpolate(p.encoder_only(), p, a);
  for (const auto& [n, t] : p.tensors) EXPECT_TRUE(bit_equal(q.at(n), t)) << n;
}

TEST(Interpolate, ComposesMultiplicatively) {
  const ParamSet pre = random_pair_member(4, 2).encoder_only(), ft = random_pair_member(5, 2);
  const std::vector<double> a{0.3, 0.6}, b{0.5, 0.25}, ab{0.15, 0.15};
  const ParamSet step = roft::interpolate(pre, roft::interpolate(pre, ft, a), b);
  const ParamSet direct = roft::interpolate(pre, ft, ab);
  for (const auto& [n, t] : direct.tensors)
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(step.at(n)[i], t[i], 1e-12) << n;
}

TEST(Interpolate, EmbedUsesFirstCoefficient) {
  const ParamSet pre = random_pair_member(6, 2).encoder_only(), ft = random_pair_member(7, 2);
  const std::vector<double> a{0.0, 1.0};
  const ParamSet q = roft::interpolate(pre, ft, a);
  EXPECT_TRUE(bit_equal(q.at("embed.weight"), pre.at("embed.weight")));
  EXPECT_TRUE(bit_equal(q.at("layer.1.mlp.0.weight"), ft.at("layer.1.mlp.0.weight")));
}

TEST(Interpolate, RejectsBadCoefficients) {
  const ParamSet pre = random_pair_member(1, 2).encoder_only(), ft = random_pair_member(2, 2);
  const std::vector<double> out_of_range{0.5, 1.5}, wrong_len{0.5};
  EXPECT_THROW(roft::interpolate(pre, ft, out_of_range), roft::ContractError);
  EXPECT_THROW(roft::interpolate(pre, ft, wrong_len), roft::ContractError);
  const ParamSet other = roft::init_encoder({3, 5, 2}, 0);
  const std::vector<double> ok{0.5, 0.5};
  EXPECT_THROW(roft::interpolate(pre, other, ok), roft::ContractError);
}

TEST(LayerNames, PartitionTheInventory) {
  ParamSet p = roft::init_encoder({3, 4, 5}, 0);
  roft::init_head(p, 1, 0);
  std::set<std::string> seen;
  for (std::size_t k = 0; k < 5; ++k)
    for (const auto& n : roft::layer_param_names(p, k)) {
      EXPECT_EQ(n.rfind("layer." + std::to_string(k) + ".", 0), 0u);
      EXPECT_TRUE(seen.insert(n).second) << n;
    }
  EXPECT_EQ(roft::layer_param_names(p, 0).size(), 5u);
  for (const auto& n : {"embed.weight", "embed.bias", "head.weight", "head.bias"}) EXPECT_TRUE(seen.insert(n).second);
  EXPECT_EQ(seen.size(), p.tensors.size());
  EXPECT_THROW(roft::layer_param_names(p, 5), roft::ContractError);
}

TEST(LayerNames, TenLayersDoNotCollide) {
  const ParamSet p = roft::init_encoder({2, 2, 11}, 0);
  for (const auto& n : roft::layer_param_names(p, 1)) EXPECT_EQ(n.rfind("layer.1.", 0), 0u);
  EXPECT_EQ(roft::layer_param_names(p, 1).size(), 5u);
  EXPECT_EQ(p.layer_count(), 11u);
}

}  // namespace
