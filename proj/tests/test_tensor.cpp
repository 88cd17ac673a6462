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
#include <functional>

#include "roft/gradcheck.hpp"
#include "roft/model.hpp"
#include "roft/rng.hpp"
#include "roft/tensor.hpp"
#include "oracles.hpp"

namespace {

using roft::Tensor;

Tensor randn(roft::Shape shape, roft::Rng& rng, bool rg = false) {
  std::vector<double> v(roft::shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v), rg);
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Autodiff vs central differences for a function of one tensor.
double check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0) {
  Tensor x = x0.clone(true);
  roft::backward(f(x));
  const auto fd = roft::finite_diff_grad(
      [&](std::span<const double> v) { return f(Tensor(x0.shape(), to_vec(v))).item(); }, x0.values(), 1e-5);
  return roft::relative_error(to_vec(x.grad()), fd);
}

TEST(Grad, SquareOfScalar) {
  Tensor x = Tensor::scalar(3.0, true);
  roft::backward(roft::mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Grad, ReluSubgradient) {
  Tensor v({2}, {-1.0, 2.0}, true);
  roft::backward(roft::sum(roft::relu(v)));
  EXPECT_EQ(to_vec(v.grad()), (std::vector<double>{0.0, 1.0}));
}

TEST(Grad, HalfSquaredDistance) {
  roft::ParamSet p, pre;
  p.tensors.emplace("embed.weight", Tensor({1, 2}, {1.0, 0.0}, true));
  const Tensor ref({1, 2}, {0.0, 0.0});
  const Tensor loss = roft::scale(roft::sum(roft::square(roft::sub(p.at("embed.weight"), ref))), 0.5);
  const auto g = roft::grad(loss, p);
  EXPECT_EQ(to_vec(g.at("embed.weight").values()), (std::vector<double>{1.0, 0.0}));
}

TEST(Grad, NonScalarLossIsContractError) {
  Tensor x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(roft::backward(roft::scale(x, 2.0)), roft::ContractError);
}

TEST(Grad, DisconnectedLeafGetsZeros) {
  roft::ParamSet p;
  p.tensors.emplace("embed.weight", Tensor({1, 1}, {2.0}, true));
  p.tensors.emplace("embed.bias", Tensor({1}, {5.0}, true));
  const Tensor loss = roft::sum(roft::square(p.at("embed.weight")));
  const auto g = roft::grad(loss, p);
  EXPECT_EQ(g.at("embed.bias")[0], 0.0);
  EXPECT_EQ(g.at("embed.weight")[0], 4.0);
}

TEST(Grad, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = roft::mul(x, x);
  roft::backward(roft::add(y, y));  // 2x² → 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(TensorShape, RejectsBadConstruction) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), roft::ContractError);
  EXPECT_THROW(Tensor({0}, {}), roft::ContractError);
  EXPECT_THROW(roft::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), roft::ContractError);
}

TEST(Matmul, MatchesNaiveProduct) {
  roft::Rng rng(1);
  const Tensor a = randn({4, 3}, rng), b = randn({3, 5}, rng);
  const Tensor c = roft::matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-12);
    }
}

TEST(FiniteDiff, QuadraticAndConstant) {
  const std::vector<double> x{1.0, 2.0};
  const auto g = roft::finite_diff_grad([](std::span<const double> v) { return v[0] * v[0] + v[1] * v[1]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
  const auto z = roft::finite_diff_grad([](std::span<const double>) { return 7.0; }, x, 1e-5);
  EXPECT_EQ(z, (std::vector<double>{0.0, 0.0}));
}

// Every differentiable op against finite differences over 50 seeds.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  roft::Rng rng(static_cast<std::uint64_t>(GetParam()));
  const std::size_t n = 2 + rng.below(4), d = 2 + rng.below(4);
  const Tensor w = randn({d, 3}, rng), other = randn({n, d}, rng), bias = randn({d}, rng);
  const Tensor x = randn({n, d}, rng);
  const double tol = 1e-4;
  const auto weighted = [&](const Tensor& t) {
    // Random linear functional keeps the tested op's Jacobian fully exercised.
    return roft::sum(roft::mul(t, other));
  };
  EXPECT_LT(check([&](const Tensor& t) { return roft::sum(roft::matmul(t, w)); }, x), tol) << "matmul";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::add(t, other)); }, x), tol) << "add";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::sub(other, t)); }, x), tol) << "sub";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::mul(t, t)); }, x), tol) << "mul";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::relu(t)); }, x), tol) << "relu";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::sigmoid(t)); }, x), tol) << "sigmoid";
  EXPECT_LT(check([&](const Tensor& t) { return roft::mean(roft::pow(roft::square(t), 1.5)); }, x), tol) << "pow";
  EXPECT_LT(check([&](const Tensor& b) { return weighted(roft::add_rowwise(other, b)); }, bias), tol) << "add_rowwise";
  const Tensor s = randn({1}, rng);
  EXPECT_LT(check([&](const Tensor& c) { return weighted(roft::scale_by(other, c)); }, s), tol) << "scale_by";
  EXPECT_LT(check([&](const Tensor& t) { return roft::sum(roft::row_cosine(t, other)); }, x), tol) << "row_cosine";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::dropout(t, 0.5, 9, false)); }, x), tol) << "dropout";
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::dropout(t, 0.5, 9, true)); }, x), tol) << "dropout tr";

  std::vector<std::size_t> seg(n);
  for (std::size_t i = 0; i < n; ++i) seg[i] = i % 2;
  const Tensor pooled_w = randn({2, d}, rng);
  EXPECT_LT(check([&](const Tensor& t) { return roft::sum(roft::mul(roft::segment_mean(t, seg, 2), pooled_w)); }, x),
            tol)
      << "segment_mean";
  std::vector<roft::Edge> edges;
  for (std::uint32_t i = 0; i + 1 < n; ++i) {
    edges.push_back({i, i + 1});
    edges.push_back({i + 1, i});
  }
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::neighbor_sum(t, edges)); }, x), tol) << "neighbor_sum";
  const std::vector<std::size_t> rows{0, n - 1};
  const Tensor token = randn({d}, rng);
  EXPECT_LT(check([&](const Tensor& t) { return weighted(roft::replace_rows(t, rows, token)); }, x), tol) << "replace";
  EXPECT_LT(check([&](const Tensor& k) { return weighted(roft::replace_rows(other, rows, k)); }, token), tol)
      << "replace token";
  EXPECT_LT(check([&](const Tensor& t) { return roft::sum(roft::square(roft::gather_rows(t, rows))); }, x), tol)
      << "gather_rows";

  std::vector<double> labels(n * d);
  std::vector<std::uint8_t> mask(n * d);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<double>(rng.below(2));
    mask[i] = rng.below(4) != 0;
  }
  mask[0] = 1;
  EXPECT_LT(check([&](const Tensor& t) { return roft::bce_with_logits(t, labels, mask); }, x), tol) << "bce";
  EXPECT_LT(check([&](const Tensor& t) { return roft::masked_mse(t, labels, mask); }, x), tol) << "mse";
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 50));

TEST(Dropout, EvalIsIdentityAndTrainIsDeterministic) {
  roft::Rng rng(2);
  const Tensor x = randn({6, 5}, rng);
  EXPECT_EQ(to_vec(roft::dropout(x, 0.5, 1, false).values()), to_vec(x.values()));
  const auto a = to_vec(roft::dropout(x, 0.5, 1, true).values());
  const auto b = to_vec(roft::dropout(x, 0.5, 1, true).values());
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == 0.0 || a[i] == 2.0 * x[i]);
}

TEST(Losses, BceMatchesDirectFormula) {
  const Tensor z({2}, {0.3, -1.2});
  const std::vector<double> y{1.0, 0.0};
  const std::vector<std::uint8_t> m{1, 1};
  const double expect = (-std::log(1 / (1 + std::exp(-0.3))) - std::log(1 - 1 / (1 + std::exp(1.2)))) / 2;
  EXPECT_NEAR(roft::bce_with_logits(z, y, m).item(), expect, 1e-14);
}

TEST(Losses, MissingCellsContributeNothing) {
  const std::vector<double> y{1.0, std::nan("")};
  const std::vector<std::uint8_t> m{1, 0};
  Tensor z({2}, {0.5, 100.0}, true);
  roft::backward(roft::bce_with_logits(z, y, m));
  EXPECT_EQ(z.grad()[1], 0.0);
  Tensor p({2}, {3.0, 4.0}, true);
  const std::vector<double> t{0.0, 0.0};
  EXPECT_DOUBLE_EQ(roft::masked_mse(p, t, m).item(), 9.0);
}

TEST(Spectral, SmallestSingularGradientMatchesAnalytic) {
  roft::Rng rng(99);
  int checked = 0;
  while (checked < 30) {
    const Tensor f = randn({8, 6}, rng);
    const roft_test::OracleSvd o = roft_test::hestenes(f.to_matrix());
    std::vector<std::size_t> order(6);
    for (std::size_t i = 0; i < 6; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return o.sigma[a] < o.sigma[b]; });
    if (o.sigma[order[1]] - o.sigma[order[0]] < 0.1) continue;
    const std::size_t m = order[0];
    Tensor x = f.clone(true);
    roft::backward(roft::smallest_singular_sq_sum(x, 1));
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        EXPECT_NEAR(x.grad()[i * 6 + j], 2 * o.sigma[m] * o.u(i, m) * o.v(j, m), 1e-5);
    ++checked;
  }
}

TEST(Spectral, KOutOfRangeIsContractError) {
  EXPECT_THROW(roft::smallest_singular_sq_sum(Tensor::zeros({3, 2}), 3), roft::ContractError);
  EXPECT_THROW(roft::smallest_singular_sq_sum(Tensor::zeros({3, 2}), 0), roft::ContractError);
}

}  // namespace
