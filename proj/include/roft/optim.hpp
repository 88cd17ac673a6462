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
#include <span>
#include <string>
#include <vector>

#include "roft/model.hpp"

namespace roft {

/// Clears parameter grads, back-propagates `loss`, and applies one plain
/// gradient-descent step θ ← θ − lr·∇θ to every parameter with requires_grad.
inline void descend(const Tensor& loss, ParamSet& params, double lr) {
  for (auto& [name, t] : params.tensors) t.clear_grad();
  backward(loss);
  for (auto& [name, t] : params.tensors) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    const auto g = t.grad();
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

inline void require_finite_loss(const Tensor& loss, const std::string& where, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss.item()))
    throw NonFiniteLossError(where + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
}

}  // namespace roft
