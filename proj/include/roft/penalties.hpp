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

#include "roft/model.hpp"
#include "roft/tensor.hpp"

namespace roft {

/// (δ/2)·‖θ − θ_pre‖² summed over every embed and encoder-layer leaf of
/// `theta`. Head parameters are not penalized; `pre` carries no gradient.
inline Tensor l2sp_penalty(const ParamSet& theta, const ParamSet& pre, double delta) {
  Tensor total;
  for (const auto& [name, t] : theta.tensors) {
    if (param_group(name).kind == ParamGroup::Kind::head) continue;
    const Tensor& ref = pre.at(name);
    if (ref.shape() != t.shape()) throw ContractError("l2sp_penalty: shape mismatch for '" + name + "'");
    Tensor term = sum(square(sub(t, ref.detach())));
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) return Tensor::scalar(0.0);
  return scale(total, 0.5 * delta);
}

/// δ·Σ_rows ½‖f_row − f_pre_row‖². `f_pre` is treated as a constant.
inline Tensor feature_map_penalty(const Tensor& f, const Tensor& f_pre, double delta) {
  detail::require_same_shape(f, f_pre, "feature_map_penalty");
  return scale(sum(square(sub(f, f_pre.detach()))), 0.5 * delta);
}

/// δ·Σ_{i=1..k} σ₋ᵢ², the k smallest singular values of the batch feature matrix.
inline Tensor bss_penalty(const Tensor& features, std::size_t k, double delta) {
  return scale(smallest_singular_sq_sum(features, k), delta);
}

}  // namespace roft
