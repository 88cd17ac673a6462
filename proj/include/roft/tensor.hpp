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
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "roft/error.hpp"
#include "roft/linalg.hpp"
#include "roft/rng.hpp"

namespace roft {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the grads of self.parents.
  std::function<void(Node& self)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 array that records the operations producing it so
/// that gradients can be pulled back with backward().
///
/// Tensor is a handle: copies share the underlying buffer. Use clone() for an
/// independent leaf.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape)
      if (d == 0) throw ContractError("Tensor: extents must be positive, got " + shape_string(shape));
    if (shape_numel(shape) != values.size())
      throw ContractError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                          shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  static Tensor from_matrix(const Matrix& m, bool requires_grad = false) {
    return Tensor({m.rows, m.cols}, m.data, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }

  std::span<const double> values() const { return node_->value; }
  // Direct write access is for leaves only (parameter updates, init).
  std::span<double> mutable_values() {
    if (!node_->leaf) throw ContractError("Tensor: in-place write to a non-leaf tensor");
    return node_->value;
  }
  double item() const {
    if (numel() != 1) throw ContractError("Tensor::item on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->leaf) throw ContractError("Tensor: requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void clear_grad() const { node_->grad.clear(); }

  Tensor detach() const { return Tensor(shape(), node_->value, false); }
  Tensor clone(bool requires_grad) const { return Tensor(shape(), node_->value, requires_grad); }

  Matrix to_matrix() const {
    if (ndim() != 2) throw ContractError("Tensor::to_matrix needs a 2-D tensor");
    return Matrix(rows(), cols(), node_->value);
  }

  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an interior node. Gradient bookkeeping is dropped when no input needs it.
inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->leaf = false;
  for (const Tensor& t : inputs) n->requires_grad = n->requires_grad || t.requires_grad();
  if (n->requires_grad) {
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(n));
}

inline bool wants(const Node& self, std::size_t parent) { return self.parents[parent]->requires_grad; }
inline std::vector<double>& pgrad(Node& self, std::size_t parent) { return self.parents[parent]->grad_buffer(); }

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw ContractError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar `loss`. Every node reachable from the loss
/// gets a fresh gradient buffer; leaves not on a path keep whatever they had.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Elementwise and linear ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (detail::wants(self, p)) {
        auto& g = detail::pgrad(self, p);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (detail::wants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (detail::wants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::wants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::make_op(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// a * s for a one-element tensor s.
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ContractError("scale_by: factor must have one element");
  const double c = s[0];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::make_op(a.shape(), std::move(out), {a, s}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const double c = self.parents[1]->value[0];
    if (detail::wants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    }
    if (detail::wants(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += self.grad[i] * av[i];
      detail::pgrad(self, 1)[0] += acc;
    }
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) g[i] += self.grad[i];
  });
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a[i]);
  return detail::make_op(a.shape(), out, {a}, [out](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * out[i] * (1.0 - out[i]);
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * self.grad[i];
  });
}

// Elementwise a^p for non-negative a and p >= 1.
inline Tensor pow(const Tensor& a, double p) {
  if (p < 1.0) throw ContractError("pow: exponent must be >= 1");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a[i] < 0.0) throw ContractError("pow: negative base");
    out[i] = std::pow(a[i], p);
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [p](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = p == 1.0 ? 1.0 : p * std::pow(av[i], p - 1.0);
      g[i] += self.grad[i] * d;
    }
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_op({1}, {s}, {a}, [](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (double& x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// (m x k) @ (k x n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ContractError("matmul: inner dimensions differ " + shape_string(a.shape()) + " @ " + shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  return detail::make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const auto& go = self.grad;
    if (detail::wants(self, 0)) {
      auto& ga = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (detail::wants(self, 1)) {
      auto& gb = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * go[i * n + j];
        }
    }
  });
}

// Adds a length-n bias to every row of an (m x n) matrix.
inline Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  detail::require_2d(x, "add_rowwise");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n) throw ContractError("add_rowwise: bias length does not match column count");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return detail::make_op(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    if (detail::wants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Graph ops
// ---------------------------------------------------------------------------

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// out[v] = Σ x[u] over directed edges (u, v).
inline Tensor neighbor_sum(const Tensor& x, std::span<const Edge> edges) {
  detail::require_2d(x, "neighbor_sum");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d, 0.0);
  const auto xv = x.values();
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n) throw ContractError("neighbor_sum: edge endpoint out of range");
    for (std::size_t j = 0; j < d; ++j) out[v * d + j] += xv[u * d + j];
  }
  std::vector<Edge> saved(edges.begin(), edges.end());
  return detail::make_op(x.shape(), std::move(out), {x}, [saved = std::move(saved), d](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (const auto& [u, v] : saved)
      for (std::size_t j = 0; j < d; ++j) g[u * d + j] += self.grad[v * d + j];
  });
}

/// Per-segment mean of rows: (n x d) -> (segments x d).
inline Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments) {
  detail::require_2d(x, "segment_mean");
  const std::size_t n = x.rows(), d = x.cols();
  if (segment.size() != n) throw ContractError("segment_mean: one segment id per row required");
  std::vector<double> count(segments, 0.0);
  for (std::size_t s : segment) {
    if (s >= segments) throw ContractError("segment_mean: segment id out of range");
    count[s] += 1.0;
  }
  std::vector<double> out(segments * d, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[segment[i] * d + j] += xv[i * d + j];
  for (std::size_t s = 0; s < segments; ++s)
    if (count[s] > 0)
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] /= count[s];
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return detail::make_op({segments, d}, std::move(out), {x},
                         [seg = std::move(seg), count = std::move(count), d](detail::Node& self) {
                           auto& g = detail::pgrad(self, 0);
                           for (std::size_t i = 0; i < seg.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j)
                               g[i * d + j] += self.grad[seg[i] * d + j] / count[seg[i]];
                         });
}

/// Selects rows `idx` of a 2-D tensor (repeats allowed).
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  detail::require_2d(x, "gather_rows");
  const std::size_t d = x.cols();
  if (idx.empty()) throw ContractError("gather_rows: empty row selection");
  std::vector<double> out(idx.size() * d);
  const auto xv = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) throw ContractError("gather_rows: row index out of range");
    std::copy_n(&xv[idx[r] * d], d, &out[r * d]);
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  return detail::make_op({idx.size(), d}, std::move(out), {x}, [saved = std::move(saved), d](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t r = 0; r < saved.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[saved[r] * d + j] += self.grad[r * d + j];
  });
}

/// Copy of `x` with the listed rows overwritten by `token` (length = cols).
inline Tensor replace_rows(const Tensor& x, std::span<const std::size_t> rows, const Tensor& token) {
  detail::require_2d(x, "replace_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (token.numel() != d) throw ContractError("replace_rows: token width does not match");
  std::vector<char> hit(n, 0);
  for (std::size_t r : rows) {
    if (r >= n) throw ContractError("replace_rows: row index out of range");
    hit[r] = 1;
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < n; ++r)
    if (hit[r]) std::copy_n(token.values().begin(), d, &out[r * d]);
  return detail::make_op(x.shape(), std::move(out), {x, token}, [hit = std::move(hit), n, d](detail::Node& self) {
    if (detail::wants(self, 0)) {
      auto& g = detail::pgrad(self, 0);
      for (std::size_t r = 0; r < n; ++r)
        if (!hit[r])
          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r * d + j];
    }
    if (detail::wants(self, 1)) {
      auto& g = detail::pgrad(self, 1);
      for (std::size_t r = 0; r < n; ++r)
        if (hit[r])
          for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

/// Inverted dropout. The keep mask is a pure function of (key, element index),
/// so a given key always drops the same entries.
inline Tensor dropout(const Tensor& x, double rate, std::uint64_t key, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = bits_to_unit(hash_combine(key, i)) >= rate ? keep_scale : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return detail::make_op(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

/// Cosine similarity of matching rows of two (n x d) matrices -> (n).
/// A zero-norm row yields 0 with zero gradient.
inline Tensor row_cosine(const Tensor& x, const Tensor& y) {
  detail::require_2d(x, "row_cosine");
  detail::require_same_shape(x, y, "row_cosine");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> dot(n, 0.0), nx(n, 0.0), ny(n, 0.0), out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double a = x[r * d + j], b = y[r * d + j];
      dot[r] += a * b;
      nx[r] += a * a;
      ny[r] += b * b;
    }
    nx[r] = std::sqrt(nx[r]);
    ny[r] = std::sqrt(ny[r]);
    if (nx[r] > 0.0 && ny[r] > 0.0) out[r] = dot[r] / (nx[r] * ny[r]);
  }
  return detail::make_op({n}, out, {x, y}, [n, d, nx, ny, out](detail::Node& self) {
    const auto& xv = self.parents[0]->value;
    const auto& yv = self.parents[1]->value;
    for (std::size_t r = 0; r < n; ++r) {
      if (nx[r] == 0.0 || ny[r] == 0.0) continue;
      const double go = self.grad[r];
      const double inv = 1.0 / (nx[r] * ny[r]);
      if (detail::wants(self, 0)) {
        auto& g = detail::pgrad(self, 0);
        for (std::size_t j = 0; j < d; ++j)
          g[r * d + j] += go * (yv[r * d + j] * inv - out[r] * xv[r * d + j] / (nx[r] * nx[r]));
      }
      if (detail::wants(self, 1)) {
        auto& g = detail::pgrad(self, 1);
        for (std::size_t j = 0; j < d; ++j)
          g[r * d + j] += go * (xv[r * d + j] * inv - out[r] * yv[r * d + j] / (ny[r] * ny[r]));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy with logits over cells where mask != 0.
/// Returns a zero scalar (still attached to the graph) when nothing is observed.
inline Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels,
                              std::span<const std::uint8_t> mask) {
  if (labels.size() != logits.numel() || mask.size() != logits.numel())
    throw ContractError("bce_with_logits: labels/mask size does not match logits");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    if (!mask[i]) continue;
    const double z = logits[i];
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  std::vector<double> y(labels.begin(), labels.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return detail::make_op({1}, {total / denom}, {logits},
                         [y = std::move(y), m = std::move(m), denom](detail::Node& self) {
                           const auto& z = self.parents[0]->value;
                           auto& g = detail::pgrad(self, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (m[i]) g[i] += self.grad[0] * (stable_sigmoid(z[i]) - y[i]) / denom;
                         });
}

/// Mean squared error over cells where mask != 0.
inline Tensor masked_mse(const Tensor& preds, std::span<const double> targets, std::span<const std::uint8_t> mask) {
  if (targets.size() != preds.numel() || mask.size() != preds.numel())
    throw ContractError("masked_mse: targets/mask size does not match predictions");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < preds.numel(); ++i) {
    if (!mask[i]) continue;
    const double e = preds[i] - targets[i];
    total += e * e;
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return detail::make_op({1}, {total / denom}, {preds},
                         [t = std::move(t), m = std::move(m), denom](detail::Node& self) {
                           const auto& p = self.parents[0]->value;
                           auto& g = detail::pgrad(self, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (m[i]) g[i] += self.grad[0] * 2.0 * (p[i] - t[i]) / denom;
                         });
}

// ---------------------------------------------------------------------------
// Spectral
// ---------------------------------------------------------------------------

/// Σ of the squares of the k smallest singular values of a 2-D tensor.
///
/// Only the singular values are differentiated: dσ/dA = u vᵀ for the pair
/// returned by svd(). For a repeated smallest value this picks one valid
/// subgradient, determined by the decomposition.
inline Tensor smallest_singular_sq_sum(const Tensor& f, std::size_t k) {
  detail::require_2d(f, "smallest_singular_sq_sum");
  const std::size_t r = std::min(f.rows(), f.cols());
  if (k == 0 || k > r)
    throw ContractError("smallest_singular_sq_sum: k=" + std::to_string(k) + " outside [1, " + std::to_string(r) + "]");
  SvdResult dec = svd(f.to_matrix());
  double total = 0.0;
  for (std::size_t i = r - k; i < r; ++i) total += dec.s[i] * dec.s[i];
  return detail::make_op({1}, {total}, {f}, [dec = std::move(dec), r, k](detail::Node& self) {
    auto& g = detail::pgrad(self, 0);
    const std::size_t rows = dec.u.rows, cols = dec.v.rows;
    for (std::size_t i = r - k; i < r; ++i) {
      const double w = 2.0 * dec.s[i] * self.grad[0];
      if (w == 0.0) continue;
      for (std::size_t a = 0; a < rows; ++a)
        for (std::size_t b = 0; b < cols; ++b) g[a * cols + b] += w * dec.u(a, i) * dec.v(b, i);
    }
  });
}

}  // namespace roft
