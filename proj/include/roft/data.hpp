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
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "roft/error.hpp"
#include "roft/model.hpp"
#include "roft/rng.hpp"

namespace roft {

struct Molecule {
  std::string id;
  std::size_t num_nodes = 0;
  std::vector<double> node_feats;  // num_nodes x feat_dim, row-major
  std::vector<Edge> edges;         // undirected, each bond once
  std::vector<double> labels;      // NaN = missing
  std::optional<std::string> scaffold;

  bool operator==(const Molecule& o) const {
    if (id != o.id || num_nodes != o.num_nodes || node_feats != o.node_feats || edges != o.edges ||
        scaffold != o.scaffold || labels.size() != o.labels.size())
      return false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool a = std::isnan(labels[i]), b = std::isnan(o.labels[i]);
      if (a != b || (!a && labels[i] != o.labels[i])) return false;
    }
    return true;
  }
};

struct Dataset {
  std::vector<Molecule> molecules;
  std::size_t task_count = 0;
  std::size_t feat_dim = 0;
  TaskKind task_kind = TaskKind::classification;

  std::size_t size() const { return molecules.size(); }
  bool operator==(const Dataset&) const = default;
};

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "regression") return TaskKind::regression;
  throw ConfigError("task_kind: expected 'classification' or 'regression', got '" + s + "'");
}

namespace detail {

inline Molecule parse_molecule(const nlohmann::json& j, std::size_t line) {
  Molecule m;
  try {
    m.id = j.at("id").get<std::string>();
    const auto& feats = j.at("node_feats");
    if (!feats.is_array() || feats.empty()) throw ParseError("node_feats must be a non-empty array", line);
    m.num_nodes = feats.size();
    std::size_t dim = feats[0].size();
    for (const auto& row : feats) {
      if (!row.is_array() || row.size() != dim || dim == 0)
        throw ParseError("node_feats rows must be equal-length non-empty arrays", line);
      for (const auto& v : row) m.node_feats.push_back(v.get<double>());
    }
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ParseError("edges must be [u, v] pairs", line);
      const auto u = e[0].get<std::uint32_t>(), v = e[1].get<std::uint32_t>();
      if (u >= m.num_nodes || v >= m.num_nodes) throw ParseError("edge endpoint out of range", line);
      m.edges.emplace_back(u, v);
    }
    for (const auto& y : j.at("labels"))
      m.labels.push_back(y.is_null() ? std::numeric_limits<double>::quiet_NaN() : y.get<double>());
    if (j.contains("scaffold") && !j.at("scaffold").is_null()) m.scaffold = j.at("scaffold").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line);
  }
  return m;
}

}  // namespace detail

/// Checks the cross-molecule invariants and fills task_count / feat_dim.
/// If `kind` is empty the task kind is inferred: all observed labels in {0, 1}
/// means classification.
inline void finalize_dataset(Dataset& ds, std::optional<TaskKind> kind) {
  if (ds.molecules.empty()) throw ValidationError("dataset is empty");
  ds.task_count = ds.molecules[0].labels.size();
  ds.feat_dim = ds.molecules[0].node_feats.size() / ds.molecules[0].num_nodes;
  if (ds.task_count == 0) throw ValidationError("dataset has no tasks");
  bool binary = true;
  for (std::size_t i = 0; i < ds.molecules.size(); ++i) {
    const Molecule& m = ds.molecules[i];
    if (m.labels.size() != ds.task_count)
      throw ValidationError("molecule '" + m.id + "' has " + std::to_string(m.labels.size()) + " labels, expected " +
                            std::to_string(ds.task_count));
    if (m.node_feats.size() != m.num_nodes * ds.feat_dim)
      throw ValidationError("molecule '" + m.id + "' has inconsistent node feature width");
    for (double y : m.labels) {
      if (std::isnan(y)) continue;
      if (!std::isfinite(y)) throw ValidationError("molecule '" + m.id + "' has a non-finite label");
      if (y != 0.0 && y != 1.0) binary = false;
    }
  }
  ds.task_kind = kind.value_or(binary ? TaskKind::classification : TaskKind::regression);
  if (ds.task_kind == TaskKind::classification && !binary)
    throw ValidationError("classification labels must be 0, 1 or null");
}

inline Dataset parse_dataset(std::istream& in, std::optional<TaskKind> kind = std::nullopt) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), lineno);
    }
    ds.molecules.push_back(detail::parse_molecule(j, lineno));
  }
  finalize_dataset(ds, kind);
  return ds;
}

inline Dataset load_dataset(const std::string& path, std::optional<TaskKind> kind = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return parse_dataset(in, kind);
}

inline std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  for (const Molecule& m : ds.molecules) {
    nlohmann::json j;
    j["id"] = m.id;
    nlohmann::json feats = nlohmann::json::array();
    for (std::size_t v = 0; v < m.num_nodes; ++v)
      feats.push_back(std::vector<double>(m.node_feats.begin() + static_cast<std::ptrdiff_t>(v * ds.feat_dim),
                                          m.node_feats.begin() + static_cast<std::ptrdiff_t>((v + 1) * ds.feat_dim)));
    j["node_feats"] = std::move(feats);
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [u, v] : m.edges) edges.push_back({u, v});
    j["edges"] = std::move(edges);
    nlohmann::json labels = nlohmann::json::array();
    for (double y : m.labels) labels.push_back(std::isnan(y) ? nlohmann::json(nullptr) : nlohmann::json(y));
    j["labels"] = std::move(labels);
    j["scaffold"] = m.scaffold ? nlohmann::json(*m.scaffold) : nlohmann::json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << dataset_to_jsonl(ds);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitScheme { random, scaffold, size };

inline SplitScheme parse_split_scheme(const std::string& s) {
  if (s == "random") return SplitScheme::random;
  if (s == "scaffold") return SplitScheme::scaffold;
  if (s == "size") return SplitScheme::size;
  throw ConfigError("split scheme: expected random|scaffold|size, got '" + s + "'");
}

inline std::string to_string(SplitScheme s) {
  switch (s) {
    case SplitScheme::random: return "random";
    case SplitScheme::scaffold: return "scaffold";
    case SplitScheme::size: return "size";
  }
  return "?";
}

using Fractions = std::array<double, 3>;

struct Split {
  std::vector<std::size_t> train, val, test;
  SplitScheme scheme = SplitScheme::random;
  Fractions fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
};

namespace detail {

// Cumulative cut points for an ordered index list.
inline std::array<std::size_t, 3> cut_points(std::size_t n, const Fractions& f) {
  constexpr double kSlack = 1e-9;
  const auto cut = [&](double frac) {
    return std::min(n, static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + kSlack)));
  };
  return {cut(f[0]), cut(f[0] + f[1]), cut(f[0] + f[1] + f[2])};
}

inline Split split_ordered(const std::vector<std::size_t>& order, const Fractions& f) {
  const auto [c1, c2, c3] = cut_points(order.size(), f);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(c1));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(c1), order.begin() + static_cast<std::ptrdiff_t>(c2));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(c2), order.begin() + static_cast<std::ptrdiff_t>(c3));
  return s;
}

}  // namespace detail

/// Partitions the dataset into train/val/test.
///
///   random:   seeded shuffle, then contiguous cuts.
///   size:     ascending node count (ties by id); smallest to train, largest to test.
///   scaffold: scaffold groups, largest first (ties by key), greedily assigned to
///             train until its quota, then val, then test.
inline Split split(const Dataset& ds, SplitScheme scheme, const Fractions& fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ValidationError("split: fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) throw ValidationError("split: fractions sum above 1");
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  Split out;
  switch (scheme) {
    case SplitScheme::random: {
      Rng rng(hash_combine(seed, 0x5b1));
      rng.shuffle(std::span<std::size_t>(order));
      out = detail::split_ordered(order, fractions);
      break;
    }
    case SplitScheme::size: {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Molecule& x = ds.molecules[a];
        const Molecule& y = ds.molecules[b];
        if (x.num_nodes != y.num_nodes) return x.num_nodes < y.num_nodes;
        return x.id < y.id;
      });
      out = detail::split_ordered(order, fractions);
      break;
    }
    case SplitScheme::scaffold: {
      std::map<std::string, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& key = ds.molecules[i].scaffold;
        if (!key) throw ValidationError("scaffold split: molecule '" + ds.molecules[i].id + "' has no scaffold key");
        groups[*key].push_back(i);
      }
      std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> sets;
      for (const auto& g : groups) sets.push_back(&g);
      std::stable_sort(sets.begin(), sets.end(), [](auto* a, auto* b) {
        if (a->second.size() != b->second.size()) return a->second.size() > b->second.size();
        return a->first < b->first;
      });
      const double dn = static_cast<double>(n);
      const double train_cut = fractions[0] * dn;
      const double val_cut = (fractions[0] + fractions[1]) * dn;
      const double test_cut = total * dn;
      for (auto* g : sets) {
        const auto& members = g->second;
        const double m = static_cast<double>(members.size());
        std::vector<std::size_t>* dest = nullptr;
        if (static_cast<double>(out.train.size()) + m <= train_cut + 1e-9) {
          dest = &out.train;
        } else if (static_cast<double>(out.train.size() + out.val.size()) + m <= val_cut + 1e-9) {
          dest = &out.val;
        } else if (static_cast<double>(out.train.size() + out.val.size() + out.test.size()) + m <= test_cut + 1e-9) {
          dest = &out.test;
        }
        if (dest) dest->insert(dest->end(), members.begin(), members.end());
      }
      break;
    }
  }
  out.scheme = scheme;
  out.fractions = fractions;
  out.seed = seed;
  return out;
}

inline nlohmann::json split_to_json(const Split& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

/// Uniform sample of n training indices without replacement, returned sorted.
inline std::vector<std::size_t> fewshot(const std::vector<std::size_t>& train, std::size_t n, std::uint64_t seed) {
  if (n > train.size())
    throw ValidationError("fewshot: requested " + std::to_string(n) + " of " + std::to_string(train.size()) +
                          " training molecules");
  std::vector<std::size_t> pool = train;
  Rng rng(hash_combine(seed, 0xf5));
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Packs the listed molecules (in order) into one GraphBatch.
inline GraphBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  GraphBatch b;
  b.graph_count = indices.size();
  b.task_count = ds.task_count;
  std::size_t nodes = 0;
  for (std::size_t i : indices) nodes += ds.molecules.at(i).num_nodes;
  std::vector<double> feats;
  feats.reserve(nodes * ds.feat_dim);
  std::uint32_t base = 0;
  for (std::size_t g = 0; g < indices.size(); ++g) {
    const Molecule& m = ds.molecules[indices[g]];
    feats.insert(feats.end(), m.node_feats.begin(), m.node_feats.end());
    for (std::size_t v = 0; v < m.num_nodes; ++v) b.segment.push_back(g);
    for (const auto& [u, v] : m.edges) {
      b.edges.emplace_back(base + u, base + v);
      b.edges.emplace_back(base + v, base + u);
    }
    for (double y : m.labels) {
      b.labels.push_back(y);
      b.label_mask.push_back(std::isnan(y) ? 0 : 1);
    }
    base += static_cast<std::uint32_t>(m.num_nodes);
  }
  b.node_feats = Tensor({nodes, ds.feat_dim}, std::move(feats));
  return b;
}

/// One epoch of batches: a per-(seed, epoch) shuffle, then chunks of
/// batch_size with the short remainder kept.
inline std::vector<GraphBatch> batches(const Dataset& ds, const std::vector<std::size_t>& indices,
                                       std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order = indices;
  Rng rng(hash_combine(hash_combine(seed, 0xba7c4), epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<GraphBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(ds, std::span<const std::size_t>(order).subspan(start, end - start)));
  }
  return out;
}

}  // namespace roft
