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
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "roft/data.hpp"
#include "roft/rng.hpp"

namespace roft {

/// Parameters of the planted-rule generator.
struct SynthSpec {
  std::size_t size = 400;
  std::size_t tasks = 1;
  std::uint64_t seed = 0;
  TaskKind kind = TaskKind::classification;
  std::size_t feat_dim = 8;
  std::size_t min_nodes = 6;
  std::size_t max_nodes = 20;
  std::size_t max_chords = 2;
  double noise = 0.1;         // regression label noise
  double missing_rate = 0.0;  // fraction of label cells set to null
  // Classification only: node features are redrawn (up to 100 times) until
  // every |s_t| >= margin, leaving a gap around the decision boundary.
  double margin = 0.1;
};

/// Random trees plus chords with Gaussian node features.
///
/// Each task t has a hidden unit vector w_t and s_t = w_t · mean(node features).
/// Classification labels are [s_t > 0]; regression labels are s_t + noise·N(0,1).
/// The scaffold key hashes (node count, chord count, max degree).
inline Dataset generate_dataset(const SynthSpec& spec) {
  if (spec.size == 0 || spec.tasks == 0 || spec.feat_dim == 0 || spec.min_nodes == 0 ||
      spec.max_nodes < spec.min_nodes)
    throw ValidationError("gen-data: invalid generator parameters");
  Rng rng(hash_combine(spec.seed, 0x5e7));

  std::vector<std::vector<double>> weights(spec.tasks, std::vector<double>(spec.feat_dim));
  for (auto& w : weights) {
    double norm = 0.0;
    for (double& x : w) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : w) x /= norm;
  }

  Dataset ds;
  ds.task_count = spec.tasks;
  ds.feat_dim = spec.feat_dim;
  ds.task_kind = spec.kind;
  for (std::size_t g = 0; g < spec.size; ++g) {
    Molecule m;
    char id[32];
    std::snprintf(id, sizeof id, "mol-%06zu", g);
    m.id = id;
    m.num_nodes = spec.min_nodes + rng.below(spec.max_nodes - spec.min_nodes + 1);
    std::set<Edge> present;
    std::vector<std::size_t> degree(m.num_nodes, 0);
    const auto add_edge = [&](std::uint32_t u, std::uint32_t v) {
      const Edge e{std::min(u, v), std::max(u, v)};
      if (u == v || !present.insert(e).second) return false;
      m.edges.push_back(e);
      ++degree[u];
      ++degree[v];
      return true;
    };
    for (std::uint32_t v = 1; v < m.num_nodes; ++v) add_edge(static_cast<std::uint32_t>(rng.below(v)), v);
    std::size_t chords = 0;
    const std::size_t want = m.num_nodes > 2 ? rng.below(spec.max_chords + 1) : 0;
    for (std::size_t attempt = 0; attempt < 8 * want && chords < want; ++attempt) {
      const auto u = static_cast<std::uint32_t>(rng.below(m.num_nodes));
      const auto v = static_cast<std::uint32_t>(rng.below(m.num_nodes));
      if (add_edge(u, v)) ++chords;
    }

    m.node_feats.resize(m.num_nodes * spec.feat_dim);
    std::vector<double> score(spec.tasks);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (double& x : m.node_feats) x = rng.normal();
      std::vector<double> mean(spec.feat_dim, 0.0);
      for (std::size_t v = 0; v < m.num_nodes; ++v)
        for (std::size_t j = 0; j < spec.feat_dim; ++j) mean[j] += m.node_feats[v * spec.feat_dim + j];
      for (double& x : mean) x /= static_cast<double>(m.num_nodes);
      bool clear = true;
      for (std::size_t t = 0; t < spec.tasks; ++t) {
        score[t] = 0.0;
        for (std::size_t j = 0; j < spec.feat_dim; ++j) score[t] += weights[t][j] * mean[j];
        clear = clear && std::abs(score[t]) >= spec.margin;
      }
      if (spec.kind == TaskKind::regression || clear) break;
    }

    for (std::size_t t = 0; t < spec.tasks; ++t) {
      const double s = score[t];
      double y = spec.kind == TaskKind::classification ? (s > 0.0 ? 1.0 : 0.0) : s + spec.noise * rng.normal();
      if (spec.missing_rate > 0.0 && rng.uniform() < spec.missing_rate) y = std::nan("");
      m.labels.push_back(y);
    }

    std::size_t max_degree = 0;
    for (std::size_t d : degree) max_degree = std::max(max_degree, d);
    const std::uint64_t h = hash_combine(hash_combine(m.num_nodes, chords), max_degree);
    char key[32];
    std::snprintf(key, sizeof key, "scf-%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
    m.scaffold = key;
    ds.molecules.push_back(std::move(m));
  }
  return ds;
}

}  // namespace roft
