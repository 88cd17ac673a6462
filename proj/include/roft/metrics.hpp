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
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roft/error.hpp"

namespace roft {

enum class MetricKind { auc, rmse };

inline std::string to_string(MetricKind k) { return k == MetricKind::auc ? "auc" : "rmse"; }

inline bool higher_is_better(MetricKind k) { return k == MetricKind::auc; }

// Is `a` strictly better than `b`? NaN is never better.
inline bool better(double a, double b, MetricKind k) {
  if (std::isnan(a)) return false;
  if (std::isnan(b)) return true;
  return higher_is_better(k) ? a > b : a < b;
}

/// Mann-Whitney AUC of one task: P(s_pos > s_neg) + ½·P(tie), computed from
/// mid-ranks. Returns nullopt when the task lacks a positive or a negative.
inline std::optional<double> task_auc(std::span<const double> scores, std::span<const double> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1.0) {
        pos_rank_sum += mid;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// Mean per-task ROC-AUC over a (rows x tasks) score matrix, using only cells
/// with mask != 0. Tasks without both classes are skipped.
/// Throws UndefinedMetricError when every task is skipped.
inline double roc_auc(std::span<const double> scores, std::span<const double> labels,
                      std::span<const std::uint8_t> mask, std::size_t tasks) {
  if (tasks == 0 || scores.size() != labels.size() || scores.size() != mask.size() || scores.size() % tasks)
    throw ContractError("roc_auc: score/label/mask shapes disagree");
  const std::size_t rows = scores.size() / tasks;
  double total = 0.0;
  std::size_t valid = 0;
  std::vector<double> s, y;
  for (std::size_t t = 0; t < tasks; ++t) {
    s.clear();
    y.clear();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * tasks + t;
      if (!mask[i]) continue;
      if (labels[i] != 0.0 && labels[i] != 1.0) throw ContractError("roc_auc: labels must be 0 or 1");
      s.push_back(scores[i]);
      y.push_back(labels[i]);
    }
    if (auto a = task_auc(s, y)) {
      total += *a;
      ++valid;
    }
  }
  if (valid == 0) throw UndefinedMetricError("roc_auc: no task has both classes");
  return total / static_cast<double>(valid);
}

/// Root mean squared error over cells with mask != 0.
inline double rmse(std::span<const double> preds, std::span<const double> targets, std::span<const std::uint8_t> mask) {
  if (preds.size() != targets.size() || preds.size() != mask.size()) throw ContractError("rmse: size mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!mask[i]) continue;
    const double e = preds[i] - targets[i];
    total += e * e;
    ++count;
  }
  if (count == 0) throw UndefinedMetricError("rmse: no observed cells");
  return std::sqrt(total / static_cast<double>(count));
}

struct BestEpoch {
  std::size_t epoch = 0;
  double val = std::numeric_limits<double>::quiet_NaN();
  double test = std::numeric_limits<double>::quiet_NaN();
};

/// Best validation epoch (argmax AUC / argmin RMSE, earliest on ties, NaN
/// entries ignored) and the paired test value.
inline BestEpoch select_best(std::span<const double> val, std::span<const double> test, MetricKind kind) {
  if (val.empty() || val.size() != test.size()) throw ContractError("select_best: curves must be non-empty and paired");
  BestEpoch best{0, val[0], test[0]};
  for (std::size_t e = 1; e < val.size(); ++e)
    if (better(val[e], best.val, kind)) best = {e, val[e], test[e]};
  return best;
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

/// strategy -> dataset -> value (already averaged over seeds).
using ScoreTable = std::map<std::string, std::map<std::string, double>>;

struct Aggregate {
  double avg = 0.0;
  std::optional<double> avg_f;  // needs >= 3 datasets
  double avg_r = 0.0;
  double avg_r_star = 0.0;
};

/// Mean of the values after dropping exactly one maximum and one minimum.
inline double trimmed_mean(std::vector<double> v) {
  if (v.size() < 3) throw ValidationError("AVG-F needs at least 3 values");
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin() + 1, v.end() - 1, 0.0) / static_cast<double>(v.size() - 2);
}

/// Ranks (1 = best) with ties sharing the mean of their positions. Values
/// within `tie_tol` of a group's first member join that group.
inline std::vector<double> midranks(const std::vector<double>& v, bool higher_better, double tie_tol = 0.0) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return higher_better ? v[a] > v[b] : v[a] < v[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(v[order[j]] - v[order[i]]) <= tie_tol) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
    i = j;
  }
  return rank;
}

/// AVG, AVG-F, AVG-R and AVG-R* per strategy.
///
/// AVG-R* ranks strategies by their mean per-dataset min-max normalized score
/// (RMSE negated first so higher is better; a constant column normalizes to 1).
inline std::map<std::string, Aggregate> aggregate(const ScoreTable& table, MetricKind kind) {
  if (table.empty()) throw ValidationError("aggregate: no strategies");
  std::vector<std::string> strategies, datasets;
  for (const auto& [s, row] : table) strategies.push_back(s);
  for (const auto& [s, row] : table)
    for (const auto& [d, v] : row)
      if (std::find(datasets.begin(), datasets.end(), d) == datasets.end()) datasets.push_back(d);
  std::sort(datasets.begin(), datasets.end());
  for (const auto& s : strategies)
    for (const auto& d : datasets)
      if (!table.at(s).count(d))
        throw ValidationError("aggregate: missing value for strategy '" + s + "' on dataset '" + d + "'");

  const bool hib = higher_is_better(kind);
  std::map<std::string, Aggregate> out;
  std::vector<double> rank_sum(strategies.size(), 0.0), norm_sum(strategies.size(), 0.0);
  for (const auto& d : datasets) {
    std::vector<double> col;
    for (const auto& s : strategies) col.push_back(table.at(s).at(d));
    const auto r = midranks(col, hib);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double& v : col) {
      if (!hib) v = -v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (std::size_t i = 0; i < strategies.size(); ++i) {
      rank_sum[i] += r[i];
      norm_sum[i] += hi > lo ? (col[i] - lo) / (hi - lo) : 1.0;
    }
  }
  const double nd = static_cast<double>(datasets.size());
  std::vector<double> norm_mean(strategies.size());
  for (std::size_t i = 0; i < strategies.size(); ++i) norm_mean[i] = norm_sum[i] / nd;
  // Means of equal normalized columns can differ in the last bits depending on
  // summation order; treat those as ties.
  const auto star = midranks(norm_mean, true, 1e-12);
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    std::vector<double> vals;
    for (const auto& d : datasets) vals.push_back(table.at(strategies[i]).at(d));
    Aggregate a;
    a.avg = std::accumulate(vals.begin(), vals.end(), 0.0) / nd;
    if (vals.size() >= 3) a.avg_f = trimmed_mean(vals);
    a.avg_r = rank_sum[i] / nd;
    a.avg_r_star = star[i];
    out.emplace(strategies[i], a);
  }
  return out;
}

}  // namespace roft
