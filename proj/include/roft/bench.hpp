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
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "roft/checkpoint.hpp"
#include "roft/data.hpp"
#include "roft/metrics.hpp"
#include "roft/strategies.hpp"

namespace roft {

struct DatasetSpec {
  std::string name;
  std::string path;
  std::optional<TaskKind> kind;
};

struct StrategySpec {
  std::string name;
  nlohmann::json base = nlohmann::json::object();
  // field -> candidate values; the cartesian product is searched on validation.
  std::map<std::string, std::vector<nlohmann::json>> grid;
};

// Few-shot size, or the full training split when empty ("non").
struct Shot {
  std::optional<std::size_t> n;
  std::string label() const { return n ? std::to_string(*n) : "non"; }
};

struct BenchConfig {
  std::map<std::string, std::string> checkpoints;  // model name -> path
  std::vector<DatasetSpec> datasets;
  std::vector<StrategySpec> strategies;
  std::vector<SplitScheme> splits{SplitScheme::scaffold};
  std::vector<Shot> shots{Shot{}};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  Fractions fractions{0.8, 0.1, 0.1};

  /// Parses the bench JSON; relative paths resolve against `base_dir`.
  static BenchConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    const auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).string();
    };
    BenchConfig c;
    try {
      for (const auto& [name, path] : j.at("checkpoints").items()) c.checkpoints[name] = resolve(path.get<std::string>());
      if (c.checkpoints.empty()) throw ConfigError("field 'checkpoints' is empty");
      for (const auto& d : j.at("datasets")) {
        DatasetSpec ds;
        ds.path = resolve(d.at("path").get<std::string>());
        ds.name = d.value("name", std::filesystem::path(ds.path).stem().string());
        if (d.contains("task_kind")) ds.kind = parse_task_kind(d.at("task_kind").get<std::string>());
        c.datasets.push_back(std::move(ds));
      }
      for (const auto& s : j.at("strategies")) {
        StrategySpec spec;
        spec.base = s.value("base", nlohmann::json::object());
        if (s.contains("kind")) spec.base["kind"] = s.at("kind");
        if (!spec.base.contains("kind")) throw ConfigError("strategy entry: field 'kind' is required");
        parse_strategy_kind(spec.base.at("kind").get<std::string>());
        spec.name = s.value("name", spec.base.at("kind").get<std::string>());
        if (s.contains("grid"))
          for (const auto& [field, values] : s.at("grid").items()) {
            if (!values.is_array() || values.empty())
              throw ConfigError("grid field '" + field + "' must be a non-empty array");
            spec.grid[field] = values.get<std::vector<nlohmann::json>>();
          }
        c.strategies.push_back(std::move(spec));
      }
      if (j.contains("splits")) {
        c.splits.clear();
        for (const auto& s : j.at("splits")) c.splits.push_back(parse_split_scheme(s.get<std::string>()));
      }
      if (j.contains("shots")) {
        c.shots.clear();
        for (const auto& s : j.at("shots")) {
          if (s.is_string() && s.get<std::string>() == "non")
            c.shots.push_back(Shot{});
          else
            c.shots.push_back(Shot{s.get<std::size_t>()});
        }
      }
      if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      if (j.contains("fractions")) {
        const auto f = j.at("fractions").get<std::vector<double>>();
        if (f.size() != 3) throw ConfigError("field 'fractions' needs three values");
        c.fractions = {f[0], f[1], f[2]};
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bench config: ") + e.what());
    }
    if (c.datasets.empty() || c.strategies.empty() || c.seeds.empty())
      throw ConfigError("bench config needs datasets, strategies and seeds");
    return c;
  }

  std::vector<std::string> referenced_paths() const {
    std::vector<std::string> out;
    for (const auto& [n, p] : checkpoints) out.push_back(p);
    for (const auto& d : datasets) out.push_back(d.path);
    return out;
  }
};

struct CellKey {
  std::string model, strategy, dataset, split, shot;
  std::uint64_t seed = 0;
};

struct ResultCell {
  CellKey key;
  MetricKind metric = MetricKind::auc;
  double value = 0.0;      // test metric at the selected grid point
  double val_value = 0.0;  // its validation metric
  nlohmann::json selected;  // chosen strategy config
};

struct CellFailure {
  CellKey key;
  std::string message;
};

struct SummaryRow {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

/// One table: a model × split × shot × metric scenario across datasets.
struct ReportGroup {
  std::string model, split, shot;
  MetricKind metric = MetricKind::auc;
  std::vector<std::string> strategies;  // config order
  std::vector<std::string> datasets;    // config order
  std::map<std::string, std::map<std::string, SummaryRow>> summary;  // strategy -> dataset
  std::optional<std::map<std::string, Aggregate>> aggregates;
  std::string note;  // why aggregates are absent
};

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline nlohmann::json key_json(const CellKey& k) {
  return {{"model", k.model}, {"strategy", k.strategy}, {"dataset", k.dataset},
          {"split", k.split}, {"shot", k.shot},         {"seed", k.seed}};
}

}  // namespace detail

struct BenchReport {
  std::vector<ResultCell> cells;
  std::vector<CellFailure> failures;
  std::vector<ReportGroup> groups;

  std::string to_csv() const {
    std::string out = "model,strategy,dataset,split,shot,seed,metric,value\n";
    for (const auto& c : cells) {
      out += detail::csv_escape(c.key.model) + ',' + detail::csv_escape(c.key.strategy) + ',' +
             detail::csv_escape(c.key.dataset) + ',' + c.key.split + ',' + c.key.shot + ',' + std::to_string(c.key.seed) +
             ',' + to_string(c.metric) + ',' + detail::fmt(c.value) + '\n';
    }
    return out;
  }

  std::string to_markdown() const {
    std::ostringstream md;
    md << "# Fine-tuning benchmark\n\n"
       << "Cells are mean ± std over seeds of the test metric at the best-validation setting. "
       << "AVG-F drops one maximum and one minimum; AVG-R averages per-dataset ranks (ties share the mid-rank); "
       << "AVG-R* ranks strategies by their mean per-dataset min-max normalized score "
       << "(RMSE negated before normalizing). Best value per column in bold.\n";
    for (const auto& g : groups) {
      md << "\n## " << g.model << " / " << g.split << " / shot " << g.shot << " (" << to_string(g.metric) << ")\n\n";
      md << "| Strategy |";
      for (const auto& d : g.datasets) md << ' ' << d << " |";
      if (g.aggregates) md << " AVG | AVG-F | AVG-R | AVG-R* |";
      md << "\n|---|";
      for (std::size_t i = 0; i < g.datasets.size(); ++i) md << "---|";
      if (g.aggregates) md << "---|---|---|---|";
      md << '\n';

      const bool hib = higher_is_better(g.metric);
      std::map<std::string, double> best_col;
      for (const auto& d : g.datasets)
        for (const auto& s : g.strategies) {
          auto it = g.summary.find(s);
          if (it == g.summary.end() || !it->second.count(d)) continue;
          const double v = it->second.at(d).mean;
          if (!best_col.count(d) || (hib ? v > best_col[d] : v < best_col[d])) best_col[d] = v;
        }
      const auto bold = [](const std::string& s, bool on) { return on ? "**" + s + "**" : s; };
      std::map<std::string, double> best_agg;
      if (g.aggregates)
        for (const auto& [s, a] : *g.aggregates) {
          const auto upd = [&](const std::string& k, double v, bool higher) {
            if (!best_agg.count(k) || (higher ? v > best_agg[k] : v < best_agg[k])) best_agg[k] = v;
          };
          upd("avg", a.avg, hib);
          if (a.avg_f) upd("avg_f", *a.avg_f, hib);
          upd("avg_r", a.avg_r, false);
          upd("avg_r_star", a.avg_r_star, false);
        }
      for (const auto& s : g.strategies) {
        md << "| " << s << " |";
        for (const auto& d : g.datasets) {
          auto it = g.summary.find(s);
          if (it == g.summary.end() || !it->second.count(d)) {
            md << " – |";
            continue;
          }
          const SummaryRow& r = it->second.at(d);
          md << ' ' << bold(detail::fmt(r.mean, 4) + " ± " + detail::fmt(r.std, 4), r.mean == best_col[d]) << " |";
        }
        if (g.aggregates) {
          const Aggregate& a = g.aggregates->at(s);
          md << ' ' << bold(detail::fmt(a.avg, 4), a.avg == best_agg["avg"]) << " |";
          md << ' ' << (a.avg_f ? bold(detail::fmt(*a.avg_f, 4), *a.avg_f == best_agg["avg_f"]) : "–") << " |";
          md << ' ' << bold(detail::fmt(a.avg_r, 2), a.avg_r == best_agg["avg_r"]) << " |";
          md << ' ' << bold(detail::fmt(a.avg_r_star, 2), a.avg_r_star == best_agg["avg_r_star"]) << " |";
        }
        md << '\n';
      }
      if (!g.note.empty()) md << "\n_" << g.note << "_\n";
    }
    if (!failures.empty()) {
      md << "\n## Failed cells\n\n";
      for (const auto& f : failures)
        md << "- " << f.key.model << " / " << f.key.strategy << " / " << f.key.dataset << " / " << f.key.split
           << " / shot " << f.key.shot << " / seed " << f.key.seed << ": " << f.message << '\n';
    }
    return md.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : cells) {
      auto k = detail::key_json(c.key);
      k["metric"] = to_string(c.metric);
      k["value"] = c.value;
      k["val_value"] = c.val_value;
      k["selected"] = c.selected;
      j["cells"].push_back(std::move(k));
    }
    j["failures"] = nlohmann::json::array();
    for (const auto& f : failures) {
      auto k = detail::key_json(f.key);
      k["message"] = f.message;
      j["failures"].push_back(std::move(k));
    }
    j["groups"] = nlohmann::json::array();
    for (const auto& g : groups) {
      nlohmann::json gj{{"model", g.model}, {"split", g.split}, {"shot", g.shot}, {"metric", to_string(g.metric)}};
      for (const auto& [s, row] : g.summary)
        for (const auto& [d, r] : row) gj["summary"][s][d] = {{"mean", r.mean}, {"std", r.std}, {"n", r.n}};
      if (g.aggregates)
        for (const auto& [s, a] : *g.aggregates)
          gj["aggregates"][s] = {{"avg", a.avg},
                                 {"avg_f", a.avg_f ? nlohmann::json(*a.avg_f) : nlohmann::json(nullptr)},
                                 {"avg_r", a.avg_r},
                                 {"avg_r_star", a.avg_r_star}};
      if (!g.note.empty()) gj["note"] = g.note;
      j["groups"].push_back(std::move(gj));
    }
    return j;
  }
};

/// Cartesian product of a grid, keys in sorted order, first key slowest.
inline std::vector<nlohmann::json> expand_grid(const StrategySpec& spec) {
  std::vector<nlohmann::json> points{spec.base};
  for (const auto& [field, values] : spec.grid) {
    std::vector<nlohmann::json> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        nlohmann::json q = p;
        q[field] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

struct BenchInputs {
  std::map<std::string, Checkpoint> checkpoints;
  std::map<std::string, Dataset> datasets;

  static BenchInputs load(const BenchConfig& cfg) {
    BenchInputs in;
    for (const auto& [name, path] : cfg.checkpoints) in.checkpoints.emplace(name, load_checkpoint(path));
    for (const auto& d : cfg.datasets) in.datasets.emplace(d.name, load_dataset(d.path, d.kind));
    return in;
  }
};

namespace detail {

struct CellOutcome {
  std::optional<ResultCell> cell;
  std::optional<CellFailure> failure;
};

// One (model, strategy, dataset, split, shot, seed) cell: every grid point is
// run, the best validation point wins, and its test metric is recorded.
inline CellOutcome run_cell(const CellKey& key, const StrategySpec& spec, const ParamSet& pretrained,
                            const Dataset& ds, SplitScheme scheme, const Shot& shot, const Fractions& fractions) {
  try {
    const Split sp = split(ds, scheme, fractions, key.seed);
    FinetuneData data{&ds, shot.n ? fewshot(sp.train, *shot.n, key.seed) : sp.train, sp.val, sp.test};
    const MetricKind mk = metric_for(ds.task_kind);
    std::map<std::string, RunArtifacts> base_runs;  // shared full runs for wise/dwise
    std::optional<RunArtifacts> best;
    nlohmann::json best_cfg;
    for (nlohmann::json point : expand_grid(spec)) {
      point["seed"] = key.seed;
      const StrategyConfig cfg = StrategyConfig::from_json(point);
      RunArtifacts run;
      if (cfg.kind == StrategyKind::wise || cfg.kind == StrategyKind::dwise) {
        StrategyConfig full = cfg;
        full.kind = StrategyKind::full;
        nlohmann::json base_key = full.to_json();
        for (const char* f : {"alpha", "alpha_init", "alpha_lr", "alpha_epochs"}) base_key.erase(f);
        const std::string k = base_key.dump();
        if (!base_runs.count(k)) base_runs.emplace(k, finetune(pretrained, data, full));
        const RunArtifacts& base = base_runs.at(k);
        run = cfg.kind == StrategyKind::wise ? apply_wise(pretrained.encoder_only(), base, cfg.alpha, data)
                                             : apply_dwise(pretrained.encoder_only(), base, cfg, data);
      } else {
        run = finetune(pretrained, data, cfg);
      }
      if (!best || better(run.val_metric, best->val_metric, mk)) {
        best = std::move(run);
        best_cfg = cfg.to_json();
      }
    }
    if (std::isnan(best->test_metric))
      return {std::nullopt, CellFailure{key, "test metric undefined (" + to_string(mk) + ")"}};
    ResultCell cell{key, mk, best->test_metric, best->val_metric, best_cfg};
    if (best->alphas) cell.selected["alphas"] = *best->alphas;
    return {cell, std::nullopt};
  } catch (const std::exception& e) {
    return {std::nullopt, CellFailure{key, e.what()}};
  }
}

}  // namespace detail

/// Runs the whole (model × strategy × dataset × split × shot × seed) matrix on
/// up to `workers` threads and builds the report. Cell order in the report is
/// the config order, independent of scheduling.
inline BenchReport run_matrix(const BenchConfig& cfg, const BenchInputs& inputs, std::size_t workers = 1) {
  struct Job {
    CellKey key;
    const StrategySpec* spec;
    const ParamSet* pretrained;
    const Dataset* ds;
    SplitScheme scheme;
    Shot shot;
  };
  std::vector<Job> jobs;
  for (const auto& [model, ck] : inputs.checkpoints)
    for (SplitScheme scheme : cfg.splits)
      for (const Shot& shot : cfg.shots)
        for (const auto& spec : cfg.strategies)
          for (const auto& dspec : cfg.datasets)
            for (std::uint64_t seed : cfg.seeds)
              jobs.push_back({CellKey{model, spec.name, dspec.name, to_string(scheme), shot.label(), seed}, &spec,
                              &ck.params, &inputs.datasets.at(dspec.name), scheme, shot});

  std::vector<detail::CellOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& j = jobs[i];
      outcomes[i] = detail::run_cell(j.key, *j.spec, *j.pretrained, *j.ds, j.scheme, j.shot, cfg.fractions);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  BenchReport report;
  for (auto& o : outcomes) {
    if (o.cell) report.cells.push_back(std::move(*o.cell));
    if (o.failure) report.failures.push_back(std::move(*o.failure));
  }

  // Group tables by scenario and metric kind.
  for (const auto& [model, ck] : inputs.checkpoints)
    for (SplitScheme scheme : cfg.splits)
      for (const Shot& shot : cfg.shots)
        for (MetricKind mk : {MetricKind::auc, MetricKind::rmse}) {
          ReportGroup g{model, to_string(scheme), shot.label(), mk, {}, {}, {}, std::nullopt, {}};
          for (const auto& d : cfg.datasets)
            if (metric_for(inputs.datasets.at(d.name).task_kind) == mk) g.datasets.push_back(d.name);
          if (g.datasets.empty()) continue;
          for (const auto& s : cfg.strategies) g.strategies.push_back(s.name);
          std::map<std::string, std::map<std::string, std::vector<double>>> vals;
          for (const auto& c : report.cells)
            if (c.key.model == model && c.key.split == g.split && c.key.shot == g.shot && c.metric == mk)
              vals[c.key.strategy][c.key.dataset].push_back(c.value);
          ScoreTable table;
          for (const auto& [s, row] : vals)
            for (const auto& [d, v] : row) {
              SummaryRow r;
              r.n = v.size();
              r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(r.n);
              double ss = 0.0;
              for (double x : v) ss += (x - r.mean) * (x - r.mean);
              r.std = r.n > 1 ? std::sqrt(ss / static_cast<double>(r.n - 1)) : 0.0;
              g.summary[s][d] = r;
              table[s][d] = r.mean;
            }
          bool complete = true;
          for (const auto& s : g.strategies)
            for (const auto& d : g.datasets)
              if (!table.count(s) || !table[s].count(d)) complete = false;
          if (g.datasets.size() < 3) {
            g.note = "aggregates omitted: fewer than 3 datasets";
          } else if (!complete) {
            g.note = "aggregates omitted: incomplete (failed cells)";
          } else {
            g.aggregates = aggregate(table, mk);
          }
          report.groups.push_back(std::move(g));
        }
  return report;
}

}  // namespace roft
