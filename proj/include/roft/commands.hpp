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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "roft/bench.hpp"
#include "roft/checkpoint.hpp"
#include "roft/data.hpp"
#include "roft/gradsuite.hpp"
#include "roft/pretrain.hpp"
#include "roft/quadlab.hpp"
#include "roft/strategies.hpp"
#include "roft/synth.hpp"

namespace roft::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kSuccess = 0, kVerificationFailed = 1, kConfigError = 2, kExecutionError = 3 };

struct CommonOptions {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, v] : j.items())
    if (!known.count(key)) throw ConfigError(where + ": unknown field '" + key + "'");
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).string();
}

inline void require_exists(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw IoError(what + " not found: '" + path + "'");
}

inline fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory '" + out + "'");
  return fs::path(out);
}

inline void write_text(const fs::path& path, const std::string& text) { write_file(path.string(), text); }

inline std::string jsonl(const nlohmann::json& array) {
  std::string out;
  for (const auto& line : array) out += line.dump() + '\n';
  return out;
}

inline std::optional<TaskKind> optional_kind(const nlohmann::json& j) {
  if (!j.contains("task_kind") || j.at("task_kind").is_null()) return std::nullopt;
  return parse_task_kind(j.at("task_kind").get<std::string>());
}

// Maps library exceptions onto exit codes and reports them on stderr.
template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExecutionError;
  }
}

}  // namespace detail

/// pretrain: {dataset, task_kind?, paradigm, architecture{hidden, layers},
/// mask_rate, gamma, epochs, learning_rate, batch_size, dropout_rate, seed}.
/// Writes checkpoint.ckpt and pretrain_log.jsonl.
inline int cmd_pretrain(const CommonOptions& opt) {
  return detail::guarded([&] {
    const nlohmann::json j = detail::read_json_file(opt.config);
    detail::reject_unknown(j,
                           {"dataset", "task_kind", "paradigm", "architecture", "mask_rate", "gamma", "epochs",
                            "learning_rate", "batch_size", "dropout_rate", "seed"},
                           "pretrain config");
    const fs::path base = fs::path(opt.config).parent_path();
    const std::string dataset = detail::resolve(base, j.at("dataset").get<std::string>());
    detail::require_exists(dataset, "dataset");

    PretrainConfig cfg;
    cfg.paradigm = parse_paradigm(j.value("paradigm", std::string("ssl")));
    cfg.mask_rate = j.value("mask_rate", cfg.mask_rate);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    cfg.seed = opt.seed.value_or(j.value("seed", cfg.seed));
    cfg.validate();
    GinConfig arch;
    if (j.contains("architecture")) {
      const auto& a = j.at("architecture");
      detail::reject_unknown(a, {"hidden", "layers"}, "architecture");
      arch.hidden = a.value("hidden", arch.hidden);
      arch.layers = a.value("layers", arch.layers);
    }
    if (arch.hidden == 0 || arch.layers == 0) throw ConfigError("architecture: hidden and layers must be >= 1");
    const fs::path out = detail::prepare_out(opt.out);

    const Dataset ds = load_dataset(dataset, detail::optional_kind(j));
    const PretrainResult r =
        cfg.paradigm == Paradigm::ssl ? pretrain_ssl(ds, arch, cfg) : pretrain_supervised(ds, arch, cfg);
    save_checkpoint((out / "checkpoint.ckpt").string(), r.checkpoint.params, r.checkpoint.meta);
    detail::write_text(out / "pretrain_log.jsonl", detail::jsonl(r.log_json()));
    if (r.skipped_rows) std::cerr << "note: " << r.skipped_rows << " zero-norm target rows skipped\n";
    return int{kSuccess};
  });
}

/// finetune: {checkpoint, dataset, task_kind?, split, fractions, shot, seed,
/// strategy{...}}. Writes finetuned.ckpt, run.json, finetune_log.jsonl,
/// split.json and, for interpolating strategies, alphas.json.
inline int cmd_finetune(const CommonOptions& opt) {
  return detail::guarded([&] {
    const nlohmann::json j = detail::read_json_file(opt.config);
    detail::reject_unknown(j, {"checkpoint", "dataset", "task_kind", "split", "fractions", "shot", "seed", "strategy"},
                           "finetune config");
    const fs::path base = fs::path(opt.config).parent_path();
    const std::string ckpt_path = detail::resolve(base, j.at("checkpoint").get<std::string>());
    const std::string dataset = detail::resolve(base, j.at("dataset").get<std::string>());
    detail::require_exists(ckpt_path, "checkpoint");
    detail::require_exists(dataset, "dataset");

    const std::uint64_t seed = opt.seed.value_or(j.value("seed", std::uint64_t{0}));
    nlohmann::json sj = j.at("strategy");
    if (!sj.is_object()) throw ConfigError("field 'strategy' must be an object");
    sj["seed"] = seed;
    const StrategyConfig cfg = StrategyConfig::from_json(sj);
    const SplitScheme scheme = parse_split_scheme(j.value("split", std::string("scaffold")));
    Fractions fractions{0.8, 0.1, 0.1};
    if (j.contains("fractions")) {
      const auto f = j.at("fractions").get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("field 'fractions' needs three values");
      fractions = {f[0], f[1], f[2]};
    }
    std::optional<std::size_t> shot;
    if (j.contains("shot") && !(j.at("shot").is_string() && j.at("shot").get<std::string>() == "non"))
      shot = j.at("shot").get<std::size_t>();
    const fs::path out = detail::prepare_out(opt.out);

    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset ds = load_dataset(dataset, detail::optional_kind(j));
    const Split sp = split(ds, scheme, fractions, seed);
    FinetuneData data{&ds, shot ? fewshot(sp.train, *shot, seed) : sp.train, sp.val, sp.test};
    const RunArtifacts run = finetune(ck.params, data, cfg);

    CheckpointMeta meta = ck.meta;
    meta.architecture = infer_config(run.final_params);
    meta.strategy = to_string(cfg.kind);
    meta.tasks = ds.task_count;
    save_checkpoint((out / "finetuned.ckpt").string(), run.final_params, meta);

    nlohmann::json split_json = split_to_json(sp);
    if (shot) split_json["fewshot_train"] = data.train;
    detail::write_text(out / "split.json", split_json.dump(2) + '\n');
    detail::write_text(out / "finetune_log.jsonl", detail::jsonl(run.train_log));
    nlohmann::json rj{{"strategy", cfg.to_json()},
                      {"pretrain_paradigm", ck.meta.paradigm},
                      {"split", to_string(scheme)},
                      {"shot", shot ? nlohmann::json(*shot) : nlohmann::json("non")},
                      {"metric", to_string(run.metric)},
                      {"best_epoch", run.best_epoch},
                      {"val_metric", run.val_metric},
                      {"test_metric", run.test_metric},
                      {"epoch_val_metric", run.epoch_val_metric},
                      {"epoch_test_metric", run.epoch_test_metric}};
    if (run.alphas) {
      rj["alphas"] = *run.alphas;
      detail::write_text(out / "alphas.json", nlohmann::json{{"alphas", *run.alphas}}.dump(2) + '\n');
    }
    detail::write_text(out / "run.json", rj.dump(2) + '\n');
    return int{kSuccess};
  });
}

inline std::size_t bench_workers() {
  const char* env = std::getenv("ROFT_WORKERS");
  if (!env || !*env) return 1;
  try {
    const long v = std::stol(env);
    if (v < 1) throw ConfigError("ROFT_WORKERS must be >= 1");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("ROFT_WORKERS is not a number: '") + env + "'");
  }
}

/// bench: writes results.csv, report.md and report.json. `--seed` replaces
/// the configured seed list with that single seed.
inline int cmd_bench(const CommonOptions& opt) {
  return detail::guarded([&] {
    BenchConfig cfg =
        BenchConfig::from_json(detail::read_json_file(opt.config), fs::path(opt.config).parent_path());
    if (opt.seed) cfg.seeds = {*opt.seed};
    for (const auto& [name, path] : cfg.checkpoints) detail::require_exists(path, "checkpoint '" + name + "'");
    for (const auto& d : cfg.datasets) detail::require_exists(d.path, "dataset '" + d.name + "'");
    const std::size_t workers = bench_workers();
    const fs::path out = detail::prepare_out(opt.out);

    const BenchReport report = run_matrix(cfg, BenchInputs::load(cfg), workers);
    detail::write_text(out / "results.csv", report.to_csv());
    detail::write_text(out / "report.md", report.to_markdown());
    detail::write_text(out / "report.json", report.to_json().dump(2) + '\n');
    for (const auto& f : report.failures)
      std::cerr << "failed cell " << f.key.strategy << '/' << f.key.dataset << " seed " << f.key.seed << ": "
                << f.message << '\n';
    return int{kSuccess};
  });
}

struct Prop1Options {
  std::size_t dim = 8;
  std::size_t instances = 20;
  double tolerance = 1e-6;
};

/// verify prop1: one JSON record per (instance, δ) on stdout and in
/// prop1.jsonl; exit 1 if any discrepancy reaches the tolerance.
inline int cmd_verify_prop1(const CommonOptions& opt, const Prop1Options& p, std::ostream& os = std::cout) {
  return detail::guarded([&] {
    if (p.dim == 0 || p.dim > 32) throw ConfigError("--dim must lie in [1, 32]");
    const fs::path out = detail::prepare_out(opt.out);
    const std::uint64_t seed0 = opt.seed.value_or(0);
    std::string lines;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.instances; ++i)
      for (const VerifyRecord& r : verify_records(p.dim, seed0 + i, delta_grid())) {
        lines += r.to_json().dump() + '\n';
        worst = std::max(worst, r.error);
      }
    os << lines;
    detail::write_text(out / "prop1.jsonl", lines);
    const bool ok = worst < p.tolerance;
    std::cerr << "prop1: max error " << worst << (ok ? " (pass)" : " (FAIL)") << '\n';
    return int{ok ? kSuccess : kVerificationFailed};
  });
}

struct GradcheckOptions {
  std::size_t configs = 50;
  double tolerance = 1e-4;
  bool inject_wrong_sign = false;
};

/// verify gradcheck: finite-difference audit of every loss and penalty.
inline int cmd_verify_gradcheck(const CommonOptions& opt, const GradcheckOptions& g, std::ostream& os = std::cout) {
  return detail::guarded([&] {
    bool ok = true;
    for (const auto& name : gradient_suite_cases()) {
      const GradCheckResult r = run_gradient_check(name, g.configs, opt.seed.value_or(0), 1e-5, g.inject_wrong_sign);
      const bool pass = r.max_relative_error < g.tolerance;
      ok = ok && pass;
      os << nlohmann::json{{"name", r.name},
                           {"configs", r.configs},
                           {"max_relative_error", r.max_relative_error},
                           {"pass", pass}}
                .dump()
         << '\n';
    }
    return int{ok ? kSuccess : kVerificationFailed};
  });
}

struct GenDataOptions {
  std::optional<std::size_t> size, tasks;
  std::optional<std::string> kind;
};

/// gen-data: flags override an optional JSON spec; writes dataset.jsonl.
inline int cmd_gen_data(const CommonOptions& opt, const GenDataOptions& g) {
  return detail::guarded([&] {
    SynthSpec spec;
    if (!opt.config.empty()) {
      const nlohmann::json j = detail::read_json_file(opt.config);
      detail::reject_unknown(j,
                             {"size", "tasks", "seed", "kind", "feat_dim", "min_nodes", "max_nodes", "max_chords",
                              "noise", "missing_rate", "margin"},
                             "gen-data config");
      spec.size = j.value("size", spec.size);
      spec.tasks = j.value("tasks", spec.tasks);
      spec.seed = j.value("seed", spec.seed);
      if (j.contains("kind")) spec.kind = parse_task_kind(j.at("kind").get<std::string>());
      spec.feat_dim = j.value("feat_dim", spec.feat_dim);
      spec.min_nodes = j.value("min_nodes", spec.min_nodes);
      spec.max_nodes = j.value("max_nodes", spec.max_nodes);
      spec.max_chords = j.value("max_chords", spec.max_chords);
      spec.noise = j.value("noise", spec.noise);
      spec.missing_rate = j.value("missing_rate", spec.missing_rate);
      spec.margin = j.value("margin", spec.margin);
    }
    if (g.size) spec.size = *g.size;
    if (g.tasks) spec.tasks = *g.tasks;
    if (g.kind) spec.kind = parse_task_kind(*g.kind);
    if (opt.seed) spec.seed = *opt.seed;
    const fs::path out = detail::prepare_out(opt.out);
    save_dataset((out / "dataset.jsonl").string(), generate_dataset(spec));
    return int{kSuccess};
  });
}

}  // namespace roft::cli
