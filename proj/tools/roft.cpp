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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "roft/commands.hpp"

int main(int argc, char** argv) {
  using namespace roft::cli;
  CLI::App app{"roft: robust fine-tuning of pretrained graph encoders"};
  app.require_subcommand(1);

  CommonOptions common;
  std::uint64_t seed = 0;
  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", common.config, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "seed override");
  };

  auto* pretrain = app.add_subcommand("pretrain", "pretrain a GIN encoder (ssl or supervised)");
  add_common(pretrain, true);
  auto* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint with one strategy");
  add_common(finetune, true);
  auto* bench = app.add_subcommand("bench", "run a strategy x dataset x seed matrix");
  add_common(bench, true);

  auto* verify = app.add_subcommand("verify", "self-checks");
  verify->require_subcommand(1);
  Prop1Options prop1_opt;
  auto* prop1 = verify->add_subcommand("prop1", "closed-form vs numeric L2-SP optimum on quadratics");
  add_common(prop1, false);
  prop1->add_option("--dim", prop1_opt.dim, "problem dimension (1-32)")->capture_default_str();
  prop1->add_option("--instances", prop1_opt.instances, "random instances")->capture_default_str();
  prop1->add_option("--tol", prop1_opt.tolerance, "max allowed discrepancy")->capture_default_str();
  GradcheckOptions grad_opt;
  auto* gradcheck = verify->add_subcommand("gradcheck", "finite-difference audit of losses and penalties");
  add_common(gradcheck, false);
  gradcheck->add_option("--configs", grad_opt.configs, "random configurations per case")->capture_default_str();
  gradcheck->add_option("--tol", grad_opt.tolerance, "max allowed relative error")->capture_default_str();
  gradcheck->add_flag("--inject-wrong-sign", grad_opt.inject_wrong_sign, "negate analytic gradients");

  GenDataOptions gen_opt;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic molecule-like dataset");
  add_common(gen, false);
  gen->add_option("--size", gen_opt.size, "number of graphs");
  gen->add_option("--tasks", gen_opt.tasks, "number of tasks");
  gen->add_option("--kind", gen_opt.kind, "classification | regression");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }
  for (CLI::App* sub : {pretrain, finetune, bench, prop1, gradcheck, gen})
    if (*sub && sub->count("--seed")) common.seed = seed;

  if (*pretrain) return cmd_pretrain(common);
  if (*finetune) return cmd_finetune(common);
  if (*bench) return cmd_bench(common);
  if (*prop1) return cmd_verify_prop1(common, prop1_opt);
  if (*gradcheck) return cmd_verify_gradcheck(common, grad_opt);
  if (*gen) return cmd_gen_data(common, gen_opt);
  return kConfigError;
}
