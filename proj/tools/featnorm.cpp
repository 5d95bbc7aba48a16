/*
 * Copyright 2026 The featnorm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// featnorm <gen-data|train|eval|probe|lowres|gradcheck> --config PATH
//          [--section.key=value ...] [--jobs N] [--out DIR]

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "featnorm/experiment.hpp"

namespace {

bool is_override(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return false;
  const auto eq = arg.find('=');
  const auto dot = arg.find('.');
  return eq != std::string::npos && dot != std::string::npos && dot < eq;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> overrides;
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (is_override(a)) {
      overrides.push_back(a.substr(2));
    } else {
      args.push_back(std::move(a));
    }
  }

  CLI::App app{"Speaker-feature normalization experiments: adversarial training, evaluation and probes",
               "featnorm"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  std::size_t jobs = 1;
  std::vector<std::string> snapshots;
  bool corrupt = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration file");
    sub->add_option("--out", out_dir, "Output directory (overrides run.out)");
    sub->add_option("--jobs", jobs, "Parallel work units")->check(CLI::PositiveNumber);
    return sub;
  };
  add_common(app.add_subcommand("gen-data", "Generate a synthetic dataset"));
  add_common(app.add_subcommand("train", "Train one model and write snapshots"));
  add_common(app.add_subcommand("eval", "Cross-validate"));
  auto* probe = add_common(app.add_subcommand("probe", "Speaker-ID probe on frozen snapshots"));
  probe->add_option("snapshots", snapshots, "Model snapshot files")->required();
  add_common(app.add_subcommand("lowres", "Low-resource learning curve and AUC"));
  auto* grad = add_common(app.add_subcommand("gradcheck", "Check backward() against finite differences"));
  grad->add_flag("--corrupt-gradient", corrupt, "Test hook: corrupt one analytic gradient")
      ->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    featnorm::RunContext ctx;
    if (!config_path.empty()) ctx.config = featnorm::ExperimentConfig::load(config_path);
    if (const char* seed = std::getenv("FEATNORM_SEED"); seed && *seed) ctx.config.set("run.seed", seed);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      ctx.config.set(o.substr(0, eq), o.substr(eq + 1));
    }
    ctx.out = out_dir.empty() ? ctx.config.get("run", "out") : out_dir;
    ctx.jobs = jobs;

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "gen-data") {
      featnorm::cmd_gen_data(ctx);
    } else if (command == "train") {
      featnorm::cmd_train(ctx);
    } else if (command == "eval") {
      featnorm::cmd_eval(ctx);
    } else if (command == "probe") {
      featnorm::cmd_probe(ctx, snapshots);
    } else if (command == "lowres") {
      featnorm::cmd_lowres(ctx);
    } else if (command == "gradcheck") {
      if (!featnorm::cmd_gradcheck(ctx, corrupt).passed()) return 1;
    }
  } catch (const featnorm::IoError& e) {
    std::cerr << "featnorm: I/O error: " << e.what() << '\n';
    return 3;
  } catch (const featnorm::Error& e) {
    std::cerr << "featnorm: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
