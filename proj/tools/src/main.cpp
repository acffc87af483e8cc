// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "branchpar/errors.hpp"
#include "commands.hpp"

namespace {

using namespace branchpar;
using namespace branchpar::cli;

std::string key_listing() {
  std::string text = "\nConfig keys (defaults):\n";
  for (const auto& k : config_keys()) text += "  " + k.key + " = " + k.default_value + "    " + k.help + "\n";
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branch-parallel Evoformer: oracle checks, gradient checks, benchmarks and cost model"};
  app.footer(key_listing());
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  Overrides overrides;
  int repeat = 1;
  std::string precision;

  const std::map<std::string, std::string> descriptions = {
      {"verify", "run every schedule against the single-rank oracle and check traces"},
      {"gradcheck", "finite-difference checks of every sub-op and a full block"},
      {"bench", "wall-clock step time per layout"},
      {"cost", "modeled step time, speedups and bytes per layout"},
  };
  for (const auto& [name, help] : descriptions) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--repeat", repeat, "bench: repeated measurements per layout")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_path, "write CSV here instead of stdout");
    sub->add_option("--seed", overrides.seed, "override run.seed");
    sub->add_option("--precision", precision, "override run.precision")->check(CLI::IsMember({"f64", "f32"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (!precision.empty()) overrides.precision = precision == "f32" ? Precision::f32 : Precision::f64;
  overrides.repeat = repeat;

  try {
    RunConfig cfg = load_config(config_path);
    apply_overrides(cfg, overrides);

    std::ofstream file;
    if (!out_path.empty()) {
      file.open(out_path);
      if (!file) throw ConfigError("cannot write '" + out_path + "'");
    }
    std::ostream& out = out_path.empty() ? std::cout : file;

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "verify") return cmd_verify(cfg, out, std::cerr);
    if (command == "gradcheck") return cmd_gradcheck(cfg, out, std::cerr);
    if (command == "bench") return cmd_bench(cfg, repeat, out, std::cerr);
    return cmd_cost(cfg, out, std::cerr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSuiteFailed;
  }
}
