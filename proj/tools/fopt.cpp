// fopt: command-line front end of the pipeline.
//
//   fopt <command> --config (PATH | preset:NAME) [--seed N] [--out DIR] [--set key=value ...]
//
// Exit status: 0 success, 1 failed checks or runtime error, 2 invalid
// configuration or arguments, 3 missing or stale upstream artifact.

#include <iostream>

#include <CLI11.hpp>

#include "fopt/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace fopt;
  CLI::App app{"Fermat-state joint options: data, metric, encoder, eigenoptions and evaluation"};
  app.require_subcommand(1, 1);
  // Set before the subcommands exist so they inherit it: global flags may follow the command.
  app.fallthrough();
  std::string config_spec;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_option("--config", config_spec, "config file or preset:NAME")->required();
  app.add_option("--seed", seed, "root seed of every random stream");
  app.add_option("--out", out, "artifact directory");
  app.add_option("--set", overrides, "override one entry, key=value (repeatable)");
  app.add_flag("--print-config", print_config, "print the resolved config before running");

  for (const char* cmd : {"collect", "train-metric", "train-fermat", "discover", "train-options", "evaluate",
                          "sweep-options", "plot", "verify"}) {
    app.add_subcommand(cmd);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pipeline::kInvalid;
  }

  config::PipelineConfig cfg;
  try {
    cfg = config::load(config_spec);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      config::set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    config::set_seed(cfg, seed);
    config::validate(cfg);
  } catch (const Error& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return pipeline::kInvalid;
  }
  if (print_config) std::cout << config::dump(cfg);
  const std::string command = app.get_subcommands().front()->get_name();
  return pipeline::run_command(command, cfg, out, std::cout, std::cerr);
}
