#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "dynbsde/errors.hpp"
#include "dynbsde/experiments.hpp"

int main(int argc, char** argv) {
  using namespace dynbsde;
  CLI::App app{"Experiment runner for the tree BSDE toolkit"};
  app.require_subcommand(1);

  std::string run_path, out_dir, validate_path;
  auto* run = app.add_subcommand("run", "run the experiment described by a config file");
  run->add_option("config", run_path, "key = value config file")->required();
  run->add_option("-o,--output-dir", out_dir, "override output_dir");
  auto* list = app.add_subcommand("list", "list registered experiments");
  auto* validate = app.add_subcommand("validate", "check a config file without running it");
  validate->add_option("config", validate_path, "key = value config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*list) {
      std::cout << format_listing();
      return 0;
    }
    if (*validate) {
      const auto cfg = ExperimentConfig::load(validate_path);
      const auto issues = validate_config(cfg);
      for (const auto& i : issues) std::cerr << i.field << ": " << i.message << "\n";
      if (!issues.empty()) return 2;
      std::cout << "ok: " << cfg.str("experiment") << " (" << cfg.hash() << ")\n";
      return 0;
    }
    auto cfg = ExperimentConfig::load(run_path);
    if (!out_dir.empty()) cfg.set("output_dir", out_dir);
    const auto rep = run_experiment(cfg);
    std::cout << format_report(rep);
    std::printf("wall-clock %.3f s\n", rep.wall_seconds);
    return rep.pass() ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
