// Command-line runner for the registered experiments.
//
//   mstein run --config path.json [--seed N] [--out path] [--quiet]
//   mstein list
//
// The JSON report goes to --out (or the config's output_path, or
// <experiment>-report.json); the CSV table is appended next to it with a .csv
// extension. Exit status: 0 when every assertion passed, 1 when one failed,
// 2 on a usage or runtime error.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "mstein/experiments.hpp"

namespace ex = mstein::experiments;

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo experiments for normal approximation on Wiener-Poisson space"};
  app.require_subcommand(1);

  auto* list = app.add_subcommand("list", "print the registered experiments");

  auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
  std::string config_path, out_path;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  run->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out_path, "report path; the CSV goes next to it");
  run->add_flag("--quiet", quiet, "do not print the assertion summary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) {
      for (const auto& e : ex::registry()) std::cout << e.id << "\t" << e.summary << "\n";
      return 0;
    }
    ex::ExperimentConfig cfg = ex::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_path.empty()) out_path = cfg.output_path;
    if (out_path.empty()) out_path = cfg.experiment + "-report.json";
    const auto report = ex::run_to_files(cfg, out_path);
    if (!quiet) {
      for (const auto& a : report.document.at("assertions"))
        std::cout << (a.at("passed").get<bool>() ? "PASS " : "FAIL ") << a.at("name").get<std::string>() << "\n";
      std::cout << "report: " << out_path << "\ncsv: " << ex::csv_path_for(out_path) << "\n";
    }
    return report.passed() ? 0 : 1;
  } catch (const mstein::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
}
