#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wpcg/acceptance.hpp"
#include "wpcg/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein proximal coordinate gradient runner"};
  app.require_subcommand(1);

  std::string run_config;
  auto* run = app.add_subcommand("run", "Run the config and write records.csv and summary.txt");
  run->add_option("config", run_config, "Run description (key = value)")->required();

  std::string suite;
  auto* verify = app.add_subcommand("verify", "Run an acceptance suite");
  verify->add_option("suite", suite, "euclidean | ot | gaussian | species-smoke | all")->required();

  std::string sweep_config, parameter;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "Repeat a run over parameter values");
  sweep->add_option("config", sweep_config, "Base run description")->required();
  sweep->add_option("--param", parameter, "tau | alpha | beta | inner_iterations")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : wpcg::kExitConfigError;
  }

  if (*run) return wpcg::cmd_run(run_config, std::cout, std::cerr);
  if (*sweep) return wpcg::cmd_sweep(sweep_config, parameter, values, std::cout, std::cerr);

  const auto criteria = wpcg::acceptance::suite(suite);
  if (criteria.empty()) {
    std::cerr << "error: unknown suite '" << suite << "'; expected one of:";
    for (const auto& name : wpcg::acceptance::suite_names()) std::cerr << ' ' << name;
    std::cerr << '\n';
    return wpcg::kExitConfigError;
  }
  return wpcg::acceptance::report(criteria, std::cout) ? wpcg::kExitOk : wpcg::kExitConfigError;
}
