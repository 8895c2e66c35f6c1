#include <iostream>

#include <CLI11.hpp>

#include "niff/error.hpp"
#include "niff/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bayesian reconstruction of ODE state paths and parameters from noisy measurements"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = "out";
  std::string samples;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;

  struct Entry {
    const char* name;
    const char* help;
    niff::Command cmd;
  };
  const Entry entries[] = {
      {"simulate", "Generate synthetic measurements and the reference trajectory", niff::Command::Simulate},
      {"fit-nsvi", "Fit paths and parameters with nested stochastic variational inference", niff::Command::FitNsvi},
      {"fit-npsgld", "Sample paths and parameters with nested preconditioned Langevin dynamics",
       niff::Command::FitNpsgld},
      {"filter", "Reconstruct the state path with the parameters held fixed", niff::Command::Filter},
      {"predict", "Posterior-predictive bands from parameter samples", niff::Command::Predict},
  };
  niff::Command chosen = niff::Command::Summarize;
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("config", config, "Experiment TOML file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_option("--threads", threads, "Worker threads for independent chains");
    if (e.cmd == niff::Command::Predict)
      sub->add_option("--samples", samples, "samples.csv to draw parameters from (default: <out>/samples.csv)");
    sub->callback([&chosen, cmd = e.cmd] { chosen = cmd; });
  }
  std::string dir;
  auto* summarize = app.add_subcommand("summarize", "Recompute summary.json for a finished run directory");
  summarize->add_option("dir", dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (summarize->parsed()) {
      std::cout << niff::summarize_dir(dir) << '\n';
      return 0;
    }
    niff::RunOptions opt;
    opt.out_dir = out_dir;
    opt.seed = seed;
    opt.threads = threads;
    opt.samples = samples;
    std::cout << niff::run_experiment(niff::parse_config(config), chosen, opt) << '\n';
  } catch (const niff::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
