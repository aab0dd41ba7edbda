// nlmr command-line tool: fit, curve and simulate subcommands driven by a TOML
// configuration file.
//
// Exit codes: 0 success, 2 invalid configuration, 3 data or file problem,
// 4 numerical failure, 64 bad command line, 1 anything else.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <cli11/CLI11.hpp>

#include "nlmr/io/run.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4, kUsage = 64 };

int exit_code_for(nlmr::ErrorKind k) {
  using nlmr::ErrorKind;
  switch (k) {
    case ErrorKind::ConfigInvalid: return kConfig;
    case ErrorKind::MissingColumn:
    case ErrorKind::NonNumericCell:
    case ErrorKind::EmptyAfterFiltering:
    case ErrorKind::FileError: return kData;
    default: return kNumerical;
  }
}

nlmr::io::CurveGrid parse_grid(const std::string& spec) {
  const auto a = spec.find(':');
  const auto b = spec.find(':', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) {
    throw CLI::ValidationError("--grid", "expected lo:hi:steps");
  }
  nlmr::io::CurveGrid g;
  try {
    std::size_t used = 0;
    g.lo = std::stod(spec.substr(0, a), &used);
    g.hi = std::stod(spec.substr(a + 1, b - a - 1), &used);
    g.steps = std::stoi(spec.substr(b + 1), &used);
  } catch (const std::exception&) {
    throw CLI::ValidationError("--grid", "expected lo:hi:steps with numeric fields");
  }
  if (!(g.lo < g.hi) || g.steps < 2) throw CLI::ValidationError("--grid", "need lo < hi and steps >= 2");
  return g;
}

int default_workers() {
  if (const char* env = std::getenv("NLMR_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid NLMR_WORKERS='" << env << "'\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear instrumental-variable estimation and simulation"};
  app.set_version_flag("--version", std::string("nlmr ") + NLMR_VERSION);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = default_workers();
  std::string grid_spec;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "TOML configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configuration seed");
  };
  CLI::App* fit = app.add_subcommand("fit", "fit an estimator to a CSV data set");
  add_common(fit);
  CLI::App* curve = app.add_subcommand("curve", "export the spMR causal curve on a grid");
  add_common(curve);
  curve->add_option("--grid", grid_spec, "lo:hi:steps")->required();
  CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo grid");
  add_common(sim);
  sim->add_option("--workers", workers, "worker threads (default: NLMR_WORKERS or 1)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    nlmr::io::AnalysisConfig cfg = nlmr::io::load_config(config_path);
    if (seed) cfg.seed = *seed;
    nlmr::io::RunReport report;
    if (fit->parsed()) {
      report = nlmr::io::run_fit(cfg);
    } else if (curve->parsed()) {
      report = nlmr::io::run_curve(cfg, parse_grid(grid_spec));
    } else {
      report = nlmr::io::run_simulate(cfg, workers);
    }
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "report written to " << cfg.output.report << '\n';
    return kOk;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlmr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
