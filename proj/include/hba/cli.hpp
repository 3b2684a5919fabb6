#pragma once

// Command-line front end: `hba <command> --config FILE [flags]`.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hba/pipeline.hpp"

namespace hba {

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::vector<int> holdout;
  std::optional<int> chains;
  std::optional<int> iterations;
  std::optional<std::string> output;
};

inline void apply_overrides(RunConfig& c, const CliOverrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.method) c.model.method = parse_method(*o.method);
  if (!o.holdout.empty()) c.holdout = o.holdout;
  if (o.chains) c.chains = *o.chains;
  if (o.iterations) c.sampler.iterations = *o.iterations;
  if (o.output) c.output_dir = *o.output;
}

// Returns the process exit code; 0 on success.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical Bayesian analog forecasting of spatio-temporal counts", "hba"};
  app.require_subcommand(1);
  std::string config_path;
  CliOverrides ov;
  bool rebuild = false;

  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<int> chains, iterations;
  std::optional<std::string> output;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"fit", "prepare (or reuse) caches and run the sampler chains"},
      {"forecast", "posterior predictive grids from fitted chains"},
      {"baseline", "climatology and persistence grids"},
      {"evaluate", "MSPE and correlation of every available grid"},
      {"simulate", "write a synthetic count/forcing pair"},
      {"cache", "anomalies, NMF, forcing reduction and distance cache"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "key = value run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "base random seed");
    sub->add_option("--method", method, "forcing reduction")->check(CLI::IsMember({"eof", "le"}));
    sub->add_option("--holdout", ov.holdout, "holdout year (repeatable)");
    sub->add_option("--chains", chains, "number of chains")->check(CLI::PositiveNumber);
    sub->add_option("--iterations", iterations, "sampler iterations");
    sub->add_option("--output", output, "output directory");
    sub->add_flag("--rebuild", rebuild, "recompute cached preparation artifacts");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  ov.seed = seed;
  ov.method = method;
  ov.chains = chains;
  ov.iterations = iterations;
  ov.output = output;

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    RunConfig c = run_stage("config", [&] {
      RunConfig rc = load_config(config_path);
      apply_overrides(rc, ov);
      return rc;
    });
    fs::path manifest;
    if (cmd == "fit") {
      manifest = cmd_fit(c, rebuild);
    } else if (cmd == "forecast") {
      manifest = cmd_forecast(c);
    } else if (cmd == "baseline") {
      manifest = cmd_baseline(c);
    } else if (cmd == "evaluate") {
      auto rows = cmd_evaluate(c, &manifest);
      out << "model,year,mspe,corr\n";
      for (const auto& r : rows)
        out << r.model << ',' << r.year << ',' << format_double(r.score.mspe) << ',' << format_corr(r.score.corr) << '\n';
    } else if (cmd == "simulate") {
      manifest = cmd_simulate(c);
    } else {
      manifest = cmd_cache(c, rebuild);
    }
    out << "manifest: " << manifest.generic_string() << '\n';
    return 0;
  } catch (const StageError& e) {
    err << "hba " << cmd << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "hba " << cmd << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace hba
