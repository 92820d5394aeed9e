// Command-line front end: simulate, fit, evaluate, reproduce, validate.
//
// Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O error.

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sdelearn/config.hpp"
#include "sdelearn/errors.hpp"
#include "sdelearn/pipeline.hpp"

namespace {

using namespace sdelearn;

struct CommonOptions {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
};

void add_common(CLI::App *cmd, CommonOptions &o, bool with_seed, bool with_jobs) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--preset", o.preset, "Named preset used when no --config is given");
  cmd->add_option("--set", o.overrides, "Override a config field, key.path=value (repeatable)");
  cmd->add_option("--out", o.out, "Output directory (default: output_dir from the config)");
  if (with_seed) {
    cmd->add_option("--seed", o.seed, "Seed override");
  }
  if (with_jobs) {
    cmd->add_option("--jobs", o.jobs, "Parallel workers")->check(CLI::PositiveNumber);
  }
}

Json load(const CommonOptions &o) {
  if (!o.config.empty()) {
    return load_config_json(o.config, o.overrides);
  }
  if (!o.preset.empty()) {
    return resolve_config(Json{{"preset", o.preset}}, o.overrides);
  }
  throw ConfigError("one of --config or --preset is required");
}

fs::path out_dir(const CommonOptions &o, const RunConfig &cfg) {
  return o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out);
}

void report(const std::vector<fs::path> &files) {
  for (const auto &f : files) {
    std::cout << f.string() << '\n';
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Bayesian RKHS drift learning for SDEs from a single discretely observed path"};
  app.require_subcommand(1);

  CommonOptions sim_opt;
  auto *simulate = app.add_subcommand("simulate", "Simulate an Euler-Maruyama path to trajectory.csv");
  add_common(simulate, sim_opt, true, false);

  CommonOptions fit_opt;
  std::string fit_traj;
  auto *fit = app.add_subcommand("fit", "Run the Gibbs sampler; writes samples CSV and summary.json");
  add_common(fit, fit_opt, true, true);
  fit->add_option("--trajectory", fit_traj, "Trajectory CSV (default: <out>/trajectory.csv)");

  CommonOptions eval_opt;
  std::string eval_traj;
  std::string eval_summary;
  auto *evaluate = app.add_subcommand("evaluate", "Compare a fit with the true model; writes metrics.json and figure CSVs");
  add_common(evaluate, eval_opt, false, false);
  evaluate->add_option("--trajectory", eval_traj, "Trajectory CSV (default: <out>/trajectory.csv)");
  evaluate->add_option("--summary", eval_summary, "summary.json from fit (default: <out>/summary.json)");

  std::string target;
  std::string cells;
  std::uint64_t rep_seed = 1;
  int rep_jobs = 1;
  int replicates = 1;
  std::string rep_out = "out";
  std::vector<std::string> rep_overrides;
  auto *reproduce = app.add_subcommand("reproduce", "Regenerate a benchmark table or figure data set");
  reproduce->add_option("target", target, "table1..table4 or fig1..fig4")->required();
  reproduce->add_option("--cells", cells, "Subset of cells, e.g. \"T=40,delta=0.05;T=80,delta=0.05\"");
  reproduce->add_option("--seed", rep_seed, "Master seed");
  reproduce->add_option("--jobs", rep_jobs, "Parallel workers")->check(CLI::PositiveNumber);
  reproduce->add_option("--replicates", replicates, "Independent data sets per cell (medians reported)")
      ->check(CLI::PositiveNumber);
  reproduce->add_option("--out", rep_out, "Output directory");
  reproduce->add_option("--set", rep_overrides, "Override applied to every preset (repeatable)");

  CommonOptions val_opt;
  auto *validate = app.add_subcommand("validate", "Check a configuration and list diagnostics");
  add_common(validate, val_opt, false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      Json j = load(sim_opt);
      if (sim_opt.seed) {
        j["simulation"]["seed"] = *sim_opt.seed;
      }
      const RunConfig cfg = build_run_config(j);
      report({run_simulate(cfg, out_dir(sim_opt, cfg))});
    } else if (fit->parsed()) {
      Json j = load(fit_opt);
      if (fit_opt.seed) {
        j["chain"]["seed"] = *fit_opt.seed;
      }
      const RunConfig cfg = build_run_config(j);
      const fs::path dir = out_dir(fit_opt, cfg);
      report(run_fit(cfg, fit_traj.empty() ? dir / "trajectory.csv" : fs::path(fit_traj), dir, fit_opt.jobs));
    } else if (evaluate->parsed()) {
      const RunConfig cfg = build_run_config(load(eval_opt));
      const fs::path dir = out_dir(eval_opt, cfg);
      report(run_evaluate(cfg, eval_traj.empty() ? dir / "trajectory.csv" : fs::path(eval_traj),
                          eval_summary.empty() ? dir / "summary.json" : fs::path(eval_summary), dir));
    } else if (reproduce->parsed()) {
      ReproduceOptions opt;
      opt.target = target;
      opt.seed = rep_seed;
      opt.jobs = rep_jobs;
      opt.replicates = replicates;
      opt.out_dir = rep_out;
      opt.overrides = rep_overrides;
      if (!cells.empty()) {
        opt.cells = parse_cells(cells);
      }
      const ReproduceResult r = run_reproduce(opt);
      std::cout << r.metrics.dump(2) << '\n';
    } else if (validate->parsed()) {
      std::vector<Diagnostic> diags;
      try {
        diags = validate_config(load(val_opt));
      } catch (const ConfigError &e) {
        diags.push_back({"preset", e.what()});
      }
      for (const auto &d : diags) {
        std::cout << d.field << ": " << d.message << '\n';
      }
      if (!diags.empty()) {
        return 1;
      }
      std::cout << "ok\n";
    }
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ParameterError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const IoError &e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError &e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError &e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
