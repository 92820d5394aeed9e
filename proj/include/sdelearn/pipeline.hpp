#ifndef SDELEARN_PIPELINE_HPP
#define SDELEARN_PIPELINE_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "sdelearn/config.hpp"
#include "sdelearn/errors.hpp"
#include "sdelearn/eval.hpp"
#include "sdelearn/gibbs.hpp"
#include "sdelearn/io.hpp"
#include "sdelearn/rkhs.hpp"
#include "sdelearn/sde.hpp"

namespace sdelearn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Seeding and scheduling

/// FNV-1a over the bytes of `text`; stable across platforms and runs.
inline std::uint64_t stable_hash(const std::string &text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Runs task(0..count-1) on up to `jobs` threads. The first exception in
/// index order is rethrown after all workers finish.
inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)> &task) {
  std::vector<std::exception_ptr> errors(count);
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            task(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto &t : pool) {
      t.join();
    }
  }
  for (const auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

// ---------------------------------------------------------------------------
// simulate / fit / evaluate

inline Trajectory simulate_trajectory(const RunConfig &cfg) {
  RngStream rng(cfg.simulation.seed, 0);
  return euler_maruyama_simulate(cfg.model(), cfg.simulation.x0, cfg.simulation.delta,
                                 cfg.simulation.steps, rng);
}

struct FitOutput {
  std::vector<PosteriorSamples> chains;
  PosteriorSummary summary;
};

/// Trajectory the chains see: x0 replaced by the first observation unless disabled.
inline Trajectory fit_view(const RunConfig &cfg, const Trajectory &traj) {
  return cfg.x0_from_first_observation ? traj.with_x0(traj.states().row(0).transpose()) : traj;
}

inline FitOutput fit_trajectory(const RunConfig &cfg, const Trajectory &traj, int jobs = 1) {
  const ModelSpec model = cfg.model();
  if (traj.dim() != model.dim) {
    throw ParameterError("fit: trajectory dimension does not match model '" + model.name + "'");
  }
  const MatrixKernel kernel = MatrixKernel::scalar_identity(traj.dim(), cfg.kernel.bandwidth);
  const DriftDesign design(fit_view(cfg, traj), kernel, model);
  FitOutput out;

  if (const auto *ridge = std::get_if<RidgeConfig>(&cfg.prior)) {
    const Matrix s = model.diffusion_param * model.diffusion_param.transpose();
    PosteriorSamples single;
    single.kernel = kernel;
    single.centers = design.centers();
    ChainState state;
    state.beta = ridge_map_estimate(design, s, ridge->gamma).weights;
    state.sigma = s;
    single.states.push_back(std::move(state));
    single.sweeps.push_back(0);
    out.chains.push_back(std::move(single));
  } else {
    const PriorConfig prior = std::holds_alternative<TPriorConfig>(cfg.prior)
                                  ? PriorConfig(std::get<TPriorConfig>(cfg.prior))
                                  : PriorConfig(std::get<HsPriorConfig>(cfg.prior));
    out.chains.resize(static_cast<std::size_t>(cfg.chain.n_chains));
    parallel_for(out.chains.size(), jobs, [&](std::size_t c) {
      RngStream rng(cfg.chain.seed, 1 + c);
      out.chains[c] = run_chain(design, prior, cfg.chain.settings, rng);
    });
  }
  out.summary = summarize_posterior(merge_samples(out.chains),
                                    mse_grid_points(traj, cfg.eval.mse_points));
  return out;
}

inline Json summary_to_json(const PosteriorSummary &s, std::size_t n_states) {
  return Json{{"kernel", {{"kind", "gaussian"}, {"bandwidth", s.mean_expansion.kernel.terms.front().kernel.bandwidth}}},
              {"centers", to_json(s.mean_expansion.centers)},
              {"mean_weights", to_json(s.mean_expansion.weights)},
              {"mean_sigma", to_json(s.mean_sigma)},
              {"weight_magnitudes", to_json(s.weight_magnitudes)},
              {"near_zero_fraction", near_zero_fraction(s.weight_magnitudes)},
              {"grid", to_json(s.grid)},
              {"mean_on_grid", to_json(s.mean_on_grid)},
              {"lower", to_json(s.lower)},
              {"upper", to_json(s.upper)},
              {"n_states", n_states}};
}

inline PosteriorSummary summary_from_json(const Json &j) {
  try {
    PosteriorSummary s;
    s.mean_sigma = matrix_from_json(j.at("mean_sigma"), "mean_sigma");
    const Eigen::Index d = s.mean_sigma.rows();
    s.mean_expansion.kernel = MatrixKernel::scalar_identity(d, j.at("kernel").at("bandwidth").get<double>());
    s.mean_expansion.centers = matrix_from_json(j.at("centers"), "centers");
    s.mean_expansion.weights = vector_from_json(j.at("mean_weights"), "mean_weights");
    s.mean_expansion.validate();
    s.weight_magnitudes = vector_from_json(j.at("weight_magnitudes"), "weight_magnitudes");
    s.grid = matrix_from_json(j.at("grid"), "grid");
    s.mean_on_grid = matrix_from_json(j.at("mean_on_grid"), "mean_on_grid");
    s.lower = matrix_from_json(j.at("lower"), "lower");
    s.upper = matrix_from_json(j.at("upper"), "upper");
    return s;
  } catch (const Json::exception &e) {
    throw IoError(std::string("summary: ") + e.what());
  } catch (const ConfigError &e) {
    throw IoError(std::string("summary: ") + e.what());
  } catch (const ParameterError &e) {
    throw IoError(std::string("summary: ") + e.what());
  }
}

inline Json metrics_to_json(const EvalResult &r, const PosteriorSummary &s) {
  Json j{{"mse", r.mse},
         {"sigma_hat", to_json(r.sigma_hat)},
         {"near_zero_fraction", near_zero_fraction(s.weight_magnitudes)},
         {"tail_warning", r.tail_warning}};
  j["kolmogorov"] = r.kolmogorov ? Json(*r.kolmogorov) : Json(nullptr);
  return j;
}

/// fig_drift.csv, fig_hist.csv and, for 1-D models, fig_stationary.csv and fig_pp.csv.
inline std::vector<fs::path> write_figures(const fs::path &dir, const FigureData &f, Eigen::Index dim) {
  std::vector<fs::path> written;
  std::vector<std::string> header;
  for (Eigen::Index c = 1; c <= dim; ++c) {
    header.push_back("x" + std::to_string(c));
  }
  for (Eigen::Index c = 1; c <= dim; ++c) {
    const std::string k = std::to_string(c);
    for (const char *col : {"b_true_", "b_hat_", "lower_", "upper_"}) {
      header.push_back(col + k);
    }
  }
  write_table_csv(dir / "fig_drift.csv", header, f.drift);
  written.push_back(dir / "fig_drift.csv");

  Matrix hist(f.hist_counts.size(), 3);
  for (Eigen::Index b = 0; b < f.hist_counts.size(); ++b) {
    hist.row(b) << f.hist_edges(b), f.hist_edges(b + 1), static_cast<double>(f.hist_counts(b));
  }
  write_table_csv(dir / "fig_hist.csv", {"bin_left", "bin_right", "count"}, hist);
  written.push_back(dir / "fig_hist.csv");

  if (f.stationary.size() > 0) {
    write_table_csv(dir / "fig_stationary.csv", {"x", "pdf_true", "pdf_hat"}, f.stationary);
    write_table_csv(dir / "fig_pp.csv", {"F_true", "F_hat"}, f.pp);
    written.push_back(dir / "fig_stationary.csv");
    written.push_back(dir / "fig_pp.csv");
  }
  return written;
}

inline fs::path run_simulate(const RunConfig &cfg, const fs::path &out_dir) {
  const fs::path path = out_dir / "trajectory.csv";
  write_trajectory_csv(path, simulate_trajectory(cfg));
  return path;
}

inline std::vector<fs::path> run_fit(const RunConfig &cfg, const fs::path &trajectory_csv,
                                     const fs::path &out_dir, int jobs = 1) {
  const Trajectory traj = read_trajectory_csv(trajectory_csv);
  const FitOutput fit = fit_trajectory(cfg, traj, jobs);
  std::vector<fs::path> written;
  std::size_t n_states = 0;
  for (std::size_t c = 0; c < fit.chains.size(); ++c) {
    const fs::path p = fit.chains.size() == 1 ? out_dir / "samples.csv"
                                              : out_dir / ("samples_chain" + std::to_string(c + 1) + ".csv");
    write_samples_csv(p, fit.chains[c]);
    written.push_back(p);
    n_states += fit.chains[c].states.size();
  }
  write_json(out_dir / "summary.json", summary_to_json(fit.summary, n_states));
  written.push_back(out_dir / "summary.json");
  return written;
}

inline std::vector<fs::path> run_evaluate(const RunConfig &cfg, const fs::path &trajectory_csv,
                                          const fs::path &summary_json, const fs::path &out_dir) {
  const Trajectory traj = read_trajectory_csv(trajectory_csv);
  const PosteriorSummary summary = summary_from_json(read_json(summary_json));
  const EvalResult r = evaluate_fit(summary, cfg.model(), traj, cfg.eval);
  std::vector<fs::path> written = write_figures(out_dir, r.figures, traj.dim());
  write_json(out_dir / "metrics.json", metrics_to_json(r, summary));
  written.push_back(out_dir / "metrics.json");
  return written;
}

// ---------------------------------------------------------------------------
// reproduce

struct Cell {
  double horizon;
  double delta;
};

/// The six (T, delta) columns of the benchmark tables.
inline std::vector<Cell> table_cells() {
  return {{40, 0.025}, {40, 0.05}, {40, 0.1}, {80, 0.05}, {60, 0.05}, {20, 0.05}};
}

/// Parses "T=40,delta=0.05;T=80,delta=0.05".
inline std::vector<Cell> parse_cells(const std::string &text) {
  std::vector<Cell> cells;
  for (const auto &item : detail::split(text, ';')) {
    if (item.empty()) {
      continue;
    }
    std::optional<double> t;
    std::optional<double> dt;
    for (const auto &kv : detail::split(item, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("cells: expected key=value in '" + kv + "'");
      }
      const std::string key = kv.substr(0, eq);
      double value = 0.0;
      try {
        value = detail::parse_double(kv.substr(eq + 1), "cells");
      } catch (const IoError &e) {
        throw ConfigError(e.what());
      }
      if (key == "T") {
        t = value;
      } else if (key == "delta") {
        dt = value;
      } else {
        throw ConfigError("cells: unknown key '" + key + "'");
      }
    }
    if (!t || !dt) {
      throw ConfigError("cells: each cell needs T and delta");
    }
    cells.push_back({*t, *dt});
  }
  if (cells.empty()) {
    throw ConfigError("cells: no cells given");
  }
  return cells;
}

struct ReproduceOptions {
  std::string target;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::vector<Cell> cells;
  int replicates = 1;
  /// `--set` overrides applied to every preset used.
  std::vector<std::string> overrides;
  fs::path out_dir = "out";
};

struct ReproduceResult {
  Json metrics;
  Json manifest;
  std::vector<fs::path> files;
};

namespace detail {

struct ArmSpec {
  std::string label;
  std::string preset;
};

struct TargetSpec {
  std::string title;
  std::vector<ArmSpec> arms;
  bool table = true;
};

inline TargetSpec target_spec(const std::string &target) {
  if (target == "table1" || target == "table2") {
    return {"double_well", {{"t_prior", "double_well_t"}, {"hs_prior", "double_well_hs"}}, true};
  }
  if (target == "table3" || target == "table4") {
    return {"double_well_variant_s1", {{"t_prior", "dw_variant_s1_t"}, {"hs_prior", "dw_variant_s1"}}, true};
  }
  if (target == "fig1") {
    return {"double_well",
            {{"t_prior", "double_well_t"}, {"hs_prior", "double_well_hs"}, {"no_shrinkage", "double_well_ridge"}},
            false};
  }
  if (target == "fig2") {
    return {"double_well_variant_s1", {{"t_prior", "dw_variant_s1_t"}, {"hs_prior", "dw_variant_s1"}}, false};
  }
  if (target == "fig3") {
    return {"double_well_variant_s05", {{"t_prior", "dw_variant_s05_t"}, {"hs_prior", "dw_variant_s05"}}, false};
  }
  if (target == "fig4") {
    return {"michaelis_menten", {{"t_prior", "michaelis_menten_t"}, {"hs_prior", "michaelis_menten"}}, false};
  }
  throw ConfigError("unknown reproduce target '" + target + "' (table1-4, fig1-4)");
}

inline std::string cell_key(const Cell &c) {
  return "T=" + format_double(c.horizon) + ",delta=" + format_double(c.delta);
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Config of one (cell, replicate, arm). Data seeds depend on the cell and
/// replicate only, so every arm of a cell sees the same path; chain seeds
/// also depend on the arm label.
inline RunConfig reproduce_cell_config(const std::string &preset, const std::string &label, const Cell &cell,
                                       int replicate, std::uint64_t master_seed,
                                       const std::vector<std::string> &overrides) {
  Json j = preset_json(preset);
  for (const auto &o : overrides) {
    apply_override(j, o);
  }
  const std::string key = detail::cell_key(cell) + ",rep=" + std::to_string(replicate);
  j["simulation"]["T"] = cell.horizon;
  j["simulation"]["delta"] = cell.delta;
  j["simulation"].erase("steps");
  j["simulation"]["seed"] = master_seed ^ stable_hash("data|" + j["model"]["name"].get<std::string>() + "|" + key);
  j["chain"]["seed"] = master_seed ^ stable_hash("chain|" + label + "|" + key);
  return build_run_config(j);
}

inline ReproduceResult run_reproduce(const ReproduceOptions &opt) {
  const auto wall_start = std::chrono::steady_clock::now();
  const detail::TargetSpec spec = detail::target_spec(opt.target);
  if (opt.replicates < 1) {
    throw ConfigError("replicates must be at least 1");
  }
  std::vector<Cell> cells = opt.cells;
  if (cells.empty()) {
    cells = spec.table ? table_cells() : std::vector<Cell>{};
    if (!spec.table) {
      const RunConfig base = preset_config(spec.arms.front().preset, opt.overrides);
      cells.push_back({static_cast<double>(base.simulation.steps) * base.simulation.delta, base.simulation.delta});
    }
  }

  struct Task {
    std::size_t cell;
    int replicate;
    std::size_t arm;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (int r = 0; r < opt.replicates; ++r) {
      for (std::size_t a = 0; a < spec.arms.size(); ++a) {
        tasks.push_back({c, r, a});
      }
    }
  }

  const fs::path root = opt.out_dir / opt.target;
  std::vector<Json> task_metrics(tasks.size());
  std::vector<std::vector<fs::path>> task_files(tasks.size());
  parallel_for(tasks.size(), opt.jobs, [&](std::size_t i) {
    const Task &t = tasks[i];
    const auto &arm = spec.arms[t.arm];
    const RunConfig cfg =
        reproduce_cell_config(arm.preset, arm.label, cells[t.cell], t.replicate, opt.seed, opt.overrides);
    const Trajectory traj = simulate_trajectory(cfg);
    const FitOutput fit = fit_trajectory(cfg, traj, 1);
    const EvalResult r = evaluate_fit(fit.summary, cfg.model(), traj, cfg.eval);
    task_metrics[i] = metrics_to_json(r, fit.summary);
    if (!spec.table) {
      const fs::path dir = root / ("rep" + std::to_string(t.replicate + 1)) / arm.label;
      task_files[i] = write_figures(dir, r.figures, traj.dim());
      if (t.arm == 0) {
        write_trajectory_csv(root / ("rep" + std::to_string(t.replicate + 1)) / "trajectory.csv", traj);
        task_files[i].push_back(root / ("rep" + std::to_string(t.replicate + 1)) / "trajectory.csv");
      }
    }
  });

  Json cell_rows = Json::array();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    Json row{{"T", cells[c].horizon}, {"delta", cells[c].delta}};
    for (std::size_t a = 0; a < spec.arms.size(); ++a) {
      const std::string &label = spec.arms[a].label;
      std::vector<double> mse;
      std::vector<double> ks;
      std::vector<double> nz;
      std::vector<Json> sigma;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].cell != c || tasks[i].arm != a) {
          continue;
        }
        const Json &m = task_metrics[i];
        mse.push_back(m["mse"].get<double>());
        if (!m["kolmogorov"].is_null()) {
          ks.push_back(m["kolmogorov"].get<double>());
        }
        nz.push_back(m["near_zero_fraction"].get<double>());
        sigma.push_back(m["sigma_hat"]);
      }
      row["mse_" + label] = detail::median_of(mse);
      row["near_zero_" + label] = detail::median_of(nz);
      if (!ks.empty()) {
        row["ks_" + label] = detail::median_of(ks);
      }
      if (sigma.front().size() == 1) {
        std::vector<double> s2;
        for (const auto &s : sigma) {
          s2.push_back(s[0][0].get<double>());
        }
        row["sigma2_" + label] = detail::median_of(s2);
      } else {
        row["sigma_hat_" + label] = sigma.front();
      }
      if (opt.replicates > 1) {
        row["replicates_" + label] = Json{{"mse", mse}, {"ks", ks}, {"near_zero", nz}, {"sigma_hat", sigma}};
      }
    }
    cell_rows.push_back(std::move(row));
  }

  ReproduceResult out;
  out.metrics = Json{{"target", opt.target},
                     {"setting", spec.title},
                     {"seed", opt.seed},
                     {"replicates", opt.replicates},
                     {"cells", std::move(cell_rows)}};
  write_json(root / "metrics.json", out.metrics);
  out.files.push_back(root / "metrics.json");
  for (auto &f : task_files) {
    out.files.insert(out.files.end(), f.begin(), f.end());
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  Json files = Json::array();
  for (const auto &f : out.files) {
    files.push_back(f.string());
  }
  Json presets = Json::object();
  for (const auto &arm : spec.arms) {
    Json j = preset_json(arm.preset);
    for (const auto &o : opt.overrides) {
      apply_override(j, o);
    }
    presets[arm.label] = j;
  }
  out.manifest = Json{{"target", opt.target},
                      {"config_hash", std::to_string(stable_hash(presets.dump()))},
                      {"presets", presets},
                      {"files", files},
                      {"metrics", out.metrics},
                      {"wall_clock_seconds", seconds}};
  write_json(root / "manifest.json", out.manifest);
  return out;
}

} // namespace sdelearn

#endif // SDELEARN_PIPELINE_HPP
