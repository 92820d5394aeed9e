#ifndef SDELEARN_CONFIG_HPP
#define SDELEARN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sdelearn/errors.hpp"
#include "sdelearn/eval.hpp"
#include "sdelearn/gibbs.hpp"
#include "sdelearn/io.hpp"
#include "sdelearn/sde.hpp"

namespace sdelearn {

/// No-shrinkage baseline: MAP estimate under the prior N(0, gamma^{-1} I).
struct RidgeConfig {
  double gamma = 1.0;
};

using FitPrior = std::variant<TPriorConfig, HsPriorConfig, RidgeConfig>;

struct SimulationConfig {
  Vector x0;
  double delta = 0.05;
  Eigen::Index steps = 0;
  std::uint64_t seed = 1;
};

struct ChainConfig {
  ChainSettings settings;
  int n_chains = 1;
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::string preset;
  std::string model_name;
  ParamMap model_params;
  SimulationConfig simulation;
  ScalarKernel kernel;
  FitPrior prior;
  ChainConfig chain;
  EvalSettings eval;
  /// Fit with x0 = X(t_1) instead of the trajectory's recorded start.
  bool x0_from_first_observation = true;
  std::string output_dir = "out";
  /// The fully merged JSON the config was built from.
  Json source;

  ModelSpec model() const { return builtin_model(model_name, model_params); }
};

struct Diagnostic {
  std::string field;
  std::string message;
};

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline Json t_prior_json(double dof, const Matrix &scale, bool scalar_mode, double sigma_dof,
                         const Matrix &sigma_scale) {
  return Json{{"kind", "t"},
              {"dof", dof},
              {"scale", to_json(scale)},
              {"scalar_mode", scalar_mode},
              {"inverse_prior_scale", false},
              {"sigma_dof", sigma_dof},
              {"sigma_scale", to_json(sigma_scale)}};
}

inline Json hs_prior_json(double local_shape, double sigma_dof, const Matrix &sigma_scale) {
  return Json{{"kind", "hs"},
              {"local_shape", local_shape},
              {"global_shape", 0.5},
              {"local_rate_hypers", {0.5, 1.0}},
              {"global_rate_hypers", {0.5, 1.0}},
              {"sigma_dof", sigma_dof},
              {"sigma_scale", to_json(sigma_scale)}};
}

inline Json base_json(const std::string &preset, const Json &model, const Json &simulation,
                      const Json &prior) {
  return Json{{"preset", preset},
              {"model", model},
              {"simulation", simulation},
              {"kernel", {{"kind", "gaussian"}, {"bandwidth", 1.0}}},
              {"prior", prior},
              {"chain", {{"iters", 2000}, {"burn_in", 500}, {"thin", 1}, {"n_chains", 1}, {"seed", 1}}},
              {"eval",
               {{"mse_points", 200},
                {"density_points", 2001},
                {"domain_extension", 0.2},
                {"use_estimated_sigma", true}}},
              {"fit", {{"x0_from_first_observation", true}}},
              {"output_dir", "out"}};
}

} // namespace detail

inline std::vector<std::string> preset_names() {
  return {"double_well_t",         "double_well_hs",      "double_well_ridge",
          "dw_variant_s1",         "dw_variant_s1_t",     "dw_variant_s1_hs_alpha05",
          "dw_variant_s05",        "dw_variant_s05_t",    "dw_variant_s05_hs_alpha05",
          "michaelis_menten",      "michaelis_menten_t"};
}

/// Named configurations. Scalar IG(a, b) priors are written as the 1-D
/// inverse Wishart IW_1(2a, 2b).
inline Json preset_json(const std::string &name) {
  const Matrix ig12 = Matrix::Constant(1, 1, 4.0);
  const Json dw_sim = {{"x0", {0.5}}, {"delta", 0.05}, {"T", 40.0}, {"seed", 1}};
  const auto dw_model = [](const std::string &model, double s) {
    return Json{{"name", model}, {"params", {{"sigma", s}}}};
  };
  const Json t1 = detail::t_prior_json(2.0, ig12, true, 2.0, ig12);

  if (name == "double_well_t") {
    return detail::base_json(name, dw_model("double_well", 1.0), dw_sim, t1);
  }
  if (name == "double_well_hs") {
    return detail::base_json(name, dw_model("double_well", 1.0), dw_sim,
                             detail::hs_prior_json(0.5, 2.0, ig12));
  }
  if (name == "double_well_ridge") {
    return detail::base_json(name, dw_model("double_well", 1.0), dw_sim,
                             Json{{"kind", "ridge"}, {"gamma", 1.0}});
  }
  const auto variant = [&](const std::string &preset, double s, const Json &prior) {
    return detail::base_json(preset, dw_model("double_well_variant", s), dw_sim, prior);
  };
  if (name == "dw_variant_s1") {
    return variant(name, 1.0, detail::hs_prior_json(0.15, 2.0, ig12));
  }
  if (name == "dw_variant_s1_t") {
    return variant(name, 1.0, t1);
  }
  if (name == "dw_variant_s1_hs_alpha05") {
    return variant(name, 1.0, detail::hs_prior_json(0.5, 2.0, ig12));
  }
  if (name == "dw_variant_s05") {
    return variant(name, 0.5, detail::hs_prior_json(0.15, 2.0, ig12));
  }
  if (name == "dw_variant_s05_t") {
    return variant(name, 0.5, t1);
  }
  if (name == "dw_variant_s05_hs_alpha05") {
    return variant(name, 0.5, detail::hs_prior_json(0.5, 2.0, ig12));
  }
  const Json mm_model = {
      {"name", "michaelis_menten"},
      {"params", {{"k1", 1.0}, {"km1", 1.0}, {"k2", 1.0}, {"km2", 0.5}, {"c_total", 2.0}, {"sigma", 0.1}}}};
  const Json mm_sim = {{"x0", {1.0, 5.0, 0.0}}, {"delta", 0.04}, {"T", 40.0}, {"seed", 1}};
  const Matrix two_i = 2.0 * Matrix::Identity(3, 3);
  if (name == "michaelis_menten") {
    return detail::base_json(name, mm_model, mm_sim, detail::hs_prior_json(0.5, 4.0, two_i));
  }
  if (name == "michaelis_menten_t") {
    return detail::base_json(name, mm_model, mm_sim,
                             detail::t_prior_json(5.0, 8.0 * Matrix::Identity(3, 3), false, 4.0, two_i));
  }
  throw ConfigError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Overrides

/// Applies `a.b.c=value`; the value is read as JSON when it parses, else as a string.
inline void apply_override(Json &config, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must have the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) {
    value = text;
  }
  std::string pointer;
  for (const auto &part : detail::split(key, '.')) {
    if (part.empty()) {
      throw ConfigError("override key '" + key + "' has an empty component");
    }
    pointer += "/" + part;
  }
  config[Json::json_pointer(pointer)] = value;
}

/// Resolves `preset` (if any) and merges the file's own fields over it.
inline Json resolve_config(const Json &raw, const std::vector<std::string> &overrides = {}) {
  if (!raw.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  Json merged = raw.contains("preset") && raw["preset"].is_string()
                    ? preset_json(raw["preset"].get<std::string>())
                    : Json::object();
  merged.merge_patch(raw);
  for (const auto &o : overrides) {
    apply_override(merged, o);
  }
  return merged;
}

inline Json load_config_json(const std::filesystem::path &path,
                             const std::vector<std::string> &overrides = {}) {
  Json raw;
  {
    auto in = detail::open_for_read(path);
    raw = Json::parse(in, nullptr, false);
  }
  if (raw.is_discarded()) {
    throw ConfigError(path.string() + ": not valid JSON");
  }
  return resolve_config(raw, overrides);
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

class Checker {
public:
  explicit Checker(const Json &root) : root_(root) {}

  const Json *find(const std::string &field) const {
    const Json *node = &root_;
    for (const auto &part : split(field, '.')) {
      if (!node->is_object() || !node->contains(part)) {
        return nullptr;
      }
      node = &(*node)[part];
    }
    return node;
  }

  void fail(const std::string &field, const std::string &message) {
    diags_.push_back({field, message});
  }

  std::optional<double> number(const std::string &field, bool required = true) {
    const Json *n = find(field);
    if (n == nullptr) {
      if (required) {
        fail(field, "missing");
      }
      return std::nullopt;
    }
    if (!n->is_number()) {
      fail(field, "must be a number");
      return std::nullopt;
    }
    return n->get<double>();
  }

  void positive(const std::string &field, bool required = true) {
    const auto v = number(field, required);
    if (v && !(*v > 0.0 && std::isfinite(*v))) {
      fail(field, "must be positive");
    }
  }

  std::optional<Matrix> matrix(const std::string &field) {
    const Json *n = find(field);
    if (n == nullptr) {
      fail(field, "missing");
      return std::nullopt;
    }
    try {
      return matrix_from_json(*n, field);
    } catch (const ConfigError &e) {
      fail(field, e.what());
      return std::nullopt;
    }
  }

  void spd(const std::string &field, Eigen::Index dim) {
    const auto m = matrix(field);
    if (!m) {
      return;
    }
    if (m->rows() != dim || m->cols() != dim) {
      fail(field, "must be " + std::to_string(dim) + "x" + std::to_string(dim));
      return;
    }
    if (!is_symmetric(*m) || Cholesky(*m).info() != Eigen::Success) {
      fail(field, "must be symmetric positive definite");
    }
  }

  void rate_pair(const std::string &field) {
    const Json *n = find(field);
    if (n == nullptr) {
      fail(field, "missing");
      return;
    }
    if (!n->is_array() || n->size() != 2 || !(*n)[0].is_number() || !(*n)[1].is_number()) {
      fail(field, "must be a pair [a, b]");
      return;
    }
    if (!((*n)[0].get<double>() > 0.0 && (*n)[1].get<double>() > 0.0)) {
      fail(field, "both entries must be positive");
    }
  }

  std::vector<Diagnostic> take() { return std::move(diags_); }

private:
  const Json &root_;
  std::vector<Diagnostic> diags_;
};

inline Eigen::Index model_dim(const std::string &name) {
  if (name == "double_well" || name == "double_well_variant") {
    return 1;
  }
  if (name == "michaelis_menten") {
    return 3;
  }
  return 0;
}

} // namespace detail

/// Empty iff the (resolved) config satisfies every RunConfig invariant.
inline std::vector<Diagnostic> validate_config(const Json &config) {
  detail::Checker c(config);
  if (!config.is_object()) {
    c.fail("", "config must be a JSON object");
    return c.take();
  }

  Eigen::Index dim = 0;
  const Json *name = c.find("model.name");
  if (name == nullptr || !name->is_string()) {
    c.fail("model.name", "missing model name");
  } else {
    dim = detail::model_dim(name->get<std::string>());
    if (dim == 0) {
      c.fail("model.name", "unknown model '" + name->get<std::string>() + "'");
    } else {
      try {
        ParamMap params;
        if (const Json *p = c.find("model.params"); p != nullptr) {
          for (const auto &[k, v] : p->items()) {
            params[k] = v.get<double>();
          }
        }
        const ModelSpec m = builtin_model(name->get<std::string>(), params);
        if (!(std::abs(m.diffusion_param(0, 0)) > 0.0)) {
          c.fail("model.params.sigma", "must be nonzero");
        }
      } catch (const std::exception &e) {
        c.fail("model.params", e.what());
      }
    }
  }

  c.positive("simulation.delta");
  const auto delta = c.number("simulation.delta", false);
  const auto horizon = c.number("simulation.T", false);
  const auto steps = c.number("simulation.steps", false);
  if (!horizon && !steps) {
    c.fail("simulation.T", "one of simulation.T or simulation.steps is required");
  }
  if (horizon && !(*horizon > 0.0)) {
    c.fail("simulation.T", "must be positive");
  }
  if (steps && !(*steps >= 1.0 && *steps == std::floor(*steps))) {
    c.fail("simulation.steps", "must be a positive integer");
  }
  if (horizon && delta && *delta > 0.0) {
    const double implied = *horizon / *delta;
    if (std::abs(implied - std::round(implied)) > 1e-6) {
      c.fail("simulation.T", "must be an integer multiple of simulation.delta");
    }
    if (steps && std::abs(*steps * *delta - *horizon) > 1e-9 * *horizon) {
      c.fail("simulation.T", "inconsistent with simulation.steps * simulation.delta");
    }
  }
  if (const Json *x0 = c.find("simulation.x0"); x0 == nullptr) {
    c.fail("simulation.x0", "missing");
  } else {
    try {
      const Vector v = vector_from_json(*x0, "simulation.x0");
      if (dim > 0 && v.size() != dim) {
        c.fail("simulation.x0", "must have " + std::to_string(dim) + " entries");
      }
    } catch (const ConfigError &e) {
      c.fail("simulation.x0", e.what());
    }
  }

  if (const Json *k = c.find("kernel.kind"); k != nullptr && (!k->is_string() || *k != "gaussian")) {
    c.fail("kernel.kind", "only 'gaussian' is supported");
  }
  c.positive("kernel.bandwidth");

  const Json *kind = c.find("prior.kind");
  const std::string pk = kind != nullptr && kind->is_string() ? kind->get<std::string>() : "";
  if (pk == "t") {
    c.positive("prior.dof");
    if (dim > 0) {
      c.spd("prior.scale", dim);
    }
  } else if (pk == "hs") {
    c.positive("prior.local_shape");
    c.positive("prior.global_shape");
    c.rate_pair("prior.local_rate_hypers");
    c.rate_pair("prior.global_rate_hypers");
  } else if (pk == "ridge") {
    c.positive("prior.gamma");
  } else {
    c.fail("prior.kind", "must be one of t, hs, ridge");
  }
  if (pk == "t" || pk == "hs") {
    const auto sdof = c.number("prior.sigma_dof");
    if (sdof && dim > 0 && !(*sdof > static_cast<double>(dim) - 1.0)) {
      c.fail("prior.sigma_dof", "must exceed dim - 1");
    }
    if (dim > 0) {
      c.spd("prior.sigma_scale", dim);
    }
  }

  const auto iters = c.number("chain.iters");
  const auto burn = c.number("chain.burn_in");
  if (burn && *burn < 0.0) {
    c.fail("chain.burn_in", "must be nonnegative");
  }
  if (iters && burn && !(*iters > *burn)) {
    c.fail("chain.iters", "must exceed chain.burn_in");
  }
  const auto thin = c.number("chain.thin", false);
  if (thin && !(*thin >= 1.0)) {
    c.fail("chain.thin", "must be at least 1");
  }
  const auto chains = c.number("chain.n_chains", false);
  if (chains && !(*chains >= 1.0)) {
    c.fail("chain.n_chains", "must be at least 1");
  }

  for (const char *f : {"eval.mse_points", "eval.density_points"}) {
    const auto v = c.number(f, false);
    if (v && !(*v >= 2.0)) {
      c.fail(f, "must be at least 2");
    }
  }
  const auto ext = c.number("eval.domain_extension", false);
  if (ext && !(*ext >= 0.0)) {
    c.fail("eval.domain_extension", "must be nonnegative");
  }
  return c.take();
}

// ---------------------------------------------------------------------------
// Construction

namespace detail {

template <class T>
T get_or(const Json &j, const char *key, T fallback) {
  return j.contains(key) ? j[key].get<T>() : fallback;
}

} // namespace detail

/// Builds a RunConfig from a resolved config; throws ConfigError listing every diagnostic.
inline RunConfig build_run_config(const Json &config) {
  const auto diags = validate_config(config);
  if (!diags.empty()) {
    std::string msg = "invalid config:";
    for (const auto &d : diags) {
      msg += "\n  " + d.field + ": " + d.message;
    }
    throw ConfigError(msg);
  }
  RunConfig rc;
  rc.source = config;
  rc.preset = detail::get_or<std::string>(config, "preset", "");
  rc.model_name = config["model"]["name"].get<std::string>();
  if (config["model"].contains("params")) {
    for (const auto &[k, v] : config["model"]["params"].items()) {
      rc.model_params[k] = v.get<double>();
    }
  }
  const Json &sim = config["simulation"];
  rc.simulation.x0 = vector_from_json(sim["x0"], "simulation.x0");
  rc.simulation.delta = sim["delta"].get<double>();
  rc.simulation.steps = sim.contains("steps")
                            ? sim["steps"].get<Eigen::Index>()
                            : static_cast<Eigen::Index>(std::llround(sim["T"].get<double>() / rc.simulation.delta));
  rc.simulation.seed = detail::get_or<std::uint64_t>(sim, "seed", 1);
  rc.kernel.bandwidth = config["kernel"]["bandwidth"].get<double>();

  const Json &p = config["prior"];
  const std::string kind = p["kind"].get<std::string>();
  if (kind == "t") {
    TPriorConfig t;
    t.dof = p["dof"].get<double>();
    t.scale = matrix_from_json(p["scale"], "prior.scale");
    t.scalar_mode = detail::get_or<bool>(p, "scalar_mode", true);
    t.inverse_prior_scale = detail::get_or<bool>(p, "inverse_prior_scale", false);
    t.sigma_dof = p["sigma_dof"].get<double>();
    t.sigma_scale = matrix_from_json(p["sigma_scale"], "prior.sigma_scale");
    rc.prior = t;
  } else if (kind == "hs") {
    HsPriorConfig h;
    h.local_shape = p["local_shape"].get<double>();
    h.global_shape = p["global_shape"].get<double>();
    h.local_rate_a = p["local_rate_hypers"][0].get<double>();
    h.local_rate_b = p["local_rate_hypers"][1].get<double>();
    h.global_rate_a = p["global_rate_hypers"][0].get<double>();
    h.global_rate_b = p["global_rate_hypers"][1].get<double>();
    h.sigma_dof = p["sigma_dof"].get<double>();
    h.sigma_scale = matrix_from_json(p["sigma_scale"], "prior.sigma_scale");
    rc.prior = h;
  } else {
    rc.prior = RidgeConfig{p["gamma"].get<double>()};
  }

  const Json &ch = config["chain"];
  rc.chain.settings.iters = ch["iters"].get<int>();
  rc.chain.settings.burn_in = ch["burn_in"].get<int>();
  rc.chain.settings.thin = detail::get_or<int>(ch, "thin", 1);
  rc.chain.n_chains = detail::get_or<int>(ch, "n_chains", 1);
  rc.chain.seed = detail::get_or<std::uint64_t>(ch, "seed", 1);

  if (config.contains("eval")) {
    const Json &ev = config["eval"];
    rc.eval.mse_points = detail::get_or<Eigen::Index>(ev, "mse_points", 200);
    rc.eval.density_points = detail::get_or<Eigen::Index>(ev, "density_points", 2001);
    rc.eval.domain_extension = detail::get_or<double>(ev, "domain_extension", 0.2);
    rc.eval.use_estimated_sigma = detail::get_or<bool>(ev, "use_estimated_sigma", true);
  }
  if (config.contains("fit")) {
    rc.x0_from_first_observation = detail::get_or<bool>(config["fit"], "x0_from_first_observation", true);
  }
  rc.output_dir = detail::get_or<std::string>(config, "output_dir", "out");
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path &path,
                                 const std::vector<std::string> &overrides = {}) {
  return build_run_config(load_config_json(path, overrides));
}

inline RunConfig preset_config(const std::string &name, const std::vector<std::string> &overrides = {}) {
  return build_run_config(resolve_config(Json{{"preset", name}}, overrides));
}

inline std::string prior_kind(const FitPrior &prior) {
  switch (prior.index()) {
  case 0:
    return "t";
  case 1:
    return "hs";
  default:
    return "ridge";
  }
}

} // namespace sdelearn

#endif // SDELEARN_CONFIG_HPP
