#ifndef SDELEARN_SDE_HPP
#define SDELEARN_SDE_HPP

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sdelearn/errors.hpp"
#include "sdelearn/linalg.hpp"
#include "sdelearn/randdist.hpp"

namespace sdelearn {

using DriftFn = std::function<Vector(const Vector &)>;
using DiffusionFn = std::function<Matrix(const Vector &)>;
using ScalarFn = std::function<double(const Vector &)>;

/// dX = b(X) dt + sigma0(X) S dW with a known base sigma0 and a constant
/// parameter matrix S.
///
/// When the base is a scalar multiple of the identity, sigma0(x) = s(x) I,
/// `diffusion_scalar` holds s and `diffusion_base` is derived from it. The
/// samplers use that structure to avoid per-observation d x d algebra.
struct ModelSpec {
  std::string name;
  int dim = 1;
  DriftFn drift;
  DiffusionFn diffusion_base;
  ScalarFn diffusion_scalar;
  Matrix diffusion_param;

  bool has_scalar_diffusion() const { return static_cast<bool>(diffusion_scalar); }

  Matrix sigma0(const Vector &x) const {
    if (diffusion_scalar) {
      return diffusion_scalar(x) * Matrix::Identity(dim, dim);
    }
    return diffusion_base(x);
  }

  /// sigma(x) = sigma0(x) S.
  Matrix sigma(const Vector &x) const { return sigma0(x) * diffusion_param; }

  /// sigma0(x) cov sigma0(x)^T for a given parameter covariance S S^T.
  Matrix diffusion_covariance(const Vector &x, const Matrix &param_cov) const {
    if (diffusion_scalar) {
      const double s = diffusion_scalar(x);
      return s * s * param_cov;
    }
    const Matrix base = diffusion_base(x);
    return base * param_cov * base.transpose();
  }

  Matrix diffusion_covariance(const Vector &x) const {
    return diffusion_covariance(x, diffusion_param * diffusion_param.transpose());
  }
};

/// Constant-coefficient helper: sigma0 = I, so sigma = S.
inline ModelSpec make_additive_model(std::string name, DriftFn drift,
                                     Matrix diffusion_param) {
  ModelSpec m;
  m.name = std::move(name);
  m.dim = static_cast<int>(diffusion_param.rows());
  m.drift = std::move(drift);
  m.diffusion_scalar = [](const Vector &) { return 1.0; };
  m.diffusion_param = std::move(diffusion_param);
  return m;
}

/// A single path observed at t_i = t_0 + i * delta, i = 1..m, started at x0.
class Trajectory {
public:
  Trajectory(Vector x0, double delta, Matrix states, double t0 = 0.0)
      : x0_(std::move(x0)), delta_(delta), t0_(t0), states_(std::move(states)) {
    if (!(delta_ > 0.0) || !std::isfinite(delta_)) {
      throw ParameterError("Trajectory: delta must be positive");
    }
    if (states_.cols() != x0_.size()) {
      throw ParameterError("Trajectory: state dimension does not match x0");
    }
    if (states_.rows() < 1) {
      throw ParameterError("Trajectory: at least one observation is required");
    }
    times_.resize(states_.rows());
    for (Eigen::Index i = 0; i < states_.rows(); ++i) {
      times_(i) = t0_ + static_cast<double>(i + 1) * delta_;
    }
  }

  /// Builds from explicit time stamps, checking the uniform-gap invariant.
  static Trajectory from_times(Vector x0, const Vector &times, Matrix states) {
    if (times.size() != states.rows()) {
      throw ParameterError("Trajectory: times and states lengths differ");
    }
    if (times.size() < 2) {
      throw ParameterError("Trajectory: at least two time stamps are required");
    }
    const double delta = times(1) - times(0);
    if (!(delta > 0.0)) {
      throw ParameterError("Trajectory: times must be strictly increasing");
    }
    for (Eigen::Index i = 1; i < times.size(); ++i) {
      const double gap = times(i) - times(i - 1);
      if (!(gap > 0.0)) {
        throw ParameterError("Trajectory: times must be strictly increasing");
      }
      // Tolerance covers decimal round-off of printed time stamps.
      if (std::abs(gap - delta) > 1e-9 * delta) {
        throw ParameterError("Trajectory: time gaps are not uniform at index " +
                             std::to_string(i));
      }
    }
    return Trajectory(std::move(x0), delta, std::move(states), times(0) - delta);
  }

  const Vector &x0() const noexcept { return x0_; }
  double delta() const noexcept { return delta_; }
  double t0() const noexcept { return t0_; }
  const Vector &times() const noexcept { return times_; }
  const Matrix &states() const noexcept { return states_; }
  Eigen::Index size() const noexcept { return states_.rows(); }
  int dim() const noexcept { return static_cast<int>(x0_.size()); }

  /// Left endpoints x0, X(t_1), ..., X(t_{m-1}) as rows.
  Matrix left_endpoints() const {
    Matrix left(states_.rows(), states_.cols());
    left.row(0) = x0_.transpose();
    if (states_.rows() > 1) {
      left.bottomRows(states_.rows() - 1) = states_.topRows(states_.rows() - 1);
    }
    return left;
  }

  /// Same observations, with the anchor x0 replaced.
  Trajectory with_x0(Vector x0) const {
    return Trajectory(std::move(x0), delta_, states_, t0_);
  }

  /// Drops the first `count` observations; the last dropped one becomes x0.
  Trajectory discard_prefix(Eigen::Index count) const {
    if (count <= 0) {
      return *this;
    }
    if (count >= states_.rows()) {
      throw ParameterError("Trajectory: discard window covers the whole path");
    }
    return Trajectory(states_.row(count - 1).transpose(), delta_,
                      states_.bottomRows(states_.rows() - count),
                      t0_ + static_cast<double>(count) * delta_);
  }

  /// Splits into [0, k) and [k, m) where the second part is anchored at
  /// X(t_k).
  std::pair<Trajectory, Trajectory> split(Eigen::Index k) const {
    if (k < 1 || k >= states_.rows()) {
      throw ParameterError("Trajectory: split index out of range");
    }
    Trajectory head(x0_, delta_, states_.topRows(k), t0_);
    Trajectory tail(states_.row(k - 1).transpose(), delta_,
                    states_.bottomRows(states_.rows() - k),
                    t0_ + static_cast<double>(k) * delta_);
    return {std::move(head), std::move(tail)};
  }

private:
  Vector x0_;
  double delta_;
  double t0_;
  Matrix states_;
  Vector times_;
};

/// Stacked increments (X(t_1) - x0, X(t_2) - X(t_1), ...), length m*d.
inline Vector increments(const Trajectory &traj) {
  const Matrix diff = traj.states() - traj.left_endpoints();
  Vector theta(diff.size());
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    theta.segment(i * diff.cols(), diff.cols()) = diff.row(i).transpose();
  }
  return theta;
}

// ---------------------------------------------------------------------------

constexpr double kDivergenceBound = 1e6;

/// Euler-Maruyama path with left-endpoint coefficients.
/// `discard` extra leading steps are simulated and dropped, the last dropped
/// state becoming the recorded x0.
inline Trajectory euler_maruyama_simulate(const ModelSpec &model,
                                          const Vector &x0, double delta,
                                          Eigen::Index steps, RngStream &rng,
                                          Eigen::Index discard = 0) {
  if (!(delta > 0.0)) {
    throw ParameterError("euler_maruyama_simulate: delta must be positive");
  }
  if (steps < 1) {
    throw ParameterError("euler_maruyama_simulate: steps must be >= 1");
  }
  if (x0.size() != model.dim) {
    throw ParameterError("euler_maruyama_simulate: x0 dimension mismatch");
  }
  const Eigen::Index total = steps + discard;
  const double sqrt_delta = std::sqrt(delta);
  Matrix states(total, model.dim);
  Vector x = x0;
  for (Eigen::Index i = 0; i < total; ++i) {
    const Vector z = rng.normal_vector(model.dim);
    x = x + model.drift(x) * delta + model.sigma(x) * (sqrt_delta * z);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceBound) {
      throw DivergenceError("euler_maruyama_simulate: path diverged",
                            static_cast<std::size_t>(i + 1));
    }
    states.row(i) = x.transpose();
  }
  Trajectory full(x0, delta, std::move(states));
  return full.discard_prefix(discard);
}

/// log N(x_next | x + b(x) delta, sigma0 S S^T sigma0^T delta) for an
/// arbitrary drift callable.
template <class Drift>
double em_step_logdensity(const ModelSpec &model, const Vector &x,
                          const Vector &x_next, double delta,
                          const Drift &drift) {
  if (!(delta > 0.0)) {
    throw ParameterError("em_step_logdensity: delta must be positive");
  }
  const Vector mean = x + drift(x) * delta;
  const Matrix cov = model.diffusion_covariance(x) * delta;
  const Cholesky llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericError("em_step_logdensity: transition covariance is singular");
  }
  const double d = static_cast<double>(x.size());
  const Vector w = llt.matrixL().solve(x_next - mean);
  return -0.5 * d * std::log(2.0 * std::numbers::pi) -
         0.5 * log_det_from_cholesky(llt) - 0.5 * w.squaredNorm();
}

inline double em_step_logdensity(const ModelSpec &model, const Vector &x,
                                 const Vector &x_next, double delta) {
  return em_step_logdensity(model, x, x_next, delta, model.drift);
}

/// Sum of EM transition log densities, first pair (x0, X(t_1)).
template <class Drift>
double em_path_loglik(const Trajectory &traj, const ModelSpec &model,
                      const Drift &drift) {
  double total = 0.0;
  Vector prev = traj.x0();
  for (Eigen::Index i = 0; i < traj.size(); ++i) {
    const Vector next = traj.states().row(i).transpose();
    total += em_step_logdensity(model, prev, next, traj.delta(), drift);
    prev = next;
  }
  return total;
}

inline double em_path_loglik(const Trajectory &traj, const ModelSpec &model) {
  return em_path_loglik(traj, model, model.drift);
}

// ---------------------------------------------------------------------------
// Benchmark models

using ParamMap = std::map<std::string, double>;

namespace detail {

inline double param_or(const ParamMap &p, const std::string &key, double fallback) {
  const auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline double require_param(const ParamMap &p, const std::string &key,
                            const std::string &model) {
  const auto it = p.find(key);
  if (it == p.end()) {
    throw ParameterError("builtin_model: " + model + " requires parameter '" +
                         key + "'");
  }
  return it->second;
}

} // namespace detail

inline Vector double_well_drift(const Vector &x) {
  return (4.0 * x.array() * (1.0 - x.array().square())).matrix();
}

inline Vector double_well_variant_drift(const Vector &x) {
  return (x.array() * (1.0 - x.array().square())).matrix();
}

struct MichaelisMentenRates {
  double k1;
  double k2;
  double km1;
  double km2;
  double c_total;
};

/// Reduced drift in (x_E, x_S, x_P) with x_ES = c_total - x_E.
inline Vector michaelis_menten_drift(const Vector &x, const MichaelisMentenRates &r) {
  const double e = x(0);
  const double s = x(1);
  const double p = x(2);
  const double es = r.c_total - e;
  Vector b(3);
  b(0) = -r.k1 * e * s - r.km2 * e * p + (r.km1 + r.k2) * es;
  b(1) = -r.k1 * e * s + r.km1 * es;
  b(2) = r.k2 * es - r.km2 * e * p;
  return b;
}

/// Models: double_well (b = 4x(1-x^2), sigma = s), double_well_variant
/// (b = x(1-x^2), sigma = s sqrt(1+x^2)) and michaelis_menten (3-D reduced
/// kinetics with additive noise s I).
inline ModelSpec builtin_model(const std::string &name, const ParamMap &params) {
  if (name == "double_well") {
    const double s = detail::param_or(params, "sigma", 1.0);
    return make_additive_model(name, double_well_drift, Matrix::Constant(1, 1, s));
  }
  if (name == "double_well_variant") {
    const double s = detail::param_or(params, "sigma", 1.0);
    ModelSpec m;
    m.name = name;
    m.dim = 1;
    m.drift = double_well_variant_drift;
    m.diffusion_scalar = [](const Vector &x) { return std::sqrt(1.0 + x(0) * x(0)); };
    m.diffusion_param = Matrix::Constant(1, 1, s);
    return m;
  }
  if (name == "michaelis_menten") {
    const MichaelisMentenRates rates{
        detail::require_param(params, "k1", name),
        detail::require_param(params, "k2", name),
        detail::require_param(params, "km1", name),
        detail::require_param(params, "km2", name),
        detail::require_param(params, "c_total", name)};
    const double s = detail::param_or(params, "sigma", 0.1);
    return make_additive_model(
        name, [rates](const Vector &x) { return michaelis_menten_drift(x, rates); },
        s * Matrix::Identity(3, 3));
  }
  throw ParameterError("builtin_model: unknown model '" + name + "'");
}

} // namespace sdelearn

#endif // SDELEARN_SDE_HPP
