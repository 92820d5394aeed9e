#ifndef SDELEARN_GIBBS_HPP
#define SDELEARN_GIBBS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sdelearn/errors.hpp"
#include "sdelearn/linalg.hpp"
#include "sdelearn/randdist.hpp"
#include "sdelearn/rkhs.hpp"

namespace sdelearn {

// ---------------------------------------------------------------------------
// Prior configurations

/// t-type prior: beta_i ~ N(0, Lambda_i), Lambda_i ~ IW_d(dof + d - 1, scale),
/// S S^T ~ IW_d(sigma_dof, sigma_scale).
///
/// In scalar mode Lambda_i = lambda_i I with lambda_i ~ IG(dof/2, u/2),
/// u = trace(scale)/d; for d = 1 this is the same law as the matrix mode.
struct TPriorConfig {
  double dof = 2.0;
  Matrix scale = Matrix::Constant(1, 1, 4.0);
  double sigma_dof = 2.0;
  Matrix sigma_scale = Matrix::Constant(1, 1, 4.0);
  bool scalar_mode = true;
  /// Use U^{-1} + beta_i beta_i^T as the Lambda_i posterior scale instead of
  /// the conjugate U + beta_i beta_i^T.
  bool inverse_prior_scale = false;

  double scalar_shape() const { return 0.5 * dof; }
  double scalar_scale() const { return 0.5 * scale.trace() / static_cast<double>(scale.rows()); }

  void validate(Eigen::Index dim) const {
    if (!(dof > 0.0)) {
      throw ParameterError("TPriorConfig: dof must be positive");
    }
    if (scale.rows() != dim || sigma_scale.rows() != dim) {
      throw ParameterError("TPriorConfig: scale matrices must be dim x dim");
    }
    require_spd(scale, "TPriorConfig: scale");
    require_spd(sigma_scale, "TPriorConfig: sigma_scale");
    if (!(sigma_dof > static_cast<double>(dim) - 1.0)) {
      throw ParameterError("TPriorConfig: sigma_dof must exceed dim - 1");
    }
  }
};

/// Horseshoe-type global-local prior:
/// beta_i ~ N(0, lambda_i tau I), lambda_i ~ IG(local_shape, theta_i),
/// tau ~ IG(global_shape, theta0), theta_i ~ G(local_rate_a, local_rate_b),
/// theta0 ~ G(global_rate_a, global_rate_b), S S^T ~ IW_d(sigma_dof, sigma_scale).
struct HsPriorConfig {
  double local_shape = 0.5;
  double global_shape = 0.5;
  double local_rate_a = 0.5;
  double local_rate_b = 1.0;
  double global_rate_a = 0.5;
  double global_rate_b = 1.0;
  double sigma_dof = 2.0;
  Matrix sigma_scale = Matrix::Constant(1, 1, 4.0);

  void validate(Eigen::Index dim) const {
    if (!(local_shape > 0.0 && global_shape > 0.0)) {
      throw ParameterError("HsPriorConfig: shapes must be positive");
    }
    if (!(local_rate_a > 0.0 && local_rate_b > 0.0)) {
      throw ParameterError("HsPriorConfig: local rate hyperparameters must be positive");
    }
    if (!(global_rate_a > 0.0 && global_rate_b > 0.0)) {
      throw ParameterError("HsPriorConfig: global rate hyperparameters must be positive");
    }
    if (sigma_scale.rows() != dim) {
      throw ParameterError("HsPriorConfig: sigma_scale must be dim x dim");
    }
    require_spd(sigma_scale, "HsPriorConfig: sigma_scale");
    if (!(sigma_dof > static_cast<double>(dim) - 1.0)) {
      throw ParameterError("HsPriorConfig: sigma_dof must exceed dim - 1");
    }
  }
};

using PriorConfig = std::variant<TPriorConfig, HsPriorConfig>;

// ---------------------------------------------------------------------------
// State

/// Local scales: one scalar per center, or one d x d matrix per center.
struct LocalScales {
  Vector scalars;
  std::vector<Matrix> matrices;

  bool is_matrix() const { return !matrices.empty(); }
};

struct ChainState {
  Vector beta;
  Matrix sigma;
  LocalScales local;
  double tau = 1.0;
  Vector theta;
  double theta0 = 1.0;
};

struct PosteriorSamples {
  MatrixKernel kernel;
  Matrix centers;
  std::vector<ChainState> states;
  std::vector<int> sweeps;
  int burn_in = 0;
  int thin = 1;

  Eigen::Index dim() const { return kernel.output_dim(); }
};

struct ChainSettings {
  int iters = 2000;
  int burn_in = 500;
  int thin = 1;

  void validate() const {
    if (burn_in < 0 || !(iters > burn_in)) {
      throw ParameterError("ChainSettings: iters must exceed burn_in >= 0");
    }
    if (thin < 1) {
      throw ParameterError("ChainSettings: thin must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// beta | rest

/// Block-diagonal prior covariance eta: per-center scalar variances
/// (eta_i = v_i I) or per-center d x d blocks.
struct PriorCovariance {
  Vector variances;
  std::vector<Matrix> blocks;

  static PriorCovariance scalar(Vector v) { return PriorCovariance{std::move(v), {}}; }
  static PriorCovariance matrix(std::vector<Matrix> b) { return PriorCovariance{Vector(), std::move(b)}; }

  bool is_scalar() const { return blocks.empty(); }

  Eigen::Index count() const {
    return is_scalar() ? variances.size() : static_cast<Eigen::Index>(blocks.size());
  }

  /// eta^{-1} added onto a dense precision matrix.
  void add_inverse_to(Matrix &precision, Eigen::Index dim) const {
    for (Eigen::Index i = 0; i < count(); ++i) {
      if (is_scalar()) {
        precision.diagonal().segment(i * dim, dim).array() += 1.0 / variances(i);
      } else {
        const Matrix &blk = blocks[static_cast<std::size_t>(i)];
        const Cholesky llt = cholesky_with_jitter(blk, "prior covariance block");
        precision.block(i * dim, i * dim, dim, dim) +=
            symmetrized(llt.solve(Matrix::Identity(dim, dim)));
      }
    }
  }
};

/// N(mean, C) with C^{-1} = Delta K^T D K + eta^{-1}.
///
/// Holds Cholesky factors of the precision, never C itself. When the design
/// is separable and eta is a scalar-per-center covariance the precision
/// splits into d independent m x m blocks in the eigenbasis Q of B S^{-1} B;
/// `factors` then has d entries and beta_i = mean_i + Q gamma_i.
struct BetaConditional {
  Vector mean;
  Eigen::Index dim = 1;
  Eigen::Index count = 0;
  bool decoupled = false;
  Matrix rotation;
  std::vector<Cholesky> factors;

  /// Dense covariance C (diagnostics and tests).
  Matrix covariance() const {
    const Eigen::Index n = dim * count;
    if (!decoupled) {
      return factors.front().solve(Matrix::Identity(n, n));
    }
    Matrix c = Matrix::Zero(n, n);
    for (Eigen::Index l = 0; l < dim; ++l) {
      const Matrix block = factors[static_cast<std::size_t>(l)].solve(Matrix::Identity(count, count));
      const Matrix q = rotation.col(l) * rotation.col(l).transpose();
      c += kronecker(block, q);
    }
    return c;
  }
};

inline BetaConditional beta_conditional_params(const DriftDesign &design, const Matrix &param_cov,
                                               const PriorCovariance &prior_cov) {
  const Eigen::Index d = design.dim();
  const Eigen::Index m = design.count();
  if (prior_cov.count() != m) {
    throw ParameterError("beta_conditional_params: one prior block per center is required");
  }
  if (prior_cov.is_scalar() && (prior_cov.variances.array() <= 0.0).any()) {
    throw ParameterError("beta_conditional_params: prior variances must be positive");
  }
  BetaConditional out;
  out.dim = d;
  out.count = m;
  const Vector rhs = design.rhs(param_cov);

  if (design.separable() && prior_cov.is_scalar()) {
    auto [eigvals, q] = design.coupling_eigen(param_cov);
    out.decoupled = true;
    out.rotation = q;
    const Matrix rhs_rows = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                           Eigen::RowMajor>>(rhs.data(), m, d) * q;
    Matrix gamma_mean(m, d);
    const Vector inv_var = prior_cov.variances.cwiseInverse();
    out.factors.reserve(static_cast<std::size_t>(d));
    for (Eigen::Index l = 0; l < d; ++l) {
      Matrix precision = (design.delta() * eigvals(l)) * design.weighted_gram();
      precision.diagonal() += inv_var;
      out.factors.push_back(cholesky_with_jitter(precision, "beta_conditional_params"));
      gamma_mean.col(l) = out.factors.back().solve(Vector(rhs_rows.col(l)));
    }
    const Matrix mean_rows = gamma_mean * q.transpose();
    out.mean.resize(m * d);
    for (Eigen::Index i = 0; i < m; ++i) {
      out.mean.segment(i * d, d) = mean_rows.row(i).transpose();
    }
    return out;
  }

  Matrix precision = design.normal_matrix(param_cov);
  prior_cov.add_inverse_to(precision, d);
  out.factors.push_back(cholesky_with_jitter(precision, "beta_conditional_params"));
  out.mean = out.factors.front().solve(rhs);
  out.rotation = Matrix::Identity(d, d);
  return out;
}

inline Vector sample_beta(const BetaConditional &params, RngStream &rng) {
  if (!params.decoupled) {
    return sample_mvnormal_precision(params.mean, params.factors.front(), rng);
  }
  const Eigen::Index d = params.dim;
  const Eigen::Index m = params.count;
  Matrix gamma(m, d);
  for (Eigen::Index l = 0; l < d; ++l) {
    Vector z = rng.normal_vector(m);
    params.factors[static_cast<std::size_t>(l)].matrixU().solveInPlace(z);
    gamma.col(l) = z;
  }
  const Matrix dev = gamma * params.rotation.transpose();
  Vector beta = params.mean;
  for (Eigen::Index i = 0; i < m; ++i) {
    beta.segment(i * d, d) += dev.row(i).transpose();
  }
  return beta;
}

// ---------------------------------------------------------------------------
// S S^T | rest

/// V_post = Delta^{-1} sum sigma0^{-1} r r^T sigma0^{-T} + V.
inline Matrix sigma_posterior_scale(const DriftDesign &design, const Vector &beta,
                                    const Matrix &sigma_scale) {
  return symmetrized(design.residual_scatter(beta) + sigma_scale);
}

/// Draw S S^T ~ IW_d(n + m, V_post).
inline Matrix sample_sigma(const DriftDesign &design, const Vector &beta, double sigma_dof,
                           const Matrix &sigma_scale, RngStream &rng) {
  const double dof = sigma_dof + static_cast<double>(design.count());
  return sample_inv_wishart(dof, sigma_posterior_scale(design, beta, sigma_scale), rng);
}

// ---------------------------------------------------------------------------
// Local and global scales

inline Vector weight_block(const Vector &beta, Eigen::Index i, Eigen::Index d) {
  return beta.segment(i * d, d);
}

/// t prior: Lambda_i ~ IW_d(dof + d, U + beta_i beta_i^T) per center, or in
/// scalar mode lambda_i ~ IG(dof/2 + d/2, u/2 + |beta_i|^2 / 2).
inline LocalScales sample_local_scales_t(const Vector &beta, Eigen::Index dim,
                                         const TPriorConfig &config, RngStream &rng) {
  const Eigen::Index m = beta.size() / dim;
  LocalScales out;
  if (config.scalar_mode) {
    out.scalars.resize(m);
    const double shape = config.scalar_shape() + 0.5 * static_cast<double>(dim);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double scale = config.scalar_scale() + 0.5 * weight_block(beta, i, dim).squaredNorm();
      out.scalars(i) = sample_inv_gamma(shape, scale, rng);
    }
    return out;
  }
  Matrix base = config.scale;
  if (config.inverse_prior_scale) {
    base = symmetrized(cholesky_with_jitter(config.scale, "TPriorConfig scale")
                           .solve(Matrix::Identity(dim, dim)));
  }
  const double dof = config.dof + static_cast<double>(dim);
  out.matrices.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vector b = weight_block(beta, i, dim);
    out.matrices.push_back(sample_inv_wishart(dof, symmetrized(base + b * b.transpose()), rng));
  }
  return out;
}

/// lambda_k ~ IG((d + 2 alpha_k)/2, |beta_k|^2 / (2 tau) + theta_k).
inline Vector sample_local_scales_hs(const Vector &beta, Eigen::Index dim, double tau,
                                     const Vector &theta, const HsPriorConfig &config,
                                     RngStream &rng) {
  const Eigen::Index m = beta.size() / dim;
  if (theta.size() != m) {
    throw ParameterError("sample_local_scales_hs: one theta per center is required");
  }
  if (!(tau > 0.0)) {
    throw ParameterError("sample_local_scales_hs: tau must be positive");
  }
  const double shape = 0.5 * (static_cast<double>(dim) + 2.0 * config.local_shape);
  Vector out(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double scale = 0.5 * weight_block(beta, k, dim).squaredNorm() / tau + theta(k);
    out(k) = sample_inv_gamma(shape, scale, rng);
  }
  return out;
}

/// (shape, scale) of the tau conditional:
/// ((m d + 2 alpha0)/2, theta0 + sum |beta_k|^2 / (2 lambda_k)).
inline std::pair<double, double> global_scale_hs_params(const Vector &beta, Eigen::Index dim,
                                                        const Vector &local, double theta0,
                                                        const HsPriorConfig &config) {
  const Eigen::Index m = beta.size() / dim;
  double quad = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    quad += weight_block(beta, k, dim).squaredNorm() / local(k);
  }
  const double shape = 0.5 * (static_cast<double>(m * dim) + 2.0 * config.global_shape);
  return {shape, theta0 + 0.5 * quad};
}

inline double sample_global_scale_hs(const Vector &beta, Eigen::Index dim, const Vector &local,
                                     double theta0, const HsPriorConfig &config, RngStream &rng) {
  const auto [shape, scale] = global_scale_hs_params(beta, dim, local, theta0, config);
  return sample_inv_gamma(shape, scale, rng);
}

/// theta_k ~ G(alpha_k + a, b + 1/lambda_k), theta0 ~ G(alpha0 + a0, b0 + 1/tau).
inline std::pair<Vector, double> sample_rate_hypers_hs(const Vector &local, double tau,
                                                       const HsPriorConfig &config,
                                                       RngStream &rng) {
  Vector theta(local.size());
  for (Eigen::Index k = 0; k < local.size(); ++k) {
    theta(k) = sample_gamma(config.local_shape + config.local_rate_a,
                            config.local_rate_b + 1.0 / local(k), rng);
  }
  const double theta0 = sample_gamma(config.global_shape + config.global_rate_a,
                                     config.global_rate_b + 1.0 / tau, rng);
  return {std::move(theta), theta0};
}

// ---------------------------------------------------------------------------
// Chains

namespace detail {

inline Matrix initial_sigma(double dof, const Matrix &scale) {
  const double d = static_cast<double>(scale.rows());
  // Prior mean when it exists, prior mode otherwise.
  if (dof > d + 1.0) {
    return scale / (dof - d - 1.0);
  }
  return scale / (dof + d + 1.0);
}

inline PriorCovariance prior_covariance(const ChainState &state) {
  if (state.local.is_matrix()) {
    return PriorCovariance::matrix(state.local.matrices);
  }
  return PriorCovariance::scalar(state.local.scalars * state.tau);
}

} // namespace detail

constexpr double kBetaDivergenceBound = 1e8;

inline ChainState initial_state(const DriftDesign &design, const PriorConfig &prior) {
  const Eigen::Index d = design.dim();
  const Eigen::Index m = design.count();
  ChainState s;
  s.beta = Vector::Zero(m * d);
  s.tau = 1.0;
  s.theta0 = 1.0;
  if (const auto *t = std::get_if<TPriorConfig>(&prior)) {
    s.sigma = detail::initial_sigma(t->sigma_dof, t->sigma_scale);
    if (t->scalar_mode) {
      s.local.scalars = Vector::Ones(m);
    } else {
      s.local.matrices.assign(static_cast<std::size_t>(m), Matrix::Identity(d, d));
    }
  } else {
    const auto &hs = std::get<HsPriorConfig>(prior);
    s.sigma = detail::initial_sigma(hs.sigma_dof, hs.sigma_scale);
    s.local.scalars = Vector::Ones(m);
    s.theta = Vector::Ones(m);
  }
  return s;
}

/// One Gibbs sweep in the fixed order beta, S S^T, local scales and, for the
/// Horseshoe prior, tau and the rate hyperparameters.
inline void gibbs_sweep(const DriftDesign &design, const PriorConfig &prior, ChainState &state,
                        RngStream &rng) {
  const Eigen::Index d = design.dim();
  const BetaConditional cond =
      beta_conditional_params(design, state.sigma, detail::prior_covariance(state));
  state.beta = sample_beta(cond, rng);
  if (const auto *t = std::get_if<TPriorConfig>(&prior)) {
    state.sigma = sample_sigma(design, state.beta, t->sigma_dof, t->sigma_scale, rng);
    state.local = sample_local_scales_t(state.beta, d, *t, rng);
    return;
  }
  const auto &hs = std::get<HsPriorConfig>(prior);
  state.sigma = sample_sigma(design, state.beta, hs.sigma_dof, hs.sigma_scale, rng);
  state.local.scalars = sample_local_scales_hs(state.beta, d, state.tau, state.theta, hs, rng);
  state.tau = sample_global_scale_hs(state.beta, d, state.local.scalars, state.theta0, hs, rng);
  auto [theta, theta0] = sample_rate_hypers_hs(state.local.scalars, state.tau, hs, rng);
  state.theta = std::move(theta);
  state.theta0 = theta0;
}

inline PosteriorSamples run_chain(const DriftDesign &design, const PriorConfig &prior,
                                  const ChainSettings &settings, RngStream &rng) {
  settings.validate();
  std::visit([&](const auto &p) { p.validate(design.dim()); }, prior);
  PosteriorSamples out;
  out.kernel = design.kernel();
  out.centers = design.centers();
  out.burn_in = settings.burn_in;
  out.thin = settings.thin;
  out.states.reserve(static_cast<std::size_t>((settings.iters - settings.burn_in) / settings.thin + 1));
  ChainState state = initial_state(design, prior);
  for (int sweep = 0; sweep < settings.iters; ++sweep) {
    try {
      gibbs_sweep(design, prior, state, rng);
    } catch (const DivergenceError &) {
      throw;
    } catch (const NumericError &e) {
      throw NumericError("gibbs.run_chain: sweep " + std::to_string(sweep) + ": " + e.what());
    } catch (const ParameterError &e) {
      throw NumericError("gibbs.run_chain: sweep " + std::to_string(sweep) + ": " + e.what());
    }
    if (!state.beta.allFinite() || state.beta.norm() > kBetaDivergenceBound) {
      throw DivergenceError("gibbs.run_chain: weight vector diverged",
                            static_cast<std::size_t>(sweep));
    }
    if (sweep >= settings.burn_in && (sweep - settings.burn_in) % settings.thin == 0) {
      out.states.push_back(state);
      out.sweeps.push_back(sweep);
    }
  }
  return out;
}

inline PosteriorSamples run_chain(const Trajectory &traj, const MatrixKernel &kernel,
                                  const ModelSpec &model, const PriorConfig &prior,
                                  const ChainSettings &settings, RngStream &rng) {
  const DriftDesign design(traj, kernel, model);
  return run_chain(design, prior, settings, rng);
}

/// Concatenates the stored states of several chains on the same data.
inline PosteriorSamples merge_samples(const std::vector<PosteriorSamples> &chains) {
  if (chains.empty()) {
    throw ParameterError("merge_samples: no chains");
  }
  PosteriorSamples out;
  out.kernel = chains.front().kernel;
  out.centers = chains.front().centers;
  out.burn_in = chains.front().burn_in;
  out.thin = chains.front().thin;
  for (const auto &c : chains) {
    out.states.insert(out.states.end(), c.states.begin(), c.states.end());
    out.sweeps.insert(out.sweeps.end(), c.sweeps.begin(), c.sweeps.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct PosteriorSummary {
  DriftExpansion mean_expansion;
  Matrix mean_sigma;
  Vector weight_magnitudes;
  Matrix grid;
  Matrix mean_on_grid;
  Matrix lower;
  Matrix upper;
};

namespace detail {

/// Linear-interpolation empirical quantile of sorted values.
inline double sorted_quantile(const std::vector<double> &sorted, double p) {
  if (sorted.size() == 1) {
    return sorted.front();
  }
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

} // namespace detail

/// Posterior means plus pointwise 2.5 / 97.5 percent bands of the drift on
/// `grid` (rows are points).
inline PosteriorSummary summarize_posterior(const PosteriorSamples &samples, const Matrix &grid) {
  if (samples.states.empty()) {
    throw ParameterError("summarize_posterior: no stored states");
  }
  const auto n_states = static_cast<double>(samples.states.size());
  const Eigen::Index d = samples.dim();
  Vector mean_beta = Vector::Zero(samples.states.front().beta.size());
  Matrix mean_sigma = Matrix::Zero(d, d);
  for (const auto &s : samples.states) {
    mean_beta += s.beta;
    mean_sigma += s.sigma;
  }
  mean_beta /= n_states;
  mean_sigma /= n_states;

  PosteriorSummary out{DriftExpansion{samples.kernel, samples.centers, mean_beta},
                       mean_sigma,
                       Vector(samples.centers.rows()),
                       grid,
                       Matrix(),
                       Matrix(grid.rows(), d),
                       Matrix(grid.rows(), d)};
  for (Eigen::Index i = 0; i < samples.centers.rows(); ++i) {
    out.weight_magnitudes(i) = mean_beta.segment(i * d, d).norm();
  }
  out.mean_on_grid = out.mean_expansion.evaluate_rows(grid);

  const Eigen::Index g = grid.rows();
  if (g == 0) {
    return out;
  }
  // values(point * d + coord, state)
  Matrix values(g * d, static_cast<Eigen::Index>(samples.states.size()));
  for (std::size_t s = 0; s < samples.states.size(); ++s) {
    const DriftExpansion e{samples.kernel, samples.centers, samples.states[s].beta};
    const Matrix v = e.evaluate_rows(grid);
    for (Eigen::Index p = 0; p < g; ++p) {
      values.block(p * d, static_cast<Eigen::Index>(s), d, 1) = v.row(p).transpose();
    }
  }
  std::vector<double> buf(samples.states.size());
  for (Eigen::Index p = 0; p < g; ++p) {
    for (Eigen::Index c = 0; c < d; ++c) {
      const auto row = values.row(p * d + c);
      for (std::size_t s = 0; s < buf.size(); ++s) {
        buf[s] = row(static_cast<Eigen::Index>(s));
      }
      std::sort(buf.begin(), buf.end());
      out.lower(p, c) = detail::sorted_quantile(buf, 0.025);
      out.upper(p, c) = detail::sorted_quantile(buf, 0.975);
    }
  }
  return out;
}

/// Fraction of centers whose posterior-mean weight norm is below
/// rel * max_j |beta_j|.
inline double near_zero_fraction(const Vector &weight_magnitudes, double rel = 1e-3) {
  const double top = weight_magnitudes.maxCoeff();
  if (!(top > 0.0)) {
    return 1.0;
  }
  const auto count = (weight_magnitudes.array() < rel * top).count();
  return static_cast<double>(count) / static_cast<double>(weight_magnitudes.size());
}

} // namespace sdelearn

#endif // SDELEARN_GIBBS_HPP
