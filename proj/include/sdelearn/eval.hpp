#ifndef SDELEARN_EVAL_HPP
#define SDELEARN_EVAL_HPP

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sdelearn/errors.hpp"
#include "sdelearn/gibbs.hpp"
#include "sdelearn/linalg.hpp"
#include "sdelearn/rkhs.hpp"
#include "sdelearn/sde.hpp"

namespace sdelearn {

/// Density tabulated on a grid with its trapezoid CDF.
struct DensityGrid {
  Vector xs;
  Vector pdf;
  Vector cdf;
  /// Set when a closed-form density has more than 1e-4 mass off the grid.
  bool tail_warning = false;
};

namespace detail {

inline void require_increasing(const Vector &xs, const char *who) {
  if (xs.size() < 2) {
    throw ParameterError(std::string(who) + ": grid needs at least two points");
  }
  for (Eigen::Index i = 1; i < xs.size(); ++i) {
    if (!(xs(i) > xs(i - 1))) {
      throw ParameterError(std::string(who) + ": grid must be strictly increasing");
    }
  }
}

inline Vector cumulative_trapezoid(const Vector &xs, const Vector &ys) {
  Vector out(xs.size());
  out(0) = 0.0;
  for (Eigen::Index i = 1; i < xs.size(); ++i) {
    out(i) = out(i - 1) + 0.5 * (xs(i) - xs(i - 1)) * (ys(i) + ys(i - 1));
  }
  return out;
}

/// Normalized density from unnormalized log values.
inline DensityGrid density_from_log(const Vector &xs, const Vector &log_pdf) {
  const double top = log_pdf.maxCoeff();
  Vector pdf = (log_pdf.array() - top).exp().matrix();
  Vector cdf = cumulative_trapezoid(xs, pdf);
  const double total = cdf(cdf.size() - 1);
  pdf /= total;
  cdf /= total;
  cdf(cdf.size() - 1) = 1.0;
  return DensityGrid{xs, pdf, cdf, false};
}

inline double integrate(const std::function<double(double)> &f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-12);
}

} // namespace detail

/// Unnormalized log stationary density of the 1-D benchmark models.
///
/// double_well (b = 4x(1-x^2), sigma = s): 2(2x^2 - x^4)/s^2.
/// double_well_variant (b = x(1-x^2), sigma = s sqrt(1+x^2)):
/// (2/s^2 - 1) log(1+x^2) - x^2/s^2.
inline std::function<double(double)> stationary_log_density(const std::string &model_name,
                                                            double s) {
  if (!(s > 0.0)) {
    throw ParameterError("true_stationary_density: sigma must be positive");
  }
  const double s2 = s * s;
  if (model_name == "double_well") {
    return [s2](double x) { return 2.0 * (2.0 * x * x - x * x * x * x) / s2; };
  }
  if (model_name == "double_well_variant") {
    return [s2](double x) { return (2.0 / s2 - 1.0) * std::log1p(x * x) - x * x / s2; };
  }
  throw ParameterError("true_stationary_density: no closed form for model '" + model_name + "'");
}

inline DensityGrid true_stationary_density(const std::string &model_name, double s,
                                           const Vector &xs) {
  detail::require_increasing(xs, "true_stationary_density");
  const auto logp = stationary_log_density(model_name, s);
  Vector lp(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    lp(i) = logp(xs(i));
  }
  DensityGrid out = detail::density_from_log(xs, lp);

  const double top = lp.maxCoeff();
  const auto f = [&](double x) { return std::exp(logp(x) - top); };
  const double lo = xs(0);
  const double hi = xs(xs.size() - 1);
  const double span = hi - lo;
  const double inside = detail::integrate(f, lo, hi);
  const double outside = detail::integrate(f, lo - 20.0 * span, lo) +
                         detail::integrate(f, hi, hi + 20.0 * span);
  out.tail_warning = outside / (inside + outside) > 1e-4;
  return out;
}

/// pi(x) proportional to sigma^{-2}(x) exp(int^x 2 b(u) / sigma^2(u) du), with the
/// exponent accumulated by the trapezoid rule from the left end of the grid.
inline DensityGrid stationary_density_from_drift_1d(const std::function<double(double)> &drift,
                                                    const std::function<double(double)> &diffusion_sq,
                                                    const Vector &xs) {
  detail::require_increasing(xs, "stationary_density_from_drift_1d");
  Vector ratio(xs.size());
  Vector log_sq(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    const double s2 = diffusion_sq(xs(i));
    if (!(s2 > 0.0)) {
      throw ParameterError("stationary_density_from_drift_1d: diffusion must be positive at x = " +
                           std::to_string(xs(i)));
    }
    ratio(i) = 2.0 * drift(xs(i)) / s2;
    log_sq(i) = std::log(s2);
  }
  const Vector exponent = detail::cumulative_trapezoid(xs, ratio);
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(exponent(i))) {
      throw OverflowError("stationary_density_from_drift_1d: exponent not finite at x = " +
                          std::to_string(xs(i)));
    }
  }
  return detail::density_from_log(xs, exponent - log_sq);
}

namespace detail {

inline double interp_cdf(const DensityGrid &g, double x) {
  const Eigen::Index n = g.xs.size();
  if (x <= g.xs(0)) {
    return x < g.xs(0) ? 0.0 : g.cdf(0);
  }
  if (x >= g.xs(n - 1)) {
    return 1.0;
  }
  const auto *begin = g.xs.data();
  const auto *it = std::upper_bound(begin, begin + n, x);
  const Eigen::Index hi = it - begin;
  const Eigen::Index lo = hi - 1;
  const double w = (x - g.xs(lo)) / (g.xs(hi) - g.xs(lo));
  return g.cdf(lo) + w * (g.cdf(hi) - g.cdf(lo));
}

} // namespace detail

/// sup_x |F_a(x) - F_b(x)|; CDFs on different grids are compared on the union
/// grid by linear interpolation.
inline double kolmogorov_metric(const DensityGrid &a, const DensityGrid &b) {
  if (a.xs.size() == b.xs.size() && (a.xs - b.xs).cwiseAbs().maxCoeff() == 0.0) {
    return (a.cdf - b.cdf).cwiseAbs().maxCoeff();
  }
  std::vector<double> xs(a.xs.data(), a.xs.data() + a.xs.size());
  xs.insert(xs.end(), b.xs.data(), b.xs.data() + b.xs.size());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  double best = 0.0;
  for (double x : xs) {
    best = std::max(best, std::abs(detail::interp_cdf(a, x) - detail::interp_cdf(b, x)));
  }
  return best;
}

/// (1/G) sum_g |b_hat(x_g) - b(x_g)|^2 over grid rows.
template <class Estimate, class Truth>
double mse_grid(const Estimate &estimate, const Truth &truth, const Matrix &grid) {
  if (grid.rows() == 0) {
    throw ParameterError("mse_grid: grid must be nonempty");
  }
  double total = 0.0;
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    const Vector x = grid.row(g).transpose();
    total += (Vector(estimate(x)) - Vector(truth(x))).squaredNorm();
  }
  return total / static_cast<double>(grid.rows());
}

// ---------------------------------------------------------------------------
// Default grids

namespace detail {

inline double median(Vector v) {
  std::sort(v.data(), v.data() + v.size());
  const Eigen::Index n = v.size();
  return n % 2 == 1 ? v(n / 2) : 0.5 * (v(n / 2 - 1) + v(n / 2));
}

} // namespace detail

/// `points` equispaced over [min, max] of the observations. For d > 1 one
/// such line per coordinate, the other coordinates held at their path
/// medians; the lines are stacked.
inline Matrix mse_grid_points(const Trajectory &traj, Eigen::Index points = 200) {
  const Matrix &x = traj.states();
  const Eigen::Index d = x.cols();
  if (d == 1) {
    return Vector::LinSpaced(points, x.minCoeff(), x.maxCoeff());
  }
  Vector medians(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    medians(c) = detail::median(x.col(c));
  }
  Matrix grid(points * d, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const Vector line = Vector::LinSpaced(points, x.col(c).minCoeff(), x.col(c).maxCoeff());
    for (Eigen::Index i = 0; i < points; ++i) {
      grid.row(c * points + i) = medians.transpose();
      grid(c * points + i, c) = line(i);
    }
  }
  return grid;
}

/// 1-D density grid: data range widened by `extension` of its width on each side.
inline Vector density_grid_points(const Trajectory &traj, Eigen::Index points = 2001,
                                  double extension = 0.2) {
  if (traj.dim() != 1) {
    throw ParameterError("density_grid_points: stationary comparison is 1-D only");
  }
  const double lo = traj.states().minCoeff();
  const double hi = traj.states().maxCoeff();
  const double pad = extension * (hi - lo);
  return Vector::LinSpaced(points, lo - pad, hi + pad);
}

// ---------------------------------------------------------------------------
// Evaluation bundle

struct EvalSettings {
  Eigen::Index mse_points = 200;
  Eigen::Index density_points = 2001;
  double domain_extension = 0.2;
  /// Stationary law of the fitted SDE uses the estimated S S^T when true,
  /// the model's own parameter otherwise.
  bool use_estimated_sigma = true;
};

struct FigureData {
  /// Rows: grid point; columns x_1..x_d then per coordinate (true, mean, lower, upper).
  Matrix drift;
  Vector hist_edges;
  Eigen::VectorXi hist_counts;
  /// Columns x, true pdf, estimated pdf (1-D only; empty otherwise).
  Matrix stationary;
  /// Columns F_true(x), F_hat(x) on the common grid (1-D only).
  Matrix pp;
};

struct EvalResult {
  double mse = 0.0;
  std::optional<double> kolmogorov;
  Matrix sigma_hat;
  bool tail_warning = false;
  FigureData figures;
};

/// Equal-width histogram; the last bin is closed on the right.
inline std::pair<Vector, Eigen::VectorXi> histogram(const Vector &values, int bins) {
  double lo = values.minCoeff();
  double hi = values.maxCoeff();
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  Vector edges = Vector::LinSpaced(bins + 1, lo, hi);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(bins);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    auto k = static_cast<int>(std::floor((values(i) - lo) / (hi - lo) * bins));
    counts(std::clamp(k, 0, bins - 1)) += 1;
  }
  return {edges, counts};
}

/// Stationary density of the data-generating model: closed form where one
/// exists, otherwise the speed-measure construction from the true drift.
inline DensityGrid model_stationary_density(const ModelSpec &model, const Vector &xs) {
  if (model.name == "double_well" || model.name == "double_well_variant") {
    return true_stationary_density(model.name, std::abs(model.diffusion_param(0, 0)), xs);
  }
  const auto drift = [&](double x) { return model.drift(Vector::Constant(1, x))(0); };
  const auto diff = [&](double x) { return model.diffusion_covariance(Vector::Constant(1, x))(0, 0); };
  return stationary_density_from_drift_1d(drift, diff, xs);
}

/// MSE on the default grid, Kolmogorov metric (1-D), figure tables.
inline EvalResult evaluate_fit(const PosteriorSummary &summary, const ModelSpec &model,
                               const Trajectory &traj, const EvalSettings &settings = {}) {
  EvalResult out;
  out.sigma_hat = summary.mean_sigma;
  const Matrix grid = mse_grid_points(traj, settings.mse_points);
  const Matrix est = summary.mean_expansion.evaluate_rows(grid);
  const Eigen::Index d = traj.dim();
  Matrix truth(grid.rows(), d);
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    truth.row(g) = model.drift(Vector(grid.row(g).transpose())).transpose();
  }
  out.mse = (est - truth).rowwise().squaredNorm().mean();

  // Bands are reported on the summary grid when it matches, else collapsed to the mean.
  const bool have_bands = summary.grid.rows() == grid.rows() && summary.grid.cols() == grid.cols() &&
                          (summary.grid - grid).cwiseAbs().maxCoeff() == 0.0;
  out.figures.drift.resize(grid.rows(), d + 4 * d);
  out.figures.drift.leftCols(d) = grid;
  for (Eigen::Index c = 0; c < d; ++c) {
    out.figures.drift.col(d + 4 * c) = truth.col(c);
    out.figures.drift.col(d + 4 * c + 1) = est.col(c);
    out.figures.drift.col(d + 4 * c + 2) = have_bands ? Vector(summary.lower.col(c)) : Vector(est.col(c));
    out.figures.drift.col(d + 4 * c + 3) = have_bands ? Vector(summary.upper.col(c)) : Vector(est.col(c));
  }

  const Vector w = d == 1 ? summary.mean_expansion.weights : summary.weight_magnitudes;
  std::tie(out.figures.hist_edges, out.figures.hist_counts) = histogram(w, 50);

  if (d == 1) {
    const Vector xs = density_grid_points(traj, settings.density_points, settings.domain_extension);
    const DensityGrid truth_density = model_stationary_density(model, xs);
    const double s2 = settings.use_estimated_sigma
                          ? summary.mean_sigma(0, 0)
                          : (model.diffusion_param * model.diffusion_param.transpose())(0, 0);
    const auto drift = [&](double x) { return summary.mean_expansion(Vector::Constant(1, x))(0); };
    const auto diff = [&](double x) {
      return model.diffusion_covariance(Vector::Constant(1, x), Matrix::Constant(1, 1, s2))(0, 0);
    };
    const DensityGrid fitted = stationary_density_from_drift_1d(drift, diff, xs);
    out.kolmogorov = kolmogorov_metric(truth_density, fitted);
    out.tail_warning = truth_density.tail_warning;
    out.figures.stationary.resize(xs.size(), 3);
    out.figures.stationary << xs, truth_density.pdf, fitted.pdf;
    out.figures.pp.resize(xs.size(), 2);
    out.figures.pp << truth_density.cdf, fitted.cdf;
  }
  return out;
}

} // namespace sdelearn

#endif // SDELEARN_EVAL_HPP
