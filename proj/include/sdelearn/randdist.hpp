#ifndef SDELEARN_RANDDIST_HPP
#define SDELEARN_RANDDIST_HPP

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "sdelearn/errors.hpp"
#include "sdelearn/linalg.hpp"

namespace sdelearn {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

} // namespace detail

/// Seeded random stream. The engine is mt19937_64 (fully specified by the
/// standard) and the variate transforms come from Boost.Random, so a given
/// (seed, stream_id) pair reproduces the same draws on every platform.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id),
        engine_(detail::splitmix64(seed ^ detail::splitmix64(stream_id + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    boost::random::uniform_01<double> u;
    double x = u(engine_);
    while (x <= 0.0) {
      x = u(engine_);
    }
    return x;
  }

  double normal() {
    boost::random::normal_distribution<double> n;
    return n(engine_);
  }

  Vector normal_vector(Eigen::Index n) {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      z(i) = normal();
    }
    return z;
  }

private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Parameter bundles

struct MvtParams {
  double dof;
  Vector mean;
  Matrix scale;

  void validate() const {
    if (!(dof > 0.0)) {
      throw ParameterError("mvt: dof must be positive");
    }
    if (scale.rows() != mean.size() || scale.cols() != mean.size()) {
      throw ParameterError("mvt: scale dimension does not match mean");
    }
    if (!is_symmetric(scale)) {
      throw ParameterError("mvt: scale matrix must be symmetric");
    }
  }
};

/// Scaled F (beta-prime) law with degrees of freedom dof1, dof2 and scale c.
struct ScaledFParams {
  double dof1;
  double dof2;
  double scale;

  void validate() const {
    if (!(dof1 > 0.0 && dof2 > 0.0 && scale > 0.0)) {
      throw ParameterError("scaled F: all parameters must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Samplers

/// Draw from N(mean, cov). A zero covariance returns the mean.
inline Vector sample_mvnormal(const Vector &mean, const Matrix &cov,
                              RngStream &rng) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw ParameterError("sample_mvnormal: covariance dimension mismatch");
  }
  if (!is_symmetric(cov)) {
    throw ParameterError("sample_mvnormal: covariance must be symmetric");
  }
  // Draws are consumed even for a degenerate covariance so that the stream
  // position does not depend on the parameter values.
  const Vector z = rng.normal_vector(mean.size());
  if (cov.isZero(0.0)) {
    return mean;
  }
  const Cholesky llt = cholesky_with_jitter(cov, "sample_mvnormal");
  return mean + llt.matrixL() * z;
}

/// Draw from N(mean, P^{-1}) given the Cholesky factor of the precision P.
inline Vector sample_mvnormal_precision(const Vector &mean,
                                        const Cholesky &precision,
                                        RngStream &rng) {
  Vector z = rng.normal_vector(mean.size());
  precision.matrixU().solveInPlace(z);
  return mean + z;
}

/// Gamma(shape, rate) via Marsaglia-Tsang; shape < 1 uses
/// G(shape + 1) * U^(1/shape).
inline double sample_gamma(double shape, double rate, RngStream &rng) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) ||
      !std::isfinite(rate)) {
    throw ParameterError("sample_gamma: shape and rate must be positive");
  }
  if (shape < 1.0) {
    const double g = sample_gamma(shape + 1.0, 1.0, rng);
    const double u = rng.uniform();
    return g * std::pow(u, 1.0 / shape) / rate;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) {
      return d * v / rate;
    }
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return d * v / rate;
    }
  }
}

/// Inverse gamma with density proportional to x^{-(shape+1)} exp(-scale/x).
inline double sample_inv_gamma(double shape, double scale, RngStream &rng) {
  if (!(shape > 0.0) || !(scale > 0.0)) {
    throw ParameterError("sample_inv_gamma: shape and scale must be positive");
  }
  return 1.0 / sample_gamma(shape, scale, rng);
}

inline double sample_chi_squared(double dof, RngStream &rng) {
  return 2.0 * sample_gamma(0.5 * dof, 1.0, rng);
}

namespace detail {

/// Lower-triangular Bartlett factor A with W = L A A^T L^T ~ W_d(dof, L L^T).
inline Matrix bartlett_factor(Eigen::Index d, double dof, RngStream &rng) {
  Matrix a = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(sample_chi_squared(dof - static_cast<double>(i), rng));
    for (Eigen::Index j = 0; j < i; ++j) {
      a(i, j) = rng.normal();
    }
  }
  return a;
}

} // namespace detail

/// Wishart W_d(dof, scale), mean dof * scale.
inline Matrix sample_wishart(double dof, const Matrix &scale, RngStream &rng) {
  const Eigen::Index d = scale.rows();
  if (!(dof > static_cast<double>(d) - 1.0)) {
    throw ParameterError("sample_wishart: dof must exceed dim - 1");
  }
  require_spd(scale, "sample_wishart: scale");
  const Cholesky llt(scale);
  const Matrix la = llt.matrixL() * detail::bartlett_factor(d, dof, rng);
  return la * la.transpose();
}

/// Inverse Wishart IW_d(dof, psi) with density proportional to
/// det(X)^{-(dof+d+1)/2} exp(-tr(psi X^{-1}) / 2); mean psi / (dof - d - 1).
/// The inverse draw X^{-1} ~ W_d(dof, psi^{-1}) is generated by the Bartlett
/// decomposition and inverted through triangular solves.
inline Matrix sample_inv_wishart(double dof, const Matrix &psi, RngStream &rng) {
  const Eigen::Index d = psi.rows();
  if (psi.cols() != d || d == 0) {
    throw ParameterError("sample_inv_wishart: scale must be square");
  }
  if (!(dof > static_cast<double>(d) - 1.0)) {
    throw ParameterError("sample_inv_wishart: dof must exceed dim - 1");
  }
  if (!is_symmetric(psi)) {
    throw ParameterError("sample_inv_wishart: scale must be symmetric");
  }
  const Cholesky llt = cholesky_with_jitter(psi, "sample_inv_wishart");
  const Matrix a = detail::bartlett_factor(d, dof, rng);
  // psi = R R^T, X^{-1} = R^{-T} A A^T R^{-1}  =>  X = (A^{-1} R^T)^T (A^{-1} R^T).
  Matrix rt = llt.matrixU();
  a.triangularView<Eigen::Lower>().solveInPlace(rt);
  return rt.transpose() * rt;
}

// ---------------------------------------------------------------------------
// Densities

/// Log density of the d-variate t law with dof, location and scale matrix.
inline double mvt_logdensity(const Vector &x, const MvtParams &p) {
  p.validate();
  if (x.size() != p.mean.size()) {
    throw ParameterError("mvt_logdensity: dimension mismatch");
  }
  const Cholesky llt(p.scale);
  if (llt.info() != Eigen::Success) {
    throw NumericError("mvt_logdensity: scale matrix is singular");
  }
  const double d = static_cast<double>(x.size());
  const Vector w = llt.matrixL().solve(x - p.mean);
  const double q = w.squaredNorm();
  return std::lgamma(0.5 * (p.dof + d)) - std::lgamma(0.5 * p.dof) -
         0.5 * log_det_from_cholesky(llt) -
         0.5 * d * std::log(p.dof * std::numbers::pi) -
         0.5 * (p.dof + d) * std::log1p(q / p.dof);
}

/// Log density of the scaled F law at z > 0.
inline double scaled_f_logdensity(double z, const ScaledFParams &p) {
  p.validate();
  if (!(z > 0.0)) {
    throw DomainError("scaled_f_logdensity: z must be positive");
  }
  const double a = 0.5 * p.dof1;
  const double b = 0.5 * p.dof2;
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) -
         a * std::log(p.scale) + (a - 1.0) * std::log(z) -
         (a + b) * std::log1p(z / p.scale);
}

inline double mvnormal_logdensity(const Vector &x, const Vector &mean,
                                  const Matrix &cov) {
  const Cholesky llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericError("mvnormal_logdensity: covariance is singular");
  }
  const double d = static_cast<double>(x.size());
  const Vector w = llt.matrixL().solve(x - mean);
  return -0.5 * d * std::log(2.0 * std::numbers::pi) -
         0.5 * log_det_from_cholesky(llt) - 0.5 * w.squaredNorm();
}

} // namespace sdelearn

#endif // SDELEARN_RANDDIST_HPP
