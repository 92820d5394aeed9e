#ifndef SDELEARN_LINALG_HPP
#define SDELEARN_LINALG_HPP

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "sdelearn/errors.hpp"

namespace sdelearn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Cholesky = Eigen::LLT<Matrix>;

/// True when |M - M^T| <= rel_tol * max|M| entrywise (plus an absolute floor).
inline bool is_symmetric(const Matrix &m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) {
    return false;
  }
  const double scale = m.cwiseAbs().maxCoeff();
  const double tol = rel_tol * scale + 1e-300;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline Matrix symmetrized(const Matrix &m) {
  return 0.5 * (m + m.transpose());
}

/// Cholesky factorization with a single jitter retry of
/// 1e-10 * trace(M) / dim on the diagonal.
inline Cholesky cholesky_with_jitter(const Matrix &m, const std::string &what) {
  Cholesky llt(m);
  if (llt.info() == Eigen::Success) {
    return llt;
  }
  const double dim = static_cast<double>(m.rows());
  const double jitter = 1e-10 * m.trace() / dim;
  if (jitter > 0.0 && std::isfinite(jitter)) {
    Matrix bumped = m;
    bumped.diagonal().array() += jitter;
    llt.compute(bumped);
    if (llt.info() == Eigen::Success) {
      return llt;
    }
  }
  throw NumericError(what + ": Cholesky factorization failed after jitter");
}

inline double log_det_from_cholesky(const Cholesky &llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline void require_spd(const Matrix &m, const std::string &what) {
  if (!is_symmetric(m)) {
    throw ParameterError(what + " must be symmetric");
  }
  Cholesky llt(m);
  if (llt.info() != Eigen::Success) {
    throw ParameterError(what + " must be positive definite");
  }
}

} // namespace sdelearn

#endif // SDELEARN_LINALG_HPP
