#ifndef SDELEARN_RKHS_HPP
#define SDELEARN_RKHS_HPP

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sdelearn/errors.hpp"
#include "sdelearn/linalg.hpp"
#include "sdelearn/sde.hpp"

namespace sdelearn {

/// Gaussian kernel k(x, y) = exp(-|x - y|^2 / (2 l^2)).
struct ScalarKernel {
  double bandwidth = 1.0;

  double operator()(const Vector &x, const Vector &y) const {
    return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
  }

  double operator()(double x, double y) const {
    const double r = x - y;
    return std::exp(-r * r / (2.0 * bandwidth * bandwidth));
  }

  void validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
      throw ParameterError("ScalarKernel: bandwidth must be positive");
    }
  }
};

struct KernelTerm {
  ScalarKernel kernel;
  Matrix weight;
};

/// Separable matrix-valued kernel sum_r k_r(u, v) B_r.
struct MatrixKernel {
  std::vector<KernelTerm> terms;

  /// k(u, v) I_dim, the kernel used for every benchmark model.
  static MatrixKernel scalar_identity(int dim, double bandwidth = 1.0) {
    return MatrixKernel{{KernelTerm{ScalarKernel{bandwidth}, Matrix::Identity(dim, dim)}}};
  }

  Eigen::Index output_dim() const {
    return terms.empty() ? 0 : terms.front().weight.rows();
  }

  bool single_term() const { return terms.size() == 1; }

  Matrix operator()(const Vector &u, const Vector &v) const {
    Matrix out = Matrix::Zero(output_dim(), output_dim());
    for (const auto &t : terms) {
      out += t.kernel(u, v) * t.weight;
    }
    return out;
  }

  void validate() const {
    if (terms.empty()) {
      throw ParameterError("MatrixKernel: at least one term is required");
    }
    const Eigen::Index n = output_dim();
    for (const auto &t : terms) {
      t.kernel.validate();
      if (t.weight.rows() != n || t.weight.cols() != n) {
        throw ParameterError("MatrixKernel: term weights must share one square shape");
      }
      if (!is_symmetric(t.weight)) {
        throw ParameterError("MatrixKernel: term weight must be symmetric");
      }
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(t.weight, Eigen::EigenvaluesOnly);
      const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
      if (eig.eigenvalues().minCoeff() < -1e-12 * top) {
        throw ParameterError("MatrixKernel: term weight must be positive semi-definite");
      }
    }
  }
};

inline Matrix kernel_eval(const MatrixKernel &kernel, const Vector &u, const Vector &v) {
  if (u.size() != v.size()) {
    throw ParameterError("kernel_eval: point dimensions differ");
  }
  return kernel(u, v);
}

/// Scalar Gram matrix K_ij = k(rows_i, cols_j).
inline Matrix scalar_gram(const ScalarKernel &k, const Matrix &rows, const Matrix &cols) {
  Matrix g(rows.rows(), cols.rows());
  const double scale = -1.0 / (2.0 * k.bandwidth * k.bandwidth);
  for (Eigen::Index j = 0; j < cols.rows(); ++j) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      g(i, j) = std::exp(scale * (rows.row(i) - cols.row(j)).squaredNorm());
    }
  }
  return g;
}

inline Matrix kronecker(const Matrix &a, const Matrix &b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Block Gram matrix between evaluation points and expansion centers; block
/// (i, j) is kappa(eval_i, center_j).
struct GramSystem {
  Matrix eval_points;
  Matrix centers;
  Matrix gram;
};

inline GramSystem gram_matrix(const MatrixKernel &kernel, const Matrix &eval_points,
                              const Matrix &centers) {
  if (eval_points.rows() == 0 || centers.rows() == 0) {
    throw ParameterError("gram_matrix: point lists must be nonempty");
  }
  if (eval_points.cols() != centers.cols()) {
    throw ParameterError("gram_matrix: point dimensions differ");
  }
  const Eigen::Index n = kernel.output_dim();
  Matrix g = Matrix::Zero(eval_points.rows() * n, centers.rows() * n);
  for (const auto &t : kernel.terms) {
    g += kronecker(scalar_gram(t.kernel, eval_points, centers), t.weight);
  }
  return GramSystem{eval_points, centers, std::move(g)};
}

/// b(x) = sum_i kappa(x, c_i) beta_i.
struct DriftExpansion {
  MatrixKernel kernel;
  Matrix centers;
  Vector weights;

  Eigen::Index output_dim() const { return kernel.output_dim(); }

  void validate() const {
    if (centers.rows() * kernel.output_dim() != weights.size()) {
      throw ParameterError("DriftExpansion: center count times dim must equal weight length");
    }
  }

  /// Weights as an m x n matrix, row i holding beta_i.
  Matrix weight_rows() const {
    const Eigen::Index n = output_dim();
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(weights.data(), centers.rows(), n);
  }

  Vector operator()(const Vector &x) const {
    const Eigen::Index n = output_dim();
    Vector out = Vector::Zero(n);
    for (const auto &t : kernel.terms) {
      Vector acc = Vector::Zero(n);
      for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        acc += t.kernel(x, Vector(centers.row(i).transpose())) * weights.segment(i * n, n);
      }
      out += t.weight * acc;
    }
    return out;
  }

  /// Values at many points (rows), returned as rows.
  Matrix evaluate_rows(const Matrix &points) const {
    const Matrix beta = weight_rows();
    Matrix out = Matrix::Zero(points.rows(), output_dim());
    for (const auto &t : kernel.terms) {
      out += scalar_gram(t.kernel, points, centers) * beta * t.weight.transpose();
    }
    return out;
  }
};

inline Vector expansion_eval(const DriftExpansion &exp, const Vector &x) {
  return exp(x);
}

// ---------------------------------------------------------------------------

/// Linear-Gaussian regression system behind the drift posterior.
///
/// Evaluation points are the left endpoints x0, X(t_1), ..., X(t_{m-1});
/// centers are X(t_1), ..., X(t_m). D holds (sigma0 S sigma0^T)^{-1} at the
/// left endpoints. With a single-term kernel k B and sigma0(x) = s(x) I the
/// normal matrix factors as Delta * (K^T W K) kron (B S^{-1} B), W = diag(1/s^2),
/// which is precomputed once.
class DriftDesign {
public:
  DriftDesign(const Trajectory &traj, MatrixKernel kernel, const ModelSpec &model)
      : kernel_(std::move(kernel)), delta_(traj.delta()), dim_(traj.dim()),
        count_(traj.size()), eval_points_(traj.left_endpoints()),
        centers_(traj.states()), increments_(increments(traj)) {
    kernel_.validate();
    if (kernel_.output_dim() != dim_) {
      throw ParameterError("DriftDesign: kernel output dimension must equal state dimension");
    }
    if (model.dim != dim_) {
      throw ParameterError("DriftDesign: model dimension does not match trajectory");
    }
    separable_ = kernel_.single_term() && model.has_scalar_diffusion();
    if (separable_) {
      const auto &term = kernel_.terms.front();
      scalar_gram_ = scalar_gram(term.kernel, eval_points_, centers_);
      weight_ = term.weight;
      precision_weights_.resize(count_);
      sigma0_scalar_.resize(count_);
      for (Eigen::Index i = 0; i < count_; ++i) {
        const double s = model.diffusion_scalar(Vector(eval_points_.row(i).transpose()));
        if (!(std::abs(s) > 0.0) || !std::isfinite(s)) {
          throw NumericError("DriftDesign: diffusion base is singular at a left endpoint");
        }
        sigma0_scalar_(i) = s;
        precision_weights_(i) = 1.0 / (s * s);
      }
      const Matrix weighted = precision_weights_.asDiagonal() * scalar_gram_;
      weighted_gram_ = symmetrized(scalar_gram_.transpose() * weighted);
      weighted_rhs_ = scalar_gram_.transpose() * (precision_weights_.asDiagonal() * increment_rows());
    } else {
      gram_ = gram_matrix(kernel_, eval_points_, centers_).gram;
      sigma0_inv_.reserve(static_cast<std::size_t>(count_));
      for (Eigen::Index i = 0; i < count_; ++i) {
        const Matrix base = model.sigma0(Vector(eval_points_.row(i).transpose()));
        Eigen::FullPivLU<Matrix> lu(base);
        if (!lu.isInvertible()) {
          throw NumericError("DriftDesign: diffusion base is singular at a left endpoint");
        }
        sigma0_inv_.push_back(lu.inverse());
      }
    }
  }

  const MatrixKernel &kernel() const noexcept { return kernel_; }
  double delta() const noexcept { return delta_; }
  int dim() const noexcept { return dim_; }
  Eigen::Index count() const noexcept { return count_; }
  Eigen::Index weight_size() const noexcept { return count_ * dim_; }
  const Matrix &eval_points() const noexcept { return eval_points_; }
  const Matrix &centers() const noexcept { return centers_; }
  const Vector &increments_vector() const noexcept { return increments_; }
  bool separable() const noexcept { return separable_; }

  /// m x m matrix K^T W K (separable designs only).
  const Matrix &weighted_gram() const { return weighted_gram_; }
  /// d x d kernel weight B (separable designs only).
  const Matrix &kernel_weight() const { return weight_; }

  /// The block Gram matrix K_0 (assembled on demand for separable designs).
  Matrix gram() const {
    if (separable_) {
      return kronecker(scalar_gram_, weight_);
    }
    return gram_;
  }

  /// Inverse of S, symmetrized.
  static Matrix param_precision(const Matrix &param_cov) {
    const Cholesky llt = cholesky_with_jitter(param_cov, "DriftDesign: parameter covariance");
    return symmetrized(llt.solve(Matrix::Identity(param_cov.rows(), param_cov.cols())));
  }

  /// Block-diagonal D as a dense matrix.
  Matrix precision_blocks(const Matrix &param_cov) const {
    const Matrix sinv = param_precision(param_cov);
    Matrix d = Matrix::Zero(weight_size(), weight_size());
    for (Eigen::Index i = 0; i < count_; ++i) {
      d.block(i * dim_, i * dim_, dim_, dim_) = block_precision(i, sinv);
    }
    return d;
  }

  /// Delta * K_0^T D K_0.
  Matrix normal_matrix(const Matrix &param_cov) const {
    const Matrix sinv = param_precision(param_cov);
    if (separable_) {
      return delta_ * kronecker(weighted_gram_, weight_ * sinv * weight_);
    }
    Matrix dk(gram_.rows(), gram_.cols());
    for (Eigen::Index i = 0; i < count_; ++i) {
      dk.middleRows(i * dim_, dim_) = block_precision(i, sinv) * gram_.middleRows(i * dim_, dim_);
    }
    return symmetrized(delta_ * (gram_.transpose() * dk));
  }

  /// K_0^T D theta.
  Vector rhs(const Matrix &param_cov) const {
    const Matrix sinv = param_precision(param_cov);
    Vector out(weight_size());
    if (separable_) {
      const Matrix map = weight_ * sinv;
      for (Eigen::Index j = 0; j < count_; ++j) {
        out.segment(j * dim_, dim_) = map * weighted_rhs_.row(j).transpose();
      }
      return out;
    }
    Vector dtheta(weight_size());
    for (Eigen::Index i = 0; i < count_; ++i) {
      dtheta.segment(i * dim_, dim_) = block_precision(i, sinv) * increments_.segment(i * dim_, dim_);
    }
    return gram_.transpose() * dtheta;
  }

  /// Separable-design pieces in the eigenbasis of B S^{-1} B:
  /// returns (eigenvalues, eigenvectors) of that d x d matrix.
  std::pair<Vector, Matrix> coupling_eigen(const Matrix &param_cov) const {
    const Matrix sinv = param_precision(param_cov);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(weight_ * sinv * weight_));
    return {eig.eigenvalues(), eig.eigenvectors()};
  }

  /// Drift of the expansion at the left endpoints, as m x d rows.
  Matrix drift_at_eval(const Vector &beta) const {
    if (separable_) {
      const Matrix rows = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                         Eigen::RowMajor>>(beta.data(), count_, dim_);
      return scalar_gram_ * rows * weight_.transpose();
    }
    const Vector flat = gram_ * beta;
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(flat.data(), count_, dim_);
  }

  /// Delta^{-1} sum_j sigma0^{-1} r_j r_j^T sigma0^{-T}, r_j = theta_j - Delta b(e_j).
  Matrix residual_scatter(const Vector &beta) const {
    const Matrix residual = increment_rows() - delta_ * drift_at_eval(beta);
    Matrix scaled(count_, dim_);
    for (Eigen::Index i = 0; i < count_; ++i) {
      if (separable_) {
        scaled.row(i) = residual.row(i) / sigma0_scalar_(i);
      } else {
        scaled.row(i) = (sigma0_inv_[static_cast<std::size_t>(i)] * residual.row(i).transpose()).transpose();
      }
    }
    return symmetrized(scaled.transpose() * scaled) / delta_;
  }

  /// E_0(beta) = Delta^{-1} sum (theta_j - Delta b)^T (sigma sigma^T)^{-1} (theta_j - Delta b).
  double quadratic_loss(const Vector &beta, const Matrix &param_cov) const {
    const Matrix sinv = param_precision(param_cov);
    const Matrix residual = increment_rows() - delta_ * drift_at_eval(beta);
    double total = 0.0;
    for (Eigen::Index i = 0; i < count_; ++i) {
      const Vector r = residual.row(i).transpose();
      total += r.dot(block_precision(i, sinv) * r);
    }
    return total / delta_;
  }

  DriftExpansion expansion(Vector beta) const {
    return DriftExpansion{kernel_, centers_, std::move(beta)};
  }

  Matrix increment_rows() const {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(increments_.data(), count_, dim_);
  }

private:
  Matrix block_precision(Eigen::Index i, const Matrix &sinv) const {
    if (separable_) {
      return precision_weights_(i) * sinv;
    }
    const Matrix &inv = sigma0_inv_[static_cast<std::size_t>(i)];
    return inv.transpose() * sinv * inv;
  }

  MatrixKernel kernel_;
  double delta_;
  int dim_;
  Eigen::Index count_;
  Matrix eval_points_;
  Matrix centers_;
  Vector increments_;
  bool separable_ = false;

  Matrix scalar_gram_;
  Matrix weight_;
  Vector precision_weights_;
  Vector sigma0_scalar_;
  Matrix weighted_gram_;
  Matrix weighted_rhs_;

  Matrix gram_;
  std::vector<Matrix> sigma0_inv_;
};

/// No-shrinkage MAP estimate with prior covariance gamma^{-1} I:
/// beta = (Delta K^T D K + gamma I)^{-1} K^T D theta.
inline DriftExpansion ridge_map_estimate(const DriftDesign &design, const Matrix &param_cov,
                                         double ridge) {
  if (!(ridge > 0.0)) {
    throw ParameterError("ridge_map_estimate: ridge must be positive");
  }
  Matrix system = design.normal_matrix(param_cov);
  system.diagonal().array() += ridge;
  const Cholesky llt = cholesky_with_jitter(system, "ridge_map_estimate");
  return design.expansion(llt.solve(design.rhs(param_cov)));
}

inline DriftExpansion ridge_map_estimate(const Trajectory &traj, const MatrixKernel &kernel,
                                         const ModelSpec &model, double ridge) {
  const DriftDesign design(traj, kernel, model);
  return ridge_map_estimate(design, model.diffusion_param * model.diffusion_param.transpose(),
                            ridge);
}

/// Unpenalized minimizer of the quadratic loss: Delta K^T D K beta = K^T D theta,
/// i.e. Delta^{-1} (K^T D K)^{-1} K^T D theta. Needs a nonsingular Gram.
inline Vector mle_weights(const DriftDesign &design, const Matrix &param_cov) {
  const Cholesky llt(design.normal_matrix(param_cov));
  if (llt.info() != Eigen::Success) {
    throw NumericError("mle_weights: normal matrix is singular");
  }
  return llt.solve(design.rhs(param_cov));
}

/// S = C eta^{-1} with C^{-1} = Delta K^T D K + eta^{-1}, so that the
/// conditional posterior mean equals (I - S) times the unpenalized weights.
inline Matrix shrinkage_factor(const DriftDesign &design, const Matrix &param_cov,
                               const Vector &prior_variances) {
  if (prior_variances.size() != design.count() * design.dim()) {
    throw ParameterError("shrinkage_factor: one prior variance per weight is required");
  }
  const Vector inv = prior_variances.cwiseInverse();
  Matrix precision = design.normal_matrix(param_cov);
  precision.diagonal() += inv;
  const Cholesky llt = cholesky_with_jitter(precision, "shrinkage_factor");
  return llt.solve(Matrix(inv.asDiagonal()));
}

// ---------------------------------------------------------------------------
// Representer bases for integral functionals on an interval

using WeightFunction = std::function<double(double)>;

/// Basis f_i(u) = int_a^b k(u, z) rho_i(z) dz under an N-node composite
/// trapezoid rule, plus the system matrix G_ij = int rho_j(u) f_i(u) du
/// evaluated with the same rule. G_ij is also <f_i, f_j> in the RKHS.
class RepresenterBasis {
public:
  RepresenterBasis(ScalarKernel kernel, const std::vector<WeightFunction> &functionals,
                   double a, double b, int nodes)
      : kernel_(kernel) {
    if (nodes < 2) {
      throw ParameterError("representer_basis_quadrature: at least two nodes are required");
    }
    if (!(b > a) || !std::isfinite(a) || !std::isfinite(b)) {
      throw ParameterError("representer_basis_quadrature: interval must be finite and nonempty");
    }
    if (functionals.empty()) {
      throw ParameterError("representer_basis_quadrature: no functionals given");
    }
    kernel_.validate();
    nodes_ = Vector::LinSpaced(nodes, a, b);
    weights_ = Vector::Constant(nodes, (b - a) / static_cast<double>(nodes - 1));
    weights_(0) *= 0.5;
    weights_(nodes - 1) *= 0.5;
    weighted_rho_.resize(static_cast<Eigen::Index>(functionals.size()), nodes);
    for (std::size_t i = 0; i < functionals.size(); ++i) {
      for (Eigen::Index k = 0; k < nodes; ++k) {
        weighted_rho_(static_cast<Eigen::Index>(i), k) = weights_(k) * functionals[i](nodes_(k));
      }
    }
    const Matrix knode = scalar_gram(kernel_, nodes_, nodes_);
    system_ = symmetrized(weighted_rho_ * knode * weighted_rho_.transpose());
  }

  std::size_t size() const { return static_cast<std::size_t>(weighted_rho_.rows()); }

  /// f_i(u).
  double operator()(std::size_t i, double u) const {
    double total = 0.0;
    const auto row = weighted_rho_.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index k = 0; k < nodes_.size(); ++k) {
      total += kernel_(u, nodes_(k)) * row(k);
    }
    return total;
  }

  /// All basis values at u.
  Vector values(double u) const {
    Vector kv(nodes_.size());
    for (Eigen::Index k = 0; k < nodes_.size(); ++k) {
      kv(k) = kernel_(u, nodes_(k));
    }
    return weighted_rho_ * kv;
  }

  const Matrix &system() const noexcept { return system_; }

  /// Coefficients c of h = sum c_i f_i minimizing
  /// sum_j (y_j - L_j h)^2 + gamma |h|^2, i.e. (G + gamma I) c = y.
  Vector ridge_fit(const Vector &observations, double ridge) const {
    if (observations.size() != system_.rows()) {
      throw ParameterError("RepresenterBasis::ridge_fit: one observation per functional");
    }
    if (!(ridge > 0.0)) {
      throw ParameterError("RepresenterBasis::ridge_fit: ridge must be positive");
    }
    Matrix a = system_;
    a.diagonal().array() += ridge;
    return cholesky_with_jitter(a, "RepresenterBasis::ridge_fit").solve(observations);
  }

private:
  ScalarKernel kernel_;
  Vector nodes_;
  Vector weights_;
  Matrix weighted_rho_;
  Matrix system_;
};

inline RepresenterBasis representer_basis_quadrature(const ScalarKernel &kernel,
                                                     const std::vector<WeightFunction> &functionals,
                                                     double a, double b, int nodes) {
  return RepresenterBasis(kernel, functionals, a, b, nodes);
}

} // namespace sdelearn

#endif // SDELEARN_RKHS_HPP
