#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>

#include "sdelearn/randdist.hpp"
#include "sdelearn/rkhs.hpp"

using namespace sdelearn;

namespace {

Trajectory double_well_path(std::uint64_t seed, Eigen::Index steps, double delta = 0.05) {
  RngStream rng(seed);
  return euler_maruyama_simulate(builtin_model("double_well", {}), Vector::Constant(1, 0.5), delta,
                                 steps, rng);
}

Matrix points(std::initializer_list<double> xs) {
  Matrix p(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) {
    p(i++, 0) = x;
  }
  return p;
}

} // namespace

TEST(Kernel, DiagonalIsOne) {
  const MatrixKernel k = MatrixKernel::scalar_identity(1);
  EXPECT_EQ(kernel_eval(k, Vector::Constant(1, 0.3), Vector::Constant(1, 0.3))(0, 0), 1.0);
}

TEST(Kernel, GaussianAtDistanceTwo) {
  const MatrixKernel k = MatrixKernel::scalar_identity(1);
  EXPECT_NEAR(kernel_eval(k, Vector::Zero(1), Vector::Constant(1, 2.0))(0, 0), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(std::exp(-2.0), 0.13534, 1e-5);
}

TEST(Kernel, TwoTermsAreLinear) {
  Matrix b1(2, 2);
  b1 << 2, 1, 1, 2;
  Matrix b2(2, 2);
  b2 << 1, 0, 0, 3;
  const MatrixKernel k1{{KernelTerm{ScalarKernel{1.0}, b1}}};
  const MatrixKernel k2{{KernelTerm{ScalarKernel{0.5}, b2}}};
  const MatrixKernel both{{k1.terms[0], k2.terms[0]}};
  const Vector u = (Vector(2) << 0.1, 0.4).finished();
  const Vector v = (Vector(2) << -0.3, 0.2).finished();
  EXPECT_LT((kernel_eval(both, u, v) - kernel_eval(k1, u, v) - kernel_eval(k2, u, v)).norm(), 1e-15);
  // kappa(u, v) = kappa(v, u)^T.
  EXPECT_LT((kernel_eval(both, u, v) - kernel_eval(both, v, u).transpose()).norm(), 1e-15);
}

TEST(Kernel, RejectsBadInputs) {
  EXPECT_THROW(kernel_eval(MatrixKernel::scalar_identity(1), Vector::Zero(1), Vector::Zero(2)),
               ParameterError);
  Matrix asym(2, 2);
  asym << 1, 2, 0, 1;
  EXPECT_THROW((MatrixKernel{{KernelTerm{ScalarKernel{1.0}, asym}}}.validate()), ParameterError);
  EXPECT_THROW((ScalarKernel{0.0}.validate()), ParameterError);
}

TEST(Gram, DuplicateCentersGiveOnes) {
  const Matrix p = points({0.7, 0.7});
  const GramSystem g = gram_matrix(MatrixKernel::scalar_identity(1), p, p);
  EXPECT_EQ(g.gram, Matrix::Ones(2, 2));
}

TEST(Gram, PsdOnRandomPoints) {
  RngStream rng(11);
  Matrix p(5, 1);
  for (Eigen::Index i = 0; i < 5; ++i) {
    p(i, 0) = 4.0 * rng.uniform() - 2.0;
  }
  const GramSystem g = gram_matrix(MatrixKernel::scalar_identity(1), p, p);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(g.gram));
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
}

TEST(Gram, KroneckerWithIdentityEntrywise) {
  Matrix p(2, 3);
  p << 0.1, 0.2, 0.3, -0.5, 1.0, 0.0;
  const GramSystem g = gram_matrix(MatrixKernel::scalar_identity(3), p, p);
  ASSERT_EQ(g.gram.rows(), 6);
  ASSERT_EQ(g.gram.cols(), 6);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double k = std::exp(-(p.row(i) - p.row(j)).squaredNorm() / 2.0);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          EXPECT_NEAR(g.gram(3 * i + a, 3 * j + b), a == b ? k : 0.0, 1e-15);
        }
      }
    }
  }
}

TEST(Gram, RejectsEmpty) {
  EXPECT_THROW(gram_matrix(MatrixKernel::scalar_identity(1), Matrix(0, 1), points({1.0})), ParameterError);
}

TEST(Expansion, SingleCenterReturnsWeight) {
  const DriftExpansion e{MatrixKernel::scalar_identity(2), (Matrix(1, 2) << 0.3, -0.2).finished(),
                         (Vector(2) << 1.5, -4.0).finished()};
  const Vector at = e((Vector(2) << 0.3, -0.2).finished());
  EXPECT_EQ(at, e.weights);
}

TEST(Expansion, ZeroWeightsGiveZero) {
  const DriftExpansion e{MatrixKernel::scalar_identity(1), points({0.0, 1.0}), Vector::Zero(2)};
  EXPECT_EQ(e(Vector::Constant(1, 0.4))(0), 0.0);
}

TEST(Expansion, TwoCentersHandFormula) {
  const double c1 = -0.5;
  const double c2 = 1.2;
  const double b1 = 2.0;
  const double b2 = -1.0;
  const DriftExpansion e{MatrixKernel::scalar_identity(1), points({c1, c2}), (Vector(2) << b1, b2).finished()};
  for (double x : {0.0, 1.0}) {
    const double expect = std::exp(-(x - c1) * (x - c1) / 2.0) * b1 + std::exp(-(x - c2) * (x - c2) / 2.0) * b2;
    EXPECT_NEAR(e(Vector::Constant(1, x))(0), expect, 1e-15);
  }
}

TEST(Expansion, ReproducingAtCenters) {
  RngStream rng(12);
  Matrix c(4, 2);
  Vector beta(8);
  for (Eigen::Index i = 0; i < 8; ++i) {
    c(i / 2, i % 2) = rng.uniform();
    beta(i) = rng.uniform() - 0.5;
  }
  const MatrixKernel k = MatrixKernel::scalar_identity(2);
  const DriftExpansion e{k, c, beta};
  const Vector kb = gram_matrix(k, c, c).gram * beta;
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_LT((e(Vector(c.row(i).transpose())) - kb.segment(2 * i, 2)).norm(), 1e-10);
  }
  const Matrix rows = e.evaluate_rows(c);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_LT((rows.row(i).transpose() - kb.segment(2 * i, 2)).norm(), 1e-10);
  }
}

TEST(Expansion, RejectsLengthMismatch) {
  const DriftExpansion e{MatrixKernel::scalar_identity(1), points({0.0, 1.0}), Vector::Zero(3)};
  EXPECT_THROW(e.validate(), ParameterError);
}

TEST(Design, SeparableMatchesGeneralAssembly) {
  const Trajectory t = double_well_path(13, 30);
  const ModelSpec m = builtin_model("double_well", {});
  const DriftDesign fast(t, MatrixKernel::scalar_identity(1), m);
  ASSERT_TRUE(fast.separable());
  // Same system with a two-term kernel summing to the same k: forces the dense path.
  MatrixKernel split = MatrixKernel::scalar_identity(1);
  split.terms[0].weight *= 0.5;
  split.terms.push_back(split.terms[0]);
  const DriftDesign dense(t, split, m);
  ASSERT_FALSE(dense.separable());
  const Matrix s = Matrix::Constant(1, 1, 1.7);
  EXPECT_LT((fast.normal_matrix(s) - dense.normal_matrix(s)).norm(), 1e-10 * fast.normal_matrix(s).norm());
  EXPECT_LT((fast.rhs(s) - dense.rhs(s)).norm(), 1e-10 * fast.rhs(s).norm());
}

TEST(Design, NormalMatrixFromDefinition) {
  // Delta K^T D K and K^T D theta against explicit dense products.
  RngStream rng(14);
  const ModelSpec m = builtin_model("double_well_variant", {{"sigma", 0.7}});
  const Trajectory t = euler_maruyama_simulate(m, Vector::Constant(1, 0.3), 0.05, 25, rng);
  const DriftDesign d(t, MatrixKernel::scalar_identity(1), m);
  const Matrix s = Matrix::Constant(1, 1, 0.49);
  const Matrix left = t.left_endpoints();
  Matrix k(25, 25);
  Vector dd(25);
  for (int i = 0; i < 25; ++i) {
    dd(i) = 1.0 / (0.49 * (1.0 + left(i, 0) * left(i, 0)));
    for (int j = 0; j < 25; ++j) {
      k(i, j) = std::exp(-std::pow(left(i, 0) - t.states()(j, 0), 2) / 2.0);
    }
  }
  const Matrix normal = 0.05 * k.transpose() * dd.asDiagonal() * k;
  const Vector rhs = k.transpose() * dd.asDiagonal() * increments(t);
  EXPECT_LT((d.normal_matrix(s) - normal).norm(), 1e-10 * normal.norm());
  EXPECT_LT((d.rhs(s) - rhs).norm(), 1e-10 * rhs.norm());
}

TEST(Ridge, HandBuiltTwoByTwo) {
  // m = 2, d = 1, unit diffusion: left endpoints (x0, x1), centers (x1, x2).
  const double x0 = 0.0;
  const double x1 = 0.4;
  const double x2 = 0.1;
  const double delta = 0.1;
  const double gamma = 0.5;
  const Trajectory t(Vector::Constant(1, x0), delta, points({x1, x2}));
  const ModelSpec m = builtin_model("double_well", {});
  const DriftExpansion e = ridge_map_estimate(t, MatrixKernel::scalar_identity(1), m, gamma);

  const auto k = [](double a, double b) { return std::exp(-(a - b) * (a - b) / 2.0); };
  const double k11 = k(x0, x1);
  const double k12 = k(x0, x2);
  const double k21 = k(x1, x1);
  const double k22 = k(x1, x2);
  const double th1 = x1 - x0;
  const double th2 = x2 - x1;
  const double a11 = delta * (k11 * k11 + k21 * k21) + gamma;
  const double a12 = delta * (k11 * k12 + k21 * k22);
  const double a22 = delta * (k12 * k12 + k22 * k22) + gamma;
  const double r1 = k11 * th1 + k21 * th2;
  const double r2 = k12 * th1 + k22 * th2;
  const double det = a11 * a22 - a12 * a12;
  EXPECT_NEAR(e.weights(0), (a22 * r1 - a12 * r2) / det, 1e-12);
  EXPECT_NEAR(e.weights(1), (a11 * r2 - a12 * r1) / det, 1e-12);
}

TEST(Ridge, DominantRidgeShrinksToZero) {
  const Trajectory t = double_well_path(15, 100);
  const ModelSpec m = builtin_model("double_well", {});
  const DriftDesign d(t, MatrixKernel::scalar_identity(1), m);
  const Matrix s = Matrix::Identity(1, 1);
  const DriftExpansion e = ridge_map_estimate(d, s, 1e8);
  EXPECT_LT(e.weights.norm(), 1e-4 * d.rhs(s).norm());
}

TEST(Ridge, NoiselessInterpolationLimit) {
  // Drift in the span of two centers; vanishing noise and ridge recover it at the centers.
  const Matrix c = points({-0.5, 0.6});
  const DriftExpansion truth{MatrixKernel::scalar_identity(1), c, (Vector(2) << 1.0, -0.8).finished()};
  const ModelSpec m = make_additive_model(
      "span", [truth](const Vector &x) { return truth(x); }, Matrix::Constant(1, 1, 1e-6));
  RngStream rng(16);
  const Trajectory t = euler_maruyama_simulate(m, Vector::Constant(1, -1.0), 0.01, 300, rng);
  const DriftExpansion fit = ridge_map_estimate(t, MatrixKernel::scalar_identity(1), m, 1e-12);
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    const Vector x = c.row(i).transpose();
    if (x(0) < t.states().col(0).minCoeff() || x(0) > t.states().col(0).maxCoeff()) {
      continue;
    }
    EXPECT_NEAR(fit(x)(0), truth(x)(0), 1e-3);
  }
  const Vector mid = Vector::Constant(1, 0.0);
  EXPECT_NEAR(fit(mid)(0), truth(mid)(0), 1e-3);
}

TEST(Ridge, MinimizesPenalizedLoss) {
  const Trajectory t = double_well_path(17, 120);
  const ModelSpec m = builtin_model("double_well", {});
  const DriftDesign d(t, MatrixKernel::scalar_identity(1), m);
  const Matrix s = Matrix::Identity(1, 1);
  const double gamma = 2.0;
  const Vector beta = ridge_map_estimate(d, s, gamma).weights;
  // Negative log conditional posterior up to constants.
  const auto objective = [&](const Vector &b) { return 0.5 * d.quadratic_loss(b, s) + 0.5 * gamma * b.squaredNorm(); };
  const double best = objective(beta);
  RngStream rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    Vector dir(beta.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) {
      dir(i) = rng.normal();
    }
    EXPECT_LE(best, objective(beta + 0.1 * dir.normalized()));
  }
}

TEST(Ridge, RejectsNonpositiveRidge) {
  const Trajectory t = double_well_path(19, 10);
  EXPECT_THROW(ridge_map_estimate(t, MatrixKernel::scalar_identity(1), builtin_model("double_well", {}), 0.0),
               ParameterError);
}

TEST(Shrinkage, PosteriorMeanIsShrunkUnpenalizedFit) {
  // Well-separated centers keep the Gram invertible.
  const Trajectory t(Vector::Constant(1, 0.0), 0.1, points({1.0, -1.5, 2.5, 0.2}));
  const ModelSpec m = builtin_model("double_well", {});
  const DriftDesign d(t, MatrixKernel::scalar_identity(1), m);
  const Matrix s = Matrix::Constant(1, 1, 0.8);
  const Vector eta = (Vector(4) << 0.5, 2.0, 1.0, 4.0).finished();
  const Vector mle = mle_weights(d, s);
  const Matrix shrink = shrinkage_factor(d, s, eta);
  Matrix precision = d.normal_matrix(s);
  precision.diagonal() += eta.cwiseInverse();
  const Vector mean = precision.llt().solve(d.rhs(s));
  EXPECT_LT((mean - (Matrix::Identity(4, 4) - shrink) * mle).norm(), 1e-9 * mean.norm());
  EXPECT_THROW(shrinkage_factor(d, s, Vector::Ones(3)), ParameterError);
}

TEST(Representer, ConstantWeightFredholmValue) {
  const RepresenterBasis basis =
      representer_basis_quadrature(ScalarKernel{1.0}, {[](double) { return 1.0; }}, 0.0, 1.0, 1001);
  const double oracle = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [](double z) { return std::exp(-z * z / 2.0); }, 0.0, 1.0);
  EXPECT_NEAR(oracle, 0.85562, 1e-5);
  EXPECT_NEAR(basis(0, 0.0), 0.85562, 1e-4);
  EXPECT_NEAR(basis(0, 0.0), oracle, 1e-6);
}

TEST(Representer, NarrowBumpReducesToKernel) {
  const double xi = 0.37;
  const double w = 1e-3;
  const double mass = w * std::sqrt(2.0 * std::numbers::pi);
  const WeightFunction bump = [=](double z) { return std::exp(-(z - xi) * (z - xi) / (2.0 * w * w)) / mass; };
  const RepresenterBasis basis = representer_basis_quadrature(ScalarKernel{1.0}, {bump}, 0.0, 1.0, 20001);
  double sup = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double u = -1.0 + 0.03 * i;
    sup = std::max(sup, std::abs(basis(0, u) - std::exp(-(u - xi) * (u - xi) / 2.0)));
  }
  EXPECT_LT(sup, 1e-3);
}

TEST(Representer, IdenticalFunctionalsIdenticalBasis) {
  const WeightFunction rho = [](double z) { return z * z; };
  const RepresenterBasis basis = representer_basis_quadrature(ScalarKernel{0.7}, {rho, rho}, -1.0, 2.0, 301);
  double sup = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const Vector v = basis.values(-2.0 + 0.05 * i);
    sup = std::max(sup, std::abs(v(0) - v(1)));
  }
  EXPECT_LT(sup, 1e-12);
}

TEST(Representer, SecondOrderConvergence) {
  const WeightFunction rho = [](double z) { return 1.0 + z; };
  const auto value = [&](int n) {
    return representer_basis_quadrature(ScalarKernel{1.0}, {rho}, 0.0, 1.0, n)(0, 0.3);
  };
  const double exact = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [](double z) { return std::exp(-(0.3 - z) * (0.3 - z) / 2.0) * (1.0 + z); }, 0.0, 1.0);
  const double e1 = std::abs(value(21) - exact);
  const double e2 = std::abs(value(41) - exact);
  EXPECT_NEAR(e1 / e2, 4.0, 0.2);
}

TEST(Representer, SystemMatrixAndRidgeFit) {
  const std::vector<WeightFunction> rhos{[](double) { return 1.0; }, [](double z) { return z; }};
  const RepresenterBasis basis = representer_basis_quadrature(ScalarKernel{1.0}, rhos, 0.0, 1.0, 401);
  const Matrix &g = basis.system();
  EXPECT_LT((g - g.transpose()).norm(), 1e-14);
  // G_00 = int int k(u, z) du dz on the unit square.
  const double g00 = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [](double u) {
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [u](double z) { return std::exp(-(u - z) * (u - z) / 2.0); }, 0.0, 1.0);
      },
      0.0, 1.0);
  EXPECT_NEAR(g(0, 0), g00, 1e-5);
  const Vector y = (Vector(2) << 1.0, 0.5).finished();
  const Vector c = basis.ridge_fit(y, 0.1);
  EXPECT_LT(((g + 0.1 * Matrix::Identity(2, 2)) * c - y).norm(), 1e-10);
}

TEST(Representer, RejectsBadArguments) {
  const std::vector<WeightFunction> one{[](double) { return 1.0; }};
  EXPECT_THROW(representer_basis_quadrature(ScalarKernel{1.0}, one, 0.0, 1.0, 1), ParameterError);
  EXPECT_THROW(representer_basis_quadrature(ScalarKernel{1.0}, one, 1.0, 0.0, 11), ParameterError);
  EXPECT_THROW(representer_basis_quadrature(ScalarKernel{1.0}, {}, 0.0, 1.0, 11), ParameterError);
}
