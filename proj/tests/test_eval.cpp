#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>

#include "sdelearn/eval.hpp"

using namespace sdelearn;

namespace {

double sup_diff(const Vector &a, const Vector &b) { return (a - b).cwiseAbs().maxCoeff(); }

double trapezoid(const Vector &xs, const Vector &ys) {
  double total = 0.0;
  for (Eigen::Index i = 1; i < xs.size(); ++i) {
    total += 0.5 * (xs(i) - xs(i - 1)) * (ys(i) + ys(i - 1));
  }
  return total;
}

int local_maxima(const Vector &pdf) {
  int count = 0;
  for (Eigen::Index i = 1; i + 1 < pdf.size(); ++i) {
    count += (pdf(i) > pdf(i - 1) && pdf(i) >= pdf(i + 1)) ? 1 : 0;
  }
  return count;
}

// Normalized closed form by adaptive quadrature, independent of the grid code.
Vector quadrature_density(const std::function<double(double)> &unnormalized, const Vector &xs, double lo,
                          double hi) {
  const double z = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(unnormalized, lo, hi, 15, 1e-13);
  Vector out(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    out(i) = unnormalized(xs(i)) / z;
  }
  return out;
}

DensityGrid uniform_cdf(double width, const Vector &xs) {
  DensityGrid g;
  g.xs = xs;
  g.pdf = Vector(xs.size());
  g.cdf = Vector(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    g.pdf(i) = (xs(i) >= 0.0 && xs(i) <= width) ? 1.0 / width : 0.0;
    g.cdf(i) = std::clamp(xs(i) / width, 0.0, 1.0);
  }
  return g;
}

} // namespace

TEST(TrueStationary, DoubleWellSymmetricWithModesAtPlusMinusOne) {
  const Vector xs = Vector::LinSpaced(4001, -2.5, 2.5);
  for (double s : {0.5, 1.0, 1.7}) {
    const DensityGrid g = true_stationary_density("double_well", s, xs);
    EXPECT_LT(sup_diff(g.pdf, g.pdf.reverse()), 1e-12);
    Eigen::Index arg = 0;
    g.pdf.tail(2000).maxCoeff(&arg);
    EXPECT_NEAR(xs(2001 + arg), 1.0, 1e-12);
    g.pdf.head(2000).maxCoeff(&arg);
    EXPECT_NEAR(xs(arg), -1.0, 1e-12);
  }
}

TEST(TrueStationary, VariantModeCountChangesWithSigma) {
  const Vector xs = Vector::LinSpaced(4001, -4.0, 4.0);
  EXPECT_EQ(local_maxima(true_stationary_density("double_well_variant", 1.0, xs).pdf), 1);
  EXPECT_EQ(local_maxima(true_stationary_density("double_well_variant", 0.5, xs).pdf), 2);
}

TEST(TrueStationary, NormalizedWithMonotoneCdf) {
  const Vector xs = Vector::LinSpaced(2001, -3.0, 3.0);
  for (const char *name : {"double_well", "double_well_variant"}) {
    const DensityGrid g = true_stationary_density(name, 0.8, xs);
    EXPECT_NEAR(trapezoid(g.xs, g.pdf), 1.0, 1e-6);
    EXPECT_NEAR(g.cdf(g.cdf.size() - 1), 1.0, 1e-6);
    EXPECT_TRUE((g.pdf.array() >= 0.0).all());
    for (Eigen::Index i = 1; i < g.cdf.size(); ++i) {
      EXPECT_GE(g.cdf(i), g.cdf(i - 1));
    }
  }
}

TEST(TrueStationary, TailWarningOnNarrowGrid) {
  EXPECT_TRUE(true_stationary_density("double_well", 1.0, Vector::LinSpaced(201, -0.5, 0.5)).tail_warning);
  EXPECT_FALSE(true_stationary_density("double_well", 1.0, Vector::LinSpaced(201, -3.0, 3.0)).tail_warning);
}

TEST(TrueStationary, Errors) {
  const Vector xs = Vector::LinSpaced(11, -1.0, 1.0);
  EXPECT_THROW(true_stationary_density("michaelis_menten", 1.0, xs), ParameterError);
  EXPECT_THROW(true_stationary_density("double_well", 0.0, xs), ParameterError);
  EXPECT_THROW(true_stationary_density("double_well", 1.0, xs.reverse()), ParameterError);
}

TEST(SpeedMeasure, OrnsteinUhlenbeckIsHalfVarianceNormal) {
  const Vector xs = Vector::LinSpaced(4001, -5.0, 5.0);
  const DensityGrid g = stationary_density_from_drift_1d([](double x) { return -x; }, [](double) { return 1.0; }, xs);
  Vector normal(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    normal(i) = std::exp(-xs(i) * xs(i)) / std::sqrt(std::numbers::pi);
  }
  EXPECT_LT(sup_diff(g.pdf, normal), 1e-4);
}

TEST(SpeedMeasure, MatchesDoubleWellClosedForm) {
  const Vector xs = Vector::LinSpaced(4001, -2.5, 2.5);
  const DensityGrid speed = stationary_density_from_drift_1d(
      [](double x) { return 4.0 * x * (1.0 - x * x); }, [](double) { return 1.0; }, xs);
  const Vector oracle = quadrature_density([](double x) { return std::exp(4.0 * x * x - 2.0 * x * x * x * x); }, xs,
                                           -2.5, 2.5);
  EXPECT_LT(sup_diff(speed.pdf, oracle), 1e-6);
  EXPECT_LT(sup_diff(speed.pdf, true_stationary_density("double_well", 1.0, xs).pdf), 1e-6);
}

TEST(SpeedMeasure, MatchesVariantClosedForm) {
  const Vector xs = Vector::LinSpaced(4001, -6.0, 6.0);
  const DensityGrid speed = stationary_density_from_drift_1d(
      [](double x) { return x * (1.0 - x * x); }, [](double x) { return 1.0 + x * x; }, xs);
  // s = 1: pi proportional to (1 + x^2) exp(-x^2).
  const Vector oracle = quadrature_density([](double x) { return (1.0 + x * x) * std::exp(-x * x); }, xs, -6.0, 6.0);
  EXPECT_LT(sup_diff(speed.pdf, oracle), 1e-4);
  EXPECT_LT(sup_diff(speed.pdf, true_stationary_density("double_well_variant", 1.0, xs).pdf), 1e-4);
}

TEST(SpeedMeasure, Errors) {
  const Vector xs = Vector::LinSpaced(101, -1.0, 1.0);
  EXPECT_THROW(stationary_density_from_drift_1d([](double) { return 0.0; }, [](double) { return 0.0; }, xs),
               ParameterError);
  EXPECT_THROW(stationary_density_from_drift_1d([](double) { return 1e308; }, [](double) { return 1e-300; }, xs),
               OverflowError);
}

TEST(Kolmogorov, IdenticalIsZero) {
  const DensityGrid g = true_stationary_density("double_well", 1.0, Vector::LinSpaced(301, -2.0, 2.0));
  EXPECT_EQ(kolmogorov_metric(g, g), 0.0);
}

TEST(Kolmogorov, UniformWidths) {
  const Vector xs = Vector::LinSpaced(2001, -0.5, 2.5);
  EXPECT_NEAR(kolmogorov_metric(uniform_cdf(1.0, xs), uniform_cdf(2.0, xs)), 0.5, 1e-12);
  // Different grids go through interpolation on the union.
  const Vector coarse = Vector::LinSpaced(7, -0.5, 2.5);
  EXPECT_NEAR(kolmogorov_metric(uniform_cdf(1.0, coarse), uniform_cdf(2.0, xs)), 0.5, 1e-12);
}

TEST(Kolmogorov, SymmetricBoundedTriangle) {
  const Vector xs = Vector::LinSpaced(501, -3.0, 3.0);
  RngStream rng(51);
  std::vector<DensityGrid> gs;
  for (int k = 0; k < 6; ++k) {
    const double a = 0.5 + 3.0 * rng.uniform();
    const double c = rng.uniform() - 0.5;
    gs.push_back(stationary_density_from_drift_1d([=](double x) { return a * (c - x); },
                                                  [](double) { return 1.0; }, xs));
  }
  for (int i = 0; i + 2 < 6; ++i) {
    const double ab = kolmogorov_metric(gs[i], gs[i + 1]);
    EXPECT_EQ(ab, kolmogorov_metric(gs[i + 1], gs[i]));
    EXPECT_LE(ab, 1.0);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(kolmogorov_metric(gs[i], gs[i + 2]), ab + kolmogorov_metric(gs[i + 1], gs[i + 2]) + 1e-12);
  }
}

TEST(Mse, ExactAndConstantOffset) {
  const Matrix grid = Vector::LinSpaced(50, -1.0, 1.0);
  const auto truth = [](const Vector &x) { return Vector(x.array().sin()); };
  EXPECT_EQ(mse_grid(truth, truth, grid), 0.0);
  const auto zero = [](const Vector &x) { return Vector::Zero(x.size()); };
  const auto c = [](const Vector &x) { return Vector::Constant(x.size(), 0.7); };
  EXPECT_NEAR(mse_grid(c, zero, grid), 0.49, 1e-15);
  EXPECT_THROW(mse_grid(c, zero, Matrix(0, 1)), ParameterError);
}

TEST(Mse, ThreeDimensionalIsSumOfCoordinates) {
  const ModelSpec mm = builtin_model("michaelis_menten", {{"k1", 1}, {"k2", 1}, {"km1", 1}, {"km2", 0.5}, {"c_total", 2}});
  RngStream rng(52);
  Matrix grid(40, 3);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    grid(i) = 2.0 * rng.uniform();
  }
  const auto est = [](const Vector &x) { return Vector(0.5 * x); };
  double per = 0.0;
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (Eigen::Index g = 0; g < 40; ++g) {
      const Vector x = grid.row(g).transpose();
      s += std::pow(0.5 * x(c) - mm.drift(x)(c), 2);
    }
    per += s / 40.0;
  }
  EXPECT_NEAR(mse_grid(est, mm.drift, grid), per, 1e-12);
}

TEST(Grids, DefaultShapes) {
  RngStream rng(53);
  const ModelSpec m = builtin_model("double_well", {});
  const Trajectory t = euler_maruyama_simulate(m, Vector::Constant(1, 0.5), 0.05, 200, rng);
  const Matrix g = mse_grid_points(t);
  EXPECT_EQ(g.rows(), 200);
  EXPECT_EQ(g(0, 0), t.states().minCoeff());
  EXPECT_EQ(g(199, 0), t.states().maxCoeff());
  const Vector xs = density_grid_points(t);
  const double span = t.states().maxCoeff() - t.states().minCoeff();
  EXPECT_EQ(xs.size(), 2001);
  EXPECT_NEAR(xs(0), t.states().minCoeff() - 0.2 * span, 1e-12);
  EXPECT_NEAR(xs(2000), t.states().maxCoeff() + 0.2 * span, 1e-12);

  const ModelSpec mm = builtin_model("michaelis_menten", {{"k1", 1}, {"k2", 1}, {"km1", 1}, {"km2", 0.5}, {"c_total", 2}});
  const Trajectory t3 = euler_maruyama_simulate(mm, (Vector(3) << 1.0, 5.0, 0.0).finished(), 0.04, 100, rng);
  const Matrix g3 = mse_grid_points(t3, 20);
  EXPECT_EQ(g3.rows(), 60);
  EXPECT_EQ(g3.cols(), 3);
}

TEST(Histogram, CountsSumToLength) {
  RngStream rng(54);
  Vector v(137);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v(i) = rng.normal();
  }
  const auto [edges, counts] = histogram(v, 50);
  EXPECT_EQ(edges.size(), 51);
  EXPECT_EQ(counts.sum(), 137);
  EXPECT_EQ(histogram(Vector::Ones(4), 10).second.sum(), 4);
}

TEST(EvaluateFit, FigureTablesAreConsistent) {
  RngStream rng(55);
  const ModelSpec m = builtin_model("double_well", {});
  const Trajectory t = euler_maruyama_simulate(m, Vector::Constant(1, 0.5), 0.05, 200, rng);
  const PosteriorSamples s = run_chain(t, MatrixKernel::scalar_identity(1), m, HsPriorConfig{}, {60, 20, 1}, rng);
  const Matrix grid = mse_grid_points(t);
  const PosteriorSummary sum = summarize_posterior(s, grid);
  const EvalResult r = evaluate_fit(sum, m, t);
  EXPECT_EQ(r.figures.drift.rows(), grid.rows());
  EXPECT_EQ(r.figures.drift.cols(), 5);
  EXPECT_EQ(r.figures.hist_counts.sum(), t.size());
  ASSERT_TRUE(r.kolmogorov.has_value());
  EXPECT_GE(*r.kolmogorov, 0.0);
  EXPECT_LE(*r.kolmogorov, 1.0);
  EXPECT_NEAR(r.mse, mse_grid(sum.mean_expansion, m.drift, grid), 1e-12);
  EXPECT_EQ(r.figures.pp.rows(), 2001);
}

TEST(EvaluateFit, PerfectFitGivesDiagonalPp) {
  // A summary whose drift and sigma equal the truth: PP points lie on the diagonal.
  RngStream rng(56);
  const ModelSpec m = builtin_model("double_well", {});
  const Trajectory t = euler_maruyama_simulate(m, Vector::Constant(1, 0.5), 0.05, 200, rng);
  const Vector xs = density_grid_points(t);
  const DensityGrid a = model_stationary_density(m, xs);
  EXPECT_LT(sup_diff(a.cdf, a.cdf), 1e-12);
  const DensityGrid b = stationary_density_from_drift_1d([&](double x) { return m.drift(Vector::Constant(1, x))(0); },
                                                         [](double) { return 1.0; }, xs);
  EXPECT_LT(sup_diff(a.cdf, b.cdf), 1e-5);
}

namespace {

struct RefinementPair {
  EvalResult coarse;
  EvalResult fine;
};

// Benchmark size: T = 40, Delta = 0.05; default grids against half spacing.
RefinementPair refinement_pair() {
  RngStream rng(57);
  const ModelSpec m = builtin_model("double_well", {});
  const Trajectory t = euler_maruyama_simulate(m, Vector::Constant(1, 0.5), 0.05, 800, rng);
  const PosteriorSamples s = run_chain(t, MatrixKernel::scalar_identity(1), m, TPriorConfig{}, {300, 100, 1}, rng);
  const PosteriorSummary sum = summarize_posterior(s, Matrix(0, 1));
  EvalSettings fine;
  fine.mse_points = 399;
  fine.density_points = 4001;
  return {evaluate_fit(sum, m, t), evaluate_fit(sum, m, t, fine)};
}

} // namespace

TEST(EvaluateFit, KolmogorovStableUnderGridRefinement) {
  const RefinementPair r = refinement_pair();
  EXPECT_LT(std::abs(*r.coarse.kolmogorov - *r.fine.kolmogorov), 0.01 * *r.coarse.kolmogorov);
}

TEST(EvaluateFit, MseStableUnderGridRefinement) {
  const RefinementPair r = refinement_pair();
  EXPECT_LT(std::abs(r.coarse.mse - r.fine.mse), 0.01 * r.coarse.mse);
}
