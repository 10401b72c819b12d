#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"

#include "featurescope/error.hpp"
#include "featurescope/numkit.hpp"

using namespace featurescope;

TEST(Standardize, TwoPointAndConstantColumns) {
  Matrix x(2, 2);
  x << 1, 5, 3, 5;
  const auto s = standardize(x);
  EXPECT_DOUBLE_EQ(s.values(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(s.values(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.means(0), 2.0);
  EXPECT_DOUBLE_EQ(s.stds(0), 1.0);
  EXPECT_FALSE(s.degenerate[0]);
  EXPECT_TRUE(s.degenerate[1]);
  EXPECT_EQ(s.values(0, 1), 0.0);
  EXPECT_EQ(s.values(1, 1), 0.0);
}

TEST(Standardize, RandomMatrixHasZeroMeanUnitVariance) {
  Rng rng(1);
  Matrix x = fstest::gaussian(rng, 100, 10) * 4.0;
  x.array() += 9.0;
  const auto s = standardize(x);
  for (Eigen::Index j = 0; j < 10; ++j) {
    const double mean = s.values.col(j).mean();
    const double var = s.values.col(j).squaredNorm() / 100.0 - mean * mean;
    EXPECT_LT(std::abs(mean), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-8);
  }
}

TEST(Standardize, VectorDegenerate) {
  EXPECT_FALSE(standardize_vector(Vector::Constant(5, 2.0)).has_value());
  Vector z(3);
  z << 1, 2, 3;
  const auto s = standardize_vector(z);
  ASSERT_TRUE(s.has_value());
  EXPECT_NEAR(s->squaredNorm() / 3.0, 1.0, 1e-12);
}

TEST(Ridge, PerfectLinearFit) {
  Rng rng(2);
  const Matrix x = standardize(fstest::gaussian(rng, 50, 4)).values;
  Vector w(4);
  w << 1.5, -2.0, 0.25, 3.0;
  const Vector z = x * w;
  const auto fit = ridge_r2(x, z, 0.0);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-10);
  EXPECT_LT((fit.coefficients - w).norm(), 1e-8);
}

TEST(Ridge, IndependentNoiseHasTinyRSquared) {
  Rng rng(3);
  const Matrix x = standardize(fstest::gaussian(rng, 10000, 1)).values;
  const Vector z = *standardize_vector(fstest::gaussian_vector(rng, 10000));
  EXPECT_LT(ridge_r2(x, z, 0.0).r_squared, 0.01);
}

TEST(Ridge, MatchesHandSolvedNormalEquations) {
  Matrix x(3, 2);
  x << 1, 0, 0, 1, 1, 1;
  Vector z(3);
  z << 1, 2, 2;
  // x^T x = [[2,1],[1,2]], x^T z = [3,4]; w = (1/3)[[2,-1],[-1,2]] [3,4] = [2/3, 5/3].
  const auto fit = ridge_r2(x, z, 0.0);
  EXPECT_NEAR(fit.coefficients(0), 2.0 / 3.0, 1e-8);
  EXPECT_NEAR(fit.coefficients(1), 5.0 / 3.0, 1e-8);
  // residuals 1/3, 1/3, -1/3
  EXPECT_NEAR(fit.residual_sse, 1.0 / 3.0, 1e-10);
}

TEST(Ridge, ConstantTargetGivesZero) {
  Rng rng(4);
  const Matrix x = fstest::gaussian(rng, 20, 3);
  EXPECT_EQ(ridge_r2(x, Vector::Constant(20, 4.0)).r_squared, 0.0);
}

TEST(Ridge, RSquaredNonIncreasingInLambda) {
  Rng rng(5);
  const Matrix x = standardize(fstest::gaussian(rng, 80, 6)).values;
  const Vector z = *standardize_vector(x.col(0) + 0.5 * x.col(3) + fstest::gaussian_vector(rng, 80));
  double previous = 2.0;
  for (const double lambda : {0.0, 1e-6, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0}) {
    const double r2 = ridge_r2(x, z, lambda).r_squared;
    EXPECT_LE(r2, previous + 1e-12) << "lambda " << lambda;
    previous = r2;
  }
}

TEST(Ridge, RankDeficientInputFallsBack) {
  Rng rng(6);
  Matrix x(30, 3);
  x.col(0) = fstest::gaussian_vector(rng, 30);
  x.col(1) = x.col(0);
  x.col(2) = fstest::gaussian_vector(rng, 30);
  const Vector z = x.col(0) + x.col(2);
  const RidgeSolver solver(x, 0.0);
  EXPECT_TRUE(solver.used_fallback());
  const auto fit = solver.fit(z);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-10);
  EXPECT_NEAR(fit.coefficients(0), fit.coefficients(1), 1e-8);
}

TEST(Ridge, ShapeMismatchThrows) {
  const Matrix x = Matrix::Ones(5, 2);
  EXPECT_THROW(ridge_r2(x, Vector::Ones(4)), Error);
}

TEST(CenteredGram, ConstantsVanishAndRotationInvariant) {
  EXPECT_LT(centered_gram(Matrix::Ones(6, 1)).cwiseAbs().maxCoeff(), 1e-14);
  Rng rng(7);
  const Matrix a = fstest::gaussian(rng, 12, 4);
  const Matrix q = fstest::orthogonal(rng, 4);
  const Matrix g = centered_gram(a);
  EXPECT_LT((g - centered_gram(a * q)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(g.rowwise().sum().cwiseAbs().maxCoeff(), 1e-8);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(0.5 * (g + g.transpose())));
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
}

TEST(CenteredGram, HandComputed) {
  Matrix a(4, 2);
  a << 1, 0, 0, 1, 1, 1, 2, 2;
  // Column means (1, 1); centered rows (0,-1), (-1,0), (0,0), (1,1).
  Matrix expected(4, 4);
  expected << 1, 0, 0, -1,
              0, 1, 0, -1,
              0, 0, 0, 0,
              -1, -1, 0, 2;
  EXPECT_LT((centered_gram(a) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KMeans, SaturatedClustersHaveZeroSse) {
  Rng rng(8);
  const Matrix p = fstest::gaussian(rng, 7, 3);
  const auto r = kmeans(p, {7, 1, 50});
  EXPECT_EQ(std::set<int>(r.assignments.begin(), r.assignments.end()).size(), 7u);
  EXPECT_NEAR(r.sse_history.back(), 0.0, 1e-20);
}

TEST(KMeans, SeparatesBlobsAndIsDeterministic) {
  Rng rng(9);
  Matrix p(60, 2);
  std::vector<int> truth;
  for (int i = 0; i < 60; ++i) {
    const int blob = i % 2;
    p(i, 0) = (blob ? 50.0 : -50.0) + rng.normal();
    p(i, 1) = rng.normal();
    truth.push_back(blob);
  }
  const auto r = kmeans(p, {2, 123, 100});
  for (int i = 0; i < 60; ++i)
    EXPECT_EQ(r.assignments[static_cast<std::size_t>(i)] == r.assignments[0], truth[static_cast<std::size_t>(i)] == truth[0]);
  EXPECT_TRUE(r.converged);
  const auto again = kmeans(p, {2, 123, 100});
  EXPECT_EQ(again.assignments, r.assignments);
  EXPECT_EQ(again.centroids, r.centroids);
}

TEST(KMeans, SseNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix p = fstest::gaussian(rng, 200, 5);
    const auto r = kmeans(p, {12, seed, 300});
    for (std::size_t i = 1; i < r.sse_history.size(); ++i)
      EXPECT_LE(r.sse_history[i], r.sse_history[i - 1] * (1 + 1e-12));
  }
}

TEST(KMeans, TooManyClustersIsArgumentError) {
  try {
    kmeans(Matrix::Zero(3, 2), {4, 0, 10});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Argument);
  }
}

TEST(KMeans, IdenticalPointsGoToLowestIndex) {
  const auto r = kmeans(Matrix::Zero(5, 2), {2, 0, 10});
  for (const int a : r.assignments) EXPECT_EQ(a, 0);
}

TEST(Spearman, RanksAndCorrelation) {
  const std::vector<double> v{10, 20, 20, 5};
  const Vector ranks = average_ranks(v);
  EXPECT_DOUBLE_EQ(ranks(0), 2.0);
  EXPECT_DOUBLE_EQ(ranks(1), 3.5);
  EXPECT_DOUBLE_EQ(ranks(2), 3.5);
  EXPECT_DOUBLE_EQ(ranks(3), 1.0);

  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{2, 4, 8, 16, 32};
  const std::vector<double> yr{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, yr), -1.0, 1e-12);
  EXPECT_EQ(spearman(x, std::vector<double>(5, 1.0)), 0.0);
}

TEST(Spearman, PermutationTest) {
  std::vector<double> x;
  std::vector<double> y;
  for (int i = 0; i < 30; ++i) {
    x.push_back(i);
    y.push_back(i * i);
  }
  const auto strong = spearman_permutation_test(x, y, 2000, 1);
  EXPECT_NEAR(strong.rho, 1.0, 1e-12);
  EXPECT_NEAR(strong.p_value, 1.0 / 2001.0, 1e-15);
  const auto flat = spearman_permutation_test(x, std::vector<double>(30, 2.0), 500, 1);
  EXPECT_EQ(flat.rho, 0.0);
  EXPECT_NEAR(flat.p_value, 1.0, 1e-12);
  const auto again = spearman_permutation_test(x, y, 2000, 1);
  EXPECT_EQ(again.p_value, strong.p_value);
}
