#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "featurescope/types.hpp"

namespace featurescope {

inline constexpr double kDegenerateStd = 1e-12;
inline constexpr double kDefaultLambdaRel = 1e-6;

struct Standardized {
  Matrix values;
  Vector means;
  Vector stds;                    // population (1/n) standard deviations
  std::vector<bool> degenerate;   // std < 1e-12; such columns are zeroed
};

// Column-wise centering and scaling to unit population variance.
Standardized standardize(const Matrix& x);

// Centers and scales a vector to unit population variance. Returns nullopt
// when the variance is below 1e-12.
std::optional<Vector> standardize_vector(const Vector& z);

struct RegressionFit {
  Vector coefficients;
  double r_squared = 0.0;   // clipped to [0, 1]
  double residual_sse = 0.0;
};

// Linear least-squares probe with a trace-scaled ridge term. Factorizes
// x^T x + lambda I once so that many targets can reuse it.
class RidgeSolver {
 public:
  RidgeSolver(const Matrix& x, double lambda_rel);

  RegressionFit fit(const Vector& z) const;

  double lambda() const { return lambda_; }
  bool used_fallback() const { return fallback_; }
  Eigen::Index rows() const { return x_.rows(); }

 private:
  Matrix x_;
  double lambda_ = 0.0;
  bool fallback_ = false;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod_;
};

// Solves min_w ||z - x w||^2 + lambda ||w||^2, lambda = lambda_rel * tr(x^T x)/d.
// R^2 uses the unpenalized residual; constant targets give R^2 = 0.
RegressionFit ridge_r2(const Matrix& x, const Vector& z, double lambda_rel = kDefaultLambdaRel);

// H (a a^T) H with H the centering projector; symmetric n x n.
Matrix centered_gram(const Matrix& a);

struct KMeansOptions {
  int n_clusters = 8;
  std::uint64_t seed = 0;
  int max_iter = 300;
};

struct KMeansResult {
  std::vector<int> assignments;
  Matrix centroids;
  // SSE after the initial assignment and after every Lloyd update.
  std::vector<double> sse_history;
  int iterations = 0;
  bool converged = false;
};

// k-means++ seeding followed by Lloyd iterations until the assignment is a
// fixpoint or max_iter is reached. Nearest-centroid ties go to the lowest
// index; a cluster that empties keeps its previous centroid.
KMeansResult kmeans(const Matrix& points, const KMeansOptions& options);

// Ranks with ties averaged (1-based).
Vector average_ranks(std::span<const double> values);

// Spearman rank correlation; 0 when either side has no rank variance.
double spearman(std::span<const double> x, std::span<const double> y);

struct CorrelationTest {
  double rho = 0.0;
  double p_value = 1.0;
  int permutations = 0;
};

// Two-sided permutation test of Spearman's rho: p = (1 + #{|rho_perm| >= |rho|}) / (1 + n_perm).
CorrelationTest spearman_permutation_test(std::span<const double> x, std::span<const double> y,
                                          int n_permutations, std::uint64_t seed);

}  // namespace featurescope
