#include "featurescope/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "featurescope/error.hpp"
#include "featurescope/kernels.hpp"
#include "featurescope/rng.hpp"

namespace featurescope {

Standardized standardize(const Matrix& x) {
  require(x.rows() >= 2, ErrorKind::Shape, "standardize needs at least 2 rows");
  const double n = static_cast<double>(x.rows());
  Standardized out;
  out.means = x.colwise().mean().transpose();
  out.values = x.rowwise() - out.means.transpose();
  out.stds = (out.values.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  out.degenerate.assign(static_cast<std::size_t>(x.cols()), false);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (out.stds(j) < kDegenerateStd) {
      out.degenerate[static_cast<std::size_t>(j)] = true;
      out.values.col(j).setZero();
    } else {
      out.values.col(j) /= out.stds(j);
    }
  }
  return out;
}

std::optional<Vector> standardize_vector(const Vector& z) {
  require(z.size() >= 2, ErrorKind::Shape, "standardize needs at least 2 values");
  const double mean = z.mean();
  Vector centered = z.array() - mean;
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(z.size()));
  if (!(sd >= kDegenerateStd)) return std::nullopt;
  return Vector(centered / sd);
}

RidgeSolver::RidgeSolver(const Matrix& x, double lambda_rel) : x_(x) {
  require(x.rows() >= 2, ErrorKind::Shape, "regression needs at least 2 samples");
  require(lambda_rel >= 0.0 && std::isfinite(lambda_rel), ErrorKind::Argument, "lambda_rel must be >= 0");
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd normal = Eigen::MatrixXd(x.transpose() * x);
  lambda_ = d > 0 ? lambda_rel * normal.trace() / static_cast<double>(d) : 0.0;
  normal.diagonal().array() += lambda_;

  llt_.compute(normal);
  bool ok = llt_.info() == Eigen::Success;
  if (ok && d > 0) {
    const Eigen::VectorXd diag = Eigen::MatrixXd(llt_.matrixL()).diagonal();
    const double lo = diag.minCoeff();
    const double hi = diag.maxCoeff();
    // Near-singular normal matrices go through the rank-revealing path.
    ok = lo > 0.0 && (lo / hi) * (lo / hi) > 1e-13;
  }
  if (!ok) {
    fallback_ = true;
    cod_.compute(Eigen::MatrixXd(x_));
  }
}

RegressionFit RidgeSolver::fit(const Vector& z) const {
  require(z.size() == x_.rows(), ErrorKind::Shape,
          "target length " + std::to_string(z.size()) + " does not match " + std::to_string(x_.rows()) + " samples");
  RegressionFit fit;
  if (x_.cols() == 0) {
    fit.coefficients = Vector(0);
  } else if (fallback_) {
    fit.coefficients = cod_.solve(z);
  } else {
    fit.coefficients = llt_.solve(Vector(x_.transpose() * z));
  }
  const Vector residual = z - x_ * fit.coefficients;
  fit.residual_sse = residual.squaredNorm();
  const double total_ss = (z.array() - z.mean()).square().sum();
  if (total_ss < 1e-12) {
    fit.r_squared = 0.0;
  } else {
    fit.r_squared = std::clamp(1.0 - fit.residual_sse / total_ss, 0.0, 1.0);
  }
  return fit;
}

RegressionFit ridge_r2(const Matrix& x, const Vector& z, double lambda_rel) {
  require(z.size() == x.rows(), ErrorKind::Shape, "ridge_r2: x and z have different sample counts");
  return RidgeSolver(x, lambda_rel).fit(z);
}

Matrix centered_gram(const Matrix& a) {
  require(a.rows() >= 2, ErrorKind::Shape, "centered_gram needs at least 2 rows");
  const Matrix centered = a.rowwise() - a.colwise().mean();
  Matrix gram = centered * centered.transpose();
  return (gram + gram.transpose()) * 0.5;
}

namespace {

double assign(const Matrix& points, const Matrix& centroids, std::vector<int>& assignments) {
  double sse = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto p = row_span(points, i);
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double dist = kernels::squared_distance(p, row_span(centroids, c));
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(c);
      }
    }
    assignments[static_cast<std::size_t>(i)] = best;
    sse += best_dist;
  }
  return sse;
}

Matrix seed_plus_plus(const Matrix& points, int n_clusters, Rng& rng) {
  const Eigen::Index n = points.rows();
  Matrix centroids(n_clusters, points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());

  auto take = [&](Eigen::Index idx, int slot) {
    chosen[static_cast<std::size_t>(idx)] = true;
    centroids.row(slot) = points.row(idx);
    for (Eigen::Index i = 0; i < n; ++i)
      nearest[static_cast<std::size_t>(i)] =
          std::min(nearest[static_cast<std::size_t>(i)], kernels::squared_distance(row_span(points, i), row_span(points, idx)));
  };

  take(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))), 0);
  for (int slot = 1; slot < n_clusters; ++slot) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest[static_cast<std::size_t>(i)];
        if (acc > target && nearest[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Eigen::Index i = n - 1; i >= 0; --i)
          if (nearest[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
      }
    }
    if (pick < 0) {
      // Every point coincides with a chosen centroid: take the first unused one.
      for (Eigen::Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
    }
    take(pick, slot);
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, const KMeansOptions& options) {
  const Eigen::Index n = points.rows();
  require(options.n_clusters >= 1, ErrorKind::Argument, "n_clusters must be >= 1");
  require(options.n_clusters <= n, ErrorKind::Argument,
          "n_clusters (" + std::to_string(options.n_clusters) + ") exceeds point count (" + std::to_string(n) + ")");
  require(options.max_iter >= 1, ErrorKind::Argument, "max_iter must be >= 1");
  require(points.allFinite(), ErrorKind::Validation, "kmeans points must be finite");

  Rng rng(options.seed);
  KMeansResult result;
  result.centroids = seed_plus_plus(points, options.n_clusters, rng);
  result.assignments.assign(static_cast<std::size_t>(n), 0);
  result.sse_history.push_back(assign(points, result.centroids, result.assignments));

  std::vector<int> next(result.assignments.size());
  for (int iter = 0; iter < options.max_iter; ++iter) {
    Matrix sums = Matrix::Zero(options.n_clusters, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(options.n_clusters), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = result.assignments[static_cast<std::size_t>(i)];
      kernels::axpy(1.0, row_span(points, i), row_span(sums, c));
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < options.n_clusters; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0)
        result.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);

    const double sse = assign(points, result.centroids, next);
    const double previous = result.sse_history.back();
    if (sse > previous + 1e-12 * std::max(1.0, previous))
      fail(ErrorKind::Internal, "kmeans SSE increased from " + std::to_string(previous) + " to " + std::to_string(sse));
    result.sse_history.push_back(sse);
    result.iterations = iter + 1;
    if (next == result.assignments) {
      result.converged = true;
      break;
    }
    result.assignments.swap(next);
  }
  return result;
}

Vector average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Vector ranks(static_cast<Eigen::Index>(n));
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks(static_cast<Eigen::Index>(order[t])) = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

// Pearson correlation of two already-centered vectors.
double centered_correlation(std::span<const double> a, std::span<const double> b, double norm_a, double norm_b) {
  if (norm_a <= 0.0 || norm_b <= 0.0) return 0.0;
  return std::clamp(kernels::dot(a, b) / (norm_a * norm_b), -1.0, 1.0);
}

Vector centered_ranks(std::span<const double> values) {
  Vector r = average_ranks(values);
  r.array() -= r.mean();
  // Rank variance this small only arises from all-tied inputs.
  if (r.squaredNorm() < 1e-18) r.setZero();
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Shape, "spearman: length mismatch");
  require(x.size() >= 2, ErrorKind::Shape, "spearman needs at least 2 points");
  const Vector rx = centered_ranks(x);
  const Vector ry = centered_ranks(y);
  return centered_correlation(span_of(rx), span_of(ry), rx.norm(), ry.norm());
}

CorrelationTest spearman_permutation_test(std::span<const double> x, std::span<const double> y,
                                          int n_permutations, std::uint64_t seed) {
  require(x.size() == y.size(), ErrorKind::Shape, "spearman: length mismatch");
  require(x.size() >= 2, ErrorKind::Shape, "spearman needs at least 2 points");
  require(n_permutations >= 1, ErrorKind::Argument, "need at least one permutation");
  const Vector rx = centered_ranks(x);
  Vector ry = centered_ranks(y);
  const double nx = rx.norm();
  const double ny = ry.norm();

  CorrelationTest test;
  test.rho = centered_correlation(span_of(rx), span_of(ry), nx, ny);
  test.permutations = n_permutations;
  const double threshold = std::abs(test.rho) - 1e-12;
  Rng rng(seed);
  int extreme = 0;
  for (int p = 0; p < n_permutations; ++p) {
    for (Eigen::Index i = ry.size() - 1; i > 0; --i)
      std::swap(ry(i), ry(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)))));
    if (std::abs(centered_correlation(span_of(rx), span_of(ry), nx, ny)) >= threshold) ++extreme;
  }
  test.p_value = (1.0 + extreme) / (1.0 + n_permutations);
  return test;
}

}  // namespace featurescope
