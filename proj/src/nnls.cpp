#include "featurescope/nnls.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "featurescope/error.hpp"
#include "featurescope/kernels.hpp"

namespace featurescope {

namespace {

double objective(const Eigen::MatrixXd& gram, const Vector& b, const Vector& z) {
  return 0.5 * z.dot(gram * z) - b.dot(z);
}

// Solves the passive-set system G_PP s = b_P.
Vector solve_passive(const Eigen::MatrixXd& gram, const Vector& b, const std::vector<Eigen::Index>& passive) {
  const auto m = static_cast<Eigen::Index>(passive.size());
  Eigen::MatrixXd sub(m, m);
  Vector rhs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    rhs(i) = b(passive[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m; ++j) sub(i, j) = gram(passive[static_cast<std::size_t>(i)], passive[static_cast<std::size_t>(j)]);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sub);
  if (llt.info() == Eigen::Success) {
    Vector s = llt.solve(rhs);
    if (s.allFinite()) return s;
  }
  return sub.completeOrthogonalDecomposition().solve(rhs);
}

}  // namespace

double nnls_scale(const Vector& b) { return b.size() == 0 ? 0.0 : b.cwiseAbs().maxCoeff(); }

double kkt_residual(const Eigen::MatrixXd& gram, const Vector& b, const Vector& z) {
  const Vector g = gram * z - b;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double r = z(i) > 0.0 ? std::abs(g(i)) : std::max(0.0, -g(i));
    worst = std::max(worst, r);
  }
  return worst;
}

Vector nnls_active_set(const Eigen::MatrixXd& gram, const Vector& b) {
  const Eigen::Index k = b.size();
  require(gram.rows() == k && gram.cols() == k, ErrorKind::Shape, "NNLS Gram/rhs size mismatch");
  Vector z = Vector::Zero(k);
  const double scale = nnls_scale(b);
  if (scale == 0.0) return z;
  const double tol = 1e-11 * scale;

  std::vector<bool> passive(static_cast<std::size_t>(k), false);
  std::vector<bool> blocked(static_cast<std::size_t>(k), false);
  Vector w = b;
  const int max_outer = static_cast<int>(3 * k + 30);

  for (int outer = 0; outer < max_outer; ++outer) {
    Eigen::Index enter = -1;
    double best = tol;
    for (Eigen::Index i = 0; i < k; ++i)
      if (!passive[static_cast<std::size_t>(i)] && !blocked[static_cast<std::size_t>(i)] && w(i) > best) {
        best = w(i);
        enter = i;
      }
    if (enter < 0) break;
    passive[static_cast<std::size_t>(enter)] = true;

    bool first_pass = true;
    for (int inner = 0; inner <= k + 1; ++inner) {
      std::vector<Eigen::Index> p;
      for (Eigen::Index i = 0; i < k; ++i)
        if (passive[static_cast<std::size_t>(i)]) p.push_back(i);
      if (p.empty()) break;
      const Vector s = solve_passive(gram, b, p);

      bool feasible = true;
      for (Eigen::Index i = 0; i < s.size(); ++i) feasible = feasible && s(i) > 0.0;
      if (feasible) {
        z.setZero();
        for (std::size_t i = 0; i < p.size(); ++i) z(p[i]) = s(static_cast<Eigen::Index>(i));
        std::fill(blocked.begin(), blocked.end(), false);
        break;
      }
      if (first_pass) {
        // The entering variable cannot move off zero (rounding-level gain):
        // drop it and try the next candidate.
        const auto pos = std::find(p.begin(), p.end(), enter) - p.begin();
        if (s(pos) <= 0.0) {
          passive[static_cast<std::size_t>(enter)] = false;
          blocked[static_cast<std::size_t>(enter)] = true;
          break;
        }
      }
      first_pass = false;

      double alpha = 1.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double si = s(static_cast<Eigen::Index>(i));
        const double zi = z(p[i]);
        if (si <= 0.0) alpha = std::min(alpha, zi / (zi - si));
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const Eigen::Index idx = p[i];
        z(idx) += alpha * (s(static_cast<Eigen::Index>(i)) - z(idx));
        if (z(idx) <= 1e-15 * scale) {
          z(idx) = 0.0;
          passive[static_cast<std::size_t>(idx)] = false;
        }
      }
    }
    w = b - gram * z;
  }
  return z;
}

double lipschitz_constant(const Eigen::MatrixXd& gram) {
  if (gram.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  return std::max(eig.eigenvalues().maxCoeff(), 0.0);
}

Vector nnls_projected_gradient(const Eigen::MatrixXd& gram, const Vector& b, double lipschitz,
                               const NnlsOptions& options, const Vector* warm) {
  const Eigen::Index k = b.size();
  require(gram.rows() == k && gram.cols() == k, ErrorKind::Shape, "NNLS Gram/rhs size mismatch");
  Vector z = warm ? Vector(warm->cwiseMax(0.0)) : Vector(Vector::Zero(k));
  require(z.size() == k, ErrorKind::Shape, "warm start has wrong length");
  const double scale = nnls_scale(b);
  if (scale == 0.0 || lipschitz <= 0.0) {
    if (scale == 0.0) z.setZero();
    return z;
  }
  const double stop = options.kkt_tol * scale;
  const double step = 1.0 / lipschitz;

  Vector y = z;
  Vector g(k);
  Vector candidate(k);
  double fz = objective(gram, b, z);
  double t = 1.0;
  for (int it = 0; it < options.max_iter; ++it) {
    if (it % 8 == 0 && kkt_residual(gram, b, z) <= stop) break;
    g.noalias() = gram * y - b;
    candidate = (y - step * g).cwiseMax(0.0);
    const double fc = objective(gram, b, candidate);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (fc <= fz) {
      const Vector previous = z;
      z = candidate;
      fz = fc;
      y = z + ((t - 1.0) / t_next) * (z - previous);
      t = t_next;
    } else {
      // Momentum overshoot: restart from the best point.
      y = z;
      t = 1.0;
    }
  }
  return z;
}

NnlsSolver::NnlsSolver(Eigen::MatrixXd gram, NnlsOptions options)
    : gram_(std::move(gram)), options_(options), method_(options.method) {
  require(gram_.rows() == gram_.cols(), ErrorKind::Shape, "NNLS Gram must be square");
  if (method_ == NnlsMethod::Auto)
    method_ = gram_.rows() <= kActiveSetMaxK ? NnlsMethod::ActiveSet : NnlsMethod::ProjectedGradient;
  if (method_ == NnlsMethod::ProjectedGradient) lipschitz_ = lipschitz_constant(gram_);
}

Vector NnlsSolver::solve(const Vector& b, const Vector* warm) const {
  if (method_ == NnlsMethod::ActiveSet) return nnls_active_set(gram_, b);
  return nnls_projected_gradient(gram_, b, lipschitz_, options_, warm);
}

}  // namespace featurescope
