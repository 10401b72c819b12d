#pragma once

// Non-negative least squares in Gram form:
//
//   min_{z >= 0} 0.5 z^T G z - b^T z     (G = D D^T, b = D a^T)
//
// which is min ||a - z D||^2 up to a constant.

#include "featurescope/types.hpp"

namespace featurescope {

enum class NnlsMethod { Auto, ActiveSet, ProjectedGradient };

inline constexpr Eigen::Index kActiveSetMaxK = 64;

struct NnlsOptions {
  NnlsMethod method = NnlsMethod::Auto;
  // Projected-gradient stop: KKT residual <= kkt_tol * scale.
  double kkt_tol = 1e-6;
  int max_iter = 20000;
};

// scale = ||b||_inf. Zero when b = 0.
double nnls_scale(const Vector& b);

// max_i of |g_i| where z_i > 0 and max(0, -g_i) where z_i = 0, g = G z - b.
double kkt_residual(const Eigen::MatrixXd& gram, const Vector& b, const Vector& z);

// Lawson-Hanson active-set solver (exact up to rounding).
Vector nnls_active_set(const Eigen::MatrixXd& gram, const Vector& b);

// Monotone accelerated projected gradient with step 1/L, started from `warm`
// (or zero). Never returns a point with a higher objective than the start.
Vector nnls_projected_gradient(const Eigen::MatrixXd& gram, const Vector& b, double lipschitz,
                               const NnlsOptions& options, const Vector* warm = nullptr);

// Largest eigenvalue of a symmetric PSD matrix.
double lipschitz_constant(const Eigen::MatrixXd& gram);

// Dispatches on options.method; Auto uses the active-set solver up to
// kActiveSetMaxK variables and projected gradient beyond.
class NnlsSolver {
 public:
  NnlsSolver(Eigen::MatrixXd gram, NnlsOptions options = {});

  Vector solve(const Vector& b, const Vector* warm = nullptr) const;

  const Eigen::MatrixXd& gram() const { return gram_; }
  NnlsMethod method() const { return method_; }

 private:
  Eigen::MatrixXd gram_;
  NnlsOptions options_;
  NnlsMethod method_;
  double lipschitz_ = 0.0;
};

}  // namespace featurescope
