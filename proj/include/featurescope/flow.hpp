#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "featurescope/acts_io.hpp"
#include "featurescope/dictionary.hpp"
#include "featurescope/types.hpp"

namespace featurescope {

// Linear CKA on centered Gram matrices:
//
//   CKA(A, B) = ||K_A K_B||_F^2 / (||K_A K_A||_F ||K_B K_B||_F)
//
// evaluated in feature space (K_A K_B traces reduce to products of the
// p x p / q x q / p x q covariance blocks) so cost is O(n (p + q)^2).
// Returns 0 when either Gram matrix is zero.
double cka(const Matrix& a, const Matrix& b);
double cka(const Matrix& a, const Vector& z);

// Precomputes the centered covariance blocks of an activation matrix so that
// CKA against many features, or against column subsets, is cheap.
class CkaActivations {
 public:
  explicit CkaActivations(const Matrix& a);

  // Centered feature projected onto the activations: m = A_c^T z_c, s = ||z_c||^2.
  struct Projection {
    Vector m;
    double s = 0.0;
  };
  Projection project(const Vector& z) const;

  double with_feature(const Vector& z) const { return score(project(z)); }
  double score(const Projection& p) const;
  // CKA of the activations with all columns outside `kept` zeroed.
  double score_masked(const Projection& p, const std::vector<Eigen::Index>& kept) const;

  Eigen::Index samples() const { return centered_.rows(); }
  Eigen::Index units() const { return centered_.cols(); }

 private:
  Matrix centered_;
  Eigen::MatrixXd cov_;  // A_c^T A_c
};

struct FlowPoint {
  std::string block;
  double cka_residual = 0.0;
  double cka_main = 0.0;
};

struct FlowCurve {
  Eigen::Index feature_id = 0;
  std::vector<FlowPoint> per_block;
};

FlowCurve branch_flow(const Manifest& manifest, const Vector& z, const SampleIds& z_ids, std::uint32_t epoch);
std::vector<FlowCurve> branch_flow_batch(const Manifest& manifest, const FeatureMatrix& features,
                                         const std::vector<Eigen::Index>& feature_ids, std::uint32_t epoch,
                                         int threads = 1);

inline const std::vector<double> kDefaultMaskFractions{0.1, 0.5, 0.9};
inline constexpr int kDefaultMasks = 20;

struct RedundancyScore {
  Eigen::Index feature_id = 0;
  std::map<double, double> per_fraction;
  double aggregate = 0.0;
};

// Number of zeroed columns for a mask fraction: ceil(fraction * d).
Eigen::Index masked_count(double fraction, Eigen::Index d);

// Mean over exact-count random masks of CKA(acts * m, z) / CKA(acts, z), per
// fraction; aggregate is the mean over fractions. Mask m for (fraction index
// f, draw i) comes from the stream Rng::derive(seed, f, i).
RedundancyScore redundancy(const Matrix& final_acts, const Vector& z, const std::vector<double>& fractions,
                           int n_masks, std::uint64_t seed);
RedundancyScore redundancy(const CkaActivations& acts, const Vector& z, const std::vector<double>& fractions,
                           int n_masks, std::uint64_t seed);

inline const std::vector<double> kDefaultSigmas{0.01, 0.1, 0.5};
inline constexpr int kDefaultNoiseDraws = 100;

struct SensitivityScore {
  Eigen::Index feature_id = 0;
  std::map<double, double> per_sigma;
  double aggregate = 0.0;
};

struct SensitivityOptions {
  std::vector<double> sigmas = kDefaultSigmas;
  int n_noise = kDefaultNoiseDraws;
  ExtractOptions extract;
};

// For each sigma, extracts features from the first n_noise perturbed dumps,
// takes the population variance of each feature across draws per sample and
// averages over samples. One score per dictionary feature.
std::vector<SensitivityScore> sensitivity_all(const Manifest& manifest, const Dictionary& dict,
                                              const SensitivityOptions& options);
SensitivityScore sensitivity(const Manifest& manifest, const Dictionary& dict, Eigen::Index feature_id,
                             const SensitivityOptions& options);

// Same statistic from in-memory perturbed feature tables: draws[s][r] is the
// n x k feature matrix of noise draw r at sigma index s.
std::vector<SensitivityScore> sensitivity_from_draws(const std::vector<double>& sigmas,
                                                     const std::vector<std::vector<Matrix>>& draws);

}  // namespace featurescope
