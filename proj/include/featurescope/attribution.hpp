#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "featurescope/dictionary.hpp"
#include "featurescope/numkit.hpp"
#include "featurescope/types.hpp"
#include "featurescope/vinformation.hpp"

namespace featurescope {

// W' = D* W: feature values map straight to logits, y = z W'.
struct FoldedHead {
  Matrix w_prime;  // k x c

  Eigen::Index class_count() const { return w_prime.cols(); }
};

FoldedHead fold_head(const Dictionary& dict, const Matrix& head_weights);

// argmax_c (z W')_c per sample, ties to the lowest class.
std::vector<int> predicted_classes(const FeatureMatrix& features, const FoldedHead& head);

struct FeatureImportance {
  Eigen::Index feature_id = 0;
  double importance = 0.0;   // mean |W'_{i,c} z_i|
  double mean_signed = 0.0;  // mean W'_{i,c} z_i
  bool inhibitor = false;    // mean_signed < 0
  double frequency = 0.0;    // fraction of samples with z_i > 0
};

struct ImportanceReport {
  std::vector<FeatureImportance> per_feature;
  Eigen::Index samples_used = 0;
};

// Per-sample signed contributions W'_{i, target} z_i (n x k); each row sums to
// the target logit.
Matrix contributions(const FeatureMatrix& features, const FoldedHead& head, std::span<const int> target_class);

// Gradient-input importance in the penultimate layer. For every sample the
// contribution of feature i is W'_{i, target} z_i; the contributions sum to the
// target logit. With `only_class`, only samples whose target equals it count.
ImportanceReport importance(const FeatureMatrix& features, const FoldedHead& head, std::span<const int> target_class,
                            std::optional<int> only_class = std::nullopt);

struct SimplicityBiasRow {
  Eigen::Index feature_id = 0;
  double complexity = 0.0;
  double importance = 0.0;
};

struct SimplicityBiasTable {
  std::vector<SimplicityBiasRow> rows;
  CorrelationTest correlation;
};

inline constexpr int kDefaultPermutations = 10000;

SimplicityBiasTable simplicity_bias_table(const std::vector<ComplexityProfile>& profiles, const ImportanceReport& report,
                                          int n_permutations = kDefaultPermutations, std::uint64_t seed = 0);

struct AblationPoint {
  double fraction_removed = 0.0;
  Eigen::Index removed = 0;
  double accuracy = 0.0;
};

// Zeroes the first ceil(fraction * k) features of `order` and scores argmax
// (z W') against labels at each step.
std::vector<AblationPoint> support_ablation(const FeatureMatrix& features, const FoldedHead& head,
                                            std::span<const int> labels, std::span<const Eigen::Index> order,
                                            std::span<const double> steps);

// Feature ids sorted by decreasing complexity, ties by id.
std::vector<Eigen::Index> complexity_order(const std::vector<ComplexityProfile>& profiles);

}  // namespace featurescope
