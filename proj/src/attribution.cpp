#include "featurescope/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "featurescope/error.hpp"

namespace featurescope {

FoldedHead fold_head(const Dictionary& dict, const Matrix& head_weights) {
  require(head_weights.rows() == dict.d(), ErrorKind::Shape,
          "head has " + std::to_string(head_weights.rows()) + " input units, dictionary atoms have " +
              std::to_string(dict.d()));
  require(head_weights.cols() >= 1, ErrorKind::Shape, "head has no classes");
  return FoldedHead{dict.atoms * head_weights};
}

std::vector<int> predicted_classes(const FeatureMatrix& features, const FoldedHead& head) {
  require(features.values.cols() == head.w_prime.rows(), ErrorKind::Shape, "features and folded head disagree on k");
  const Matrix logits = features.values * head.w_prime;
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(argmax_row(logits, i));
  return out;
}

namespace {

void check_targets(const Matrix& z, const FoldedHead& head, std::span<const int> target_class) {
  require(z.cols() == head.w_prime.rows(), ErrorKind::Shape, "features and folded head disagree on k");
  require(static_cast<Eigen::Index>(target_class.size()) == z.rows(), ErrorKind::Shape,
          "one target class per sample required");
  const auto classes = static_cast<int>(head.class_count());
  for (const int c : target_class)
    require(c >= 0 && c < classes, ErrorKind::Argument, "target class " + std::to_string(c) + " out of range");
}

}  // namespace

Matrix contributions(const FeatureMatrix& features, const FoldedHead& head, std::span<const int> target_class) {
  const Matrix& z = features.values;
  check_targets(z, head, target_class);
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const int c = target_class[static_cast<std::size_t>(s)];
    for (Eigen::Index i = 0; i < z.cols(); ++i) out(s, i) = head.w_prime(i, c) * z(s, i);
  }
  return out;
}

ImportanceReport importance(const FeatureMatrix& features, const FoldedHead& head, std::span<const int> target_class,
                            std::optional<int> only_class) {
  const Matrix& z = features.values;
  const Eigen::Index k = z.cols();
  check_targets(z, head, target_class);
  const auto classes = static_cast<int>(head.class_count());
  if (only_class) require(*only_class >= 0 && *only_class < classes, ErrorKind::Argument, "class filter out of range");
  const Matrix contribution = contributions(features, head, target_class);

  Vector abs_sum = Vector::Zero(k);
  Vector signed_sum = Vector::Zero(k);
  Vector active = Vector::Zero(k);
  Eigen::Index used = 0;
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const int c = target_class[static_cast<std::size_t>(s)];
    if (only_class && c != *only_class) continue;
    ++used;
    for (Eigen::Index i = 0; i < k; ++i) {
      abs_sum(i) += std::abs(contribution(s, i));
      signed_sum(i) += contribution(s, i);
      active(i) += z(s, i) > 0.0 ? 1.0 : 0.0;
    }
  }
  ImportanceReport report;
  report.samples_used = used;
  const double denom = used > 0 ? static_cast<double>(used) : 1.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    FeatureImportance fi;
    fi.feature_id = i;
    fi.importance = abs_sum(i) / denom;
    fi.mean_signed = signed_sum(i) / denom;
    fi.inhibitor = fi.mean_signed < 0.0;
    fi.frequency = active(i) / denom;
    report.per_feature.push_back(fi);
  }
  return report;
}

SimplicityBiasTable simplicity_bias_table(const std::vector<ComplexityProfile>& profiles, const ImportanceReport& report,
                                          int n_permutations, std::uint64_t seed) {
  std::unordered_map<Eigen::Index, double> importance_of;
  for (const auto& fi : report.per_feature) importance_of[fi.feature_id] = fi.importance;
  require(profiles.size() == report.per_feature.size(), ErrorKind::Alignment,
          "complexity profiles and importance report cover different feature sets");
  SimplicityBiasTable table;
  std::vector<double> ks;
  std::vector<double> imps;
  for (const auto& p : profiles) {
    const auto it = importance_of.find(p.feature_id);
    require(it != importance_of.end(), ErrorKind::Alignment,
            "feature " + std::to_string(p.feature_id) + " has no importance entry");
    table.rows.push_back({p.feature_id, p.complexity_k, it->second});
    ks.push_back(p.complexity_k);
    imps.push_back(it->second);
  }
  require(ks.size() >= 2, ErrorKind::Argument, "need at least 2 features for a correlation");
  table.correlation = spearman_permutation_test(ks, imps, n_permutations, seed);
  return table;
}

std::vector<AblationPoint> support_ablation(const FeatureMatrix& features, const FoldedHead& head,
                                            std::span<const int> labels, std::span<const Eigen::Index> order,
                                            std::span<const double> steps) {
  const Eigen::Index k = features.values.cols();
  const Eigen::Index n = features.values.rows();
  require(k == head.w_prime.rows(), ErrorKind::Shape, "features and folded head disagree on k");
  require(static_cast<Eigen::Index>(labels.size()) == n, ErrorKind::Shape, "one label per sample required");
  require(static_cast<Eigen::Index>(order.size()) == k, ErrorKind::Argument, "order must be a permutation of all features");
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (const auto f : order) {
    require(f >= 0 && f < k && !seen[static_cast<std::size_t>(f)], ErrorKind::Argument,
            "order is not a permutation of feature ids");
    seen[static_cast<std::size_t>(f)] = true;
  }
  for (const int label : labels)
    require(label >= 0 && label < head.class_count(), ErrorKind::Argument, "label " + std::to_string(label) + " out of range");

  std::vector<AblationPoint> curve;
  for (const double fraction : steps) {
    require(fraction >= 0.0 && fraction <= 1.0, ErrorKind::Argument, "ablation fractions must lie in [0, 1]");
    const auto removed = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(k) - 1e-9)), 0, k);
    Matrix w = head.w_prime;
    for (Eigen::Index r = 0; r < removed; ++r) w.row(order[static_cast<std::size_t>(r)]).setZero();
    const Matrix logits = features.values * w;
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) correct += argmax_row(logits, i) == labels[static_cast<std::size_t>(i)];
    curve.push_back({fraction, removed, n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0});
  }
  return curve;
}

std::vector<Eigen::Index> complexity_order(const std::vector<ComplexityProfile>& profiles) {
  std::vector<std::size_t> idx(profiles.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (profiles[a].complexity_k != profiles[b].complexity_k) return profiles[a].complexity_k > profiles[b].complexity_k;
    return profiles[a].feature_id < profiles[b].feature_id;
  });
  std::vector<Eigen::Index> order;
  for (const auto i : idx) order.push_back(profiles[i].feature_id);
  return order;
}

}  // namespace featurescope
