#include "featurescope/metafeatures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "featurescope/error.hpp"
#include "featurescope/numkit.hpp"

namespace featurescope {

MetaFeatureSet cluster_dictionary(const Dictionary& dict, int n_clusters, std::uint64_t seed, int max_iter) {
  Matrix normalized = dict.atoms;
  for (Eigen::Index r = 0; r < normalized.rows(); ++r) {
    const double norm = normalized.row(r).norm();
    if (norm > 0.0) normalized.row(r) /= norm;
  }
  const KMeansResult km = kmeans(normalized, {n_clusters, seed, max_iter});
  MetaFeatureSet set;
  set.assignments = km.assignments;
  set.n_clusters = n_clusters;
  return set;
}

MetaFeatureSet aggregate_complexity(MetaFeatureSet set, const std::vector<ComplexityProfile>& profiles) {
  const auto k = static_cast<Eigen::Index>(set.assignments.size());
  std::vector<const ComplexityProfile*> by_id(static_cast<std::size_t>(k), nullptr);
  for (const auto& p : profiles)
    if (p.feature_id >= 0 && p.feature_id < k) by_id[static_cast<std::size_t>(p.feature_id)] = &p;
  for (Eigen::Index f = 0; f < k; ++f)
    require(by_id[static_cast<std::size_t>(f)] != nullptr, ErrorKind::Alignment,
            "no complexity profile for feature " + std::to_string(f));

  set.per_cluster.assign(static_cast<std::size_t>(set.n_clusters), {});
  for (int c = 0; c < set.n_clusters; ++c) set.per_cluster[static_cast<std::size_t>(c)].cluster_id = c;
  for (Eigen::Index f = 0; f < k; ++f) {
    const int c = set.assignments[static_cast<std::size_t>(f)];
    require(c >= 0 && c < set.n_clusters, ErrorKind::Argument, "assignment out of range");
    auto& cluster = set.per_cluster[static_cast<std::size_t>(c)];
    cluster.members.push_back(f);
    cluster.mean_complexity += by_id[static_cast<std::size_t>(f)]->complexity_k;
  }
  for (auto& cluster : set.per_cluster) {
    cluster.member_count = static_cast<Eigen::Index>(cluster.members.size());
    cluster.empty = cluster.member_count == 0;
    if (!cluster.empty) cluster.mean_complexity /= static_cast<double>(cluster.member_count);
  }
  return set;
}

std::vector<int> rank_by_complexity(const MetaFeatureSet& set) {
  std::vector<int> ids;
  for (const auto& c : set.per_cluster)
    if (!c.empty) ids.push_back(c.cluster_id);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    const double ka = set.per_cluster[static_cast<std::size_t>(a)].mean_complexity;
    const double kb = set.per_cluster[static_cast<std::size_t>(b)].mean_complexity;
    return ka != kb ? ka < kb : a < b;
  });
  return ids;
}

std::vector<int> select_spectrum(const MetaFeatureSet& set, int count) {
  const std::vector<int> ranked = rank_by_complexity(set);
  if (count <= 0 || ranked.empty()) return {};
  if (static_cast<std::size_t>(count) >= ranked.size()) return ranked;
  std::vector<int> picked;
  const double span = static_cast<double>(ranked.size() - 1);
  for (int i = 0; i < count; ++i) {
    const auto pos = count == 1 ? std::size_t{0}
                                : static_cast<std::size_t>(std::lround(span * i / static_cast<double>(count - 1)));
    picked.push_back(ranked[pos]);
  }
  return picked;
}

}  // namespace featurescope
