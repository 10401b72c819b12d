#pragma once

#include <cstdint>
#include <vector>

#include "featurescope/dictionary.hpp"
#include "featurescope/vinformation.hpp"

namespace featurescope {

inline constexpr int kDefaultMetaClusters = 150;

struct ClusterSummary {
  int cluster_id = 0;
  Eigen::Index member_count = 0;
  double mean_complexity = 0.0;  // 0 and flagged when empty
  bool empty = false;
  std::vector<Eigen::Index> members;
};

struct MetaFeatureSet {
  std::vector<int> assignments;  // per atom
  int n_clusters = 0;
  std::vector<ClusterSummary> per_cluster;  // by cluster_id
};

// k-means over L2-normalized atom rows.
MetaFeatureSet cluster_dictionary(const Dictionary& dict, int n_clusters, std::uint64_t seed, int max_iter = 300);

// Fills per_cluster with member lists and mean K.
MetaFeatureSet aggregate_complexity(MetaFeatureSet set, const std::vector<ComplexityProfile>& profiles);

// Non-empty cluster ids by increasing mean complexity, ties by id.
std::vector<int> rank_by_complexity(const MetaFeatureSet& set);

// `count` clusters at evenly spaced positions of the complexity ranking,
// from simplest to most complex.
std::vector<int> select_spectrum(const MetaFeatureSet& set, int count);

}  // namespace featurescope
