#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "support.hpp"

#include "featurescope/error.hpp"
#include "featurescope/metafeatures.hpp"

using namespace featurescope;

namespace {

std::vector<ComplexityProfile> profiles_with(const std::vector<double>& ks) {
  std::vector<ComplexityProfile> p(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    p[i].feature_id = static_cast<Eigen::Index>(i);
    p[i].complexity_k = ks[i];
  }
  return p;
}

Dictionary two_groups(Rng& rng) {
  Dictionary d;
  d.atoms = Matrix::Zero(10, 6);
  for (Eigen::Index i = 0; i < 10; ++i) {
    const Eigen::Index base = i < 5 ? 0 : 3;
    for (Eigen::Index j = 0; j < 3; ++j) d.atoms(i, base + j) = rng.uniform(0.5, 1.0) * (i + 1);
  }
  return d;
}

}  // namespace

TEST(MetaFeatures, SeparatesOrthogonalGroups) {
  Rng rng(1);
  const Dictionary d = two_groups(rng);
  const auto set = cluster_dictionary(d, 2, 7);
  for (int i = 0; i < 10; ++i)
    EXPECT_EQ(set.assignments[static_cast<std::size_t>(i)] == set.assignments[0], i < 5);
  const auto again = cluster_dictionary(d, 2, 7);
  EXPECT_EQ(again.assignments, set.assignments);
}

TEST(MetaFeatures, SaturationGivesSingletons) {
  Rng rng(2);
  Dictionary d;
  d.atoms = fstest::uniform(rng, 6, 4);
  const auto set = cluster_dictionary(d, 6, 0);
  EXPECT_EQ(std::set<int>(set.assignments.begin(), set.assignments.end()).size(), 6u);
  EXPECT_THROW(cluster_dictionary(d, 7, 0), Error);
}

TEST(MetaFeatures, AggregateMeans) {
  Rng rng(3);
  const Dictionary d = two_groups(rng);
  auto set = cluster_dictionary(d, 2, 1);
  std::vector<double> ks(10);
  for (int i = 0; i < 10; ++i) ks[static_cast<std::size_t>(i)] = i < 5 ? 0.1 : 0.9;
  set = aggregate_complexity(set, profiles_with(ks));
  const int low = set.assignments[0];
  EXPECT_NEAR(set.per_cluster[static_cast<std::size_t>(low)].mean_complexity, 0.1, 1e-15);
  EXPECT_NEAR(set.per_cluster[static_cast<std::size_t>(1 - low)].mean_complexity, 0.9, 1e-15);
  EXPECT_EQ(rank_by_complexity(set).front(), low);

  auto constant = aggregate_complexity(cluster_dictionary(d, 3, 1), profiles_with(std::vector<double>(10, 0.4)));
  for (const auto& c : constant.per_cluster)
    if (!c.empty) EXPECT_NEAR(c.mean_complexity, 0.4, 1e-15);

  EXPECT_THROW(aggregate_complexity(set, profiles_with(std::vector<double>(9, 0.4))), Error);
}

TEST(MetaFeatures, GlobalMeanIsWeightedClusterMean) {
  Rng rng(4);
  Dictionary d;
  d.atoms = fstest::uniform(rng, 40, 8);
  std::vector<double> ks(40);
  for (auto& k : ks) k = rng.uniform();
  const auto set = aggregate_complexity(cluster_dictionary(d, 6, 2), profiles_with(ks));
  double weighted = 0.0;
  Eigen::Index total = 0;
  for (const auto& c : set.per_cluster) {
    weighted += c.mean_complexity * static_cast<double>(c.member_count);
    total += c.member_count;
  }
  EXPECT_EQ(total, 40);
  EXPECT_NEAR(weighted / 40.0, std::accumulate(ks.begin(), ks.end(), 0.0) / 40.0, 1e-10);
}

TEST(MetaFeatures, RankingTiesByIdAndSpectrum) {
  MetaFeatureSet set;
  set.n_clusters = 4;
  set.assignments = {0, 1, 2, 3};
  set = aggregate_complexity(set, profiles_with({0.5, 0.2, 0.5, 0.9}));
  EXPECT_EQ(rank_by_complexity(set), (std::vector<int>{1, 0, 2, 3}));
  EXPECT_EQ(select_spectrum(set, 2), (std::vector<int>{1, 3}));
  EXPECT_EQ(select_spectrum(set, 10).size(), 4u);
}
