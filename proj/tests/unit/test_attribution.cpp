#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

#include "featurescope/attribution.hpp"
#include "featurescope/error.hpp"

using namespace featurescope;

namespace {

Dictionary dictionary_of(Matrix atoms) {
  Dictionary d;
  d.atoms = std::move(atoms);
  return d;
}

FeatureMatrix features_of(Matrix values) {
  FeatureMatrix f;
  f.values = std::move(values);
  f.sample_ids.resize(static_cast<std::size_t>(f.values.rows()));
  std::iota(f.sample_ids.begin(), f.sample_ids.end(), 0);
  return f;
}

}  // namespace

TEST(FoldHead, IdentityAndHandComputed) {
  Rng rng(1);
  const Matrix w = fstest::gaussian(rng, 4, 3);
  EXPECT_EQ(fold_head(dictionary_of(Matrix::Identity(4, 4)), w).w_prime, w);

  Matrix atoms(3, 2);
  atoms << 1, 2, 0, 1, 3, 0;
  Matrix head(2, 1);
  head << 0.5, -1;
  const auto folded = fold_head(dictionary_of(atoms), head);
  EXPECT_NEAR(folded.w_prime(0, 0), -1.5, 1e-12);
  EXPECT_NEAR(folded.w_prime(1, 0), -1.0, 1e-12);
  EXPECT_NEAR(folded.w_prime(2, 0), 1.5, 1e-12);
  EXPECT_THROW(fold_head(dictionary_of(atoms), Matrix::Ones(3, 1)), Error);
}

TEST(FoldHead, Associativity) {
  Rng rng(2);
  const Dictionary d = dictionary_of(fstest::uniform(rng, 12, 5));
  const Matrix w = fstest::gaussian(rng, 5, 3);
  const Matrix z = fstest::uniform(rng, 9, 12);
  const Matrix direct = (z * d.atoms) * w;
  const Matrix folded = z * fold_head(d, w).w_prime;
  EXPECT_LT((direct - folded).norm(), 1e-10 * direct.norm());
}

TEST(Importance, OneHotFeature) {
  Matrix w(3, 1);
  w << 2, -1, 4;
  const FoldedHead head{w};
  Matrix z = Matrix::Zero(2, 3);
  z(0, 1) = 3.0;
  z(1, 1) = 1.0;
  const std::vector<int> target{0, 0};
  const auto r = importance(features_of(z), head, target);
  EXPECT_EQ(r.per_feature[0].importance, 0.0);
  EXPECT_NEAR(r.per_feature[1].importance, 2.0, 1e-15);
  EXPECT_NEAR(r.per_feature[1].mean_signed, -2.0, 1e-15);
  EXPECT_TRUE(r.per_feature[1].inhibitor);
  EXPECT_FALSE(r.per_feature[2].inhibitor);
  EXPECT_EQ(r.per_feature[1].frequency, 1.0);
  EXPECT_EQ(r.per_feature[0].frequency, 0.0);
}

TEST(Importance, ClassFilterAndValidation) {
  Rng rng(3);
  const FoldedHead head{fstest::gaussian(rng, 4, 2)};
  const auto f = features_of(fstest::uniform(rng, 6, 4));
  const std::vector<int> target{0, 1, 1, 0, 1, 1};
  const auto only1 = importance(f, head, target, 1);
  EXPECT_EQ(only1.samples_used, 4);
  double expected = 0.0;
  for (int i : {1, 2, 4, 5}) expected += std::abs(head.w_prime(2, 1) * f.values(i, 2));
  EXPECT_NEAR(only1.per_feature[2].importance, expected / 4.0, 1e-14);

  const std::vector<int> bad{0, 1, 2, 0, 1, 1};
  try {
    importance(f, head, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Argument);
  }
}

TEST(Importance, AbsolutelyHomogeneousPerFeature) {
  Rng rng(4);
  const FoldedHead head{fstest::gaussian(rng, 5, 3)};
  const auto f = features_of(fstest::uniform(rng, 20, 5));
  const auto targets = predicted_classes(f, head);
  const auto base = importance(f, head, targets);
  auto scaled = f;
  scaled.values.col(2) *= 2.5;
  const auto after = importance(scaled, head, targets);
  for (std::size_t i = 0; i < 5; ++i) {
    const double factor = i == 2 ? 2.5 : 1.0;
    EXPECT_NEAR(after.per_feature[i].importance, factor * base.per_feature[i].importance, 1e-13);
  }
}

TEST(Ablation, EndpointsAndDuplicates) {
  Rng rng(5);
  const FoldedHead head{fstest::gaussian(rng, 6, 3)};
  const auto f = features_of(fstest::uniform(rng, 40, 6));
  const auto predicted = predicted_classes(f, head);
  std::vector<int> labels = predicted;
  for (std::size_t i = 0; i < labels.size(); i += 3) labels[i] = (labels[i] + 1) % 3;
  std::vector<Eigen::Index> order(6);
  std::iota(order.begin(), order.end(), 0);
  const std::vector<double> steps{0.0, 0.5, 1.0};
  const auto curve = support_ablation(f, head, labels, order, steps);
  double baseline = 0.0;
  double zero_class = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    baseline += predicted[i] == labels[i];
    zero_class += labels[i] == 0;
  }
  EXPECT_EQ(curve[0].accuracy, baseline / 40.0);
  EXPECT_EQ(curve[0].removed, 0);
  EXPECT_EQ(curve[1].removed, 3);
  EXPECT_EQ(curve[2].accuracy, zero_class / 40.0);

  // Features 3..5 duplicate 0..2 and the weights are split between copies.
  Matrix w(6, 2);
  w.topRows(3) = fstest::gaussian(rng, 3, 2);
  w.bottomRows(3) = w.topRows(3);
  Matrix z(30, 6);
  z.leftCols(3) = fstest::uniform(rng, 30, 3);
  z.rightCols(3) = z.leftCols(3);
  const FoldedHead split{w};
  const auto dup = features_of(z);
  const auto dup_labels = predicted_classes(dup, split);
  Matrix doubled = 2.0 * w.topRows(3);
  const auto kept = predicted_classes(features_of(Matrix(z.leftCols(3))), FoldedHead{doubled});
  EXPECT_EQ(kept, dup_labels);

  std::vector<Eigen::Index> bad_order{0, 1, 1, 2, 3, 4};
  EXPECT_THROW(support_ablation(f, head, labels, bad_order, steps), Error);
}

TEST(Ablation, ComplexityOrder) {
  std::vector<ComplexityProfile> profiles(4);
  const double ks[] = {0.2, 0.9, 0.2, 0.5};
  for (int i = 0; i < 4; ++i) {
    profiles[static_cast<std::size_t>(i)].feature_id = i;
    profiles[static_cast<std::size_t>(i)].complexity_k = ks[i];
  }
  EXPECT_EQ(complexity_order(profiles), (std::vector<Eigen::Index>{1, 3, 0, 2}));
}

TEST(SimplicityBias, ConstantImportanceAndAntiCorrelation) {
  std::vector<ComplexityProfile> profiles(30);
  ImportanceReport flat;
  ImportanceReport anti;
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    profiles[static_cast<std::size_t>(i)].feature_id = i;
    profiles[static_cast<std::size_t>(i)].complexity_k = i / 30.0;
    flat.per_feature.push_back({i, 1.0, 1.0, false, 1.0});
    anti.per_feature.push_back({i, 1.0 - i / 30.0 + 0.01 * rng.normal(), 0.0, false, 1.0});
  }
  const auto t0 = simplicity_bias_table(profiles, flat, 1000, 1);
  EXPECT_EQ(t0.correlation.rho, 0.0);
  EXPECT_GT(t0.correlation.p_value, 0.99);
  const auto t1 = simplicity_bias_table(profiles, anti, 1000, 1);
  EXPECT_LT(t1.correlation.rho, -0.8);
  EXPECT_EQ(t1.rows.size(), 30u);

  ImportanceReport missing = anti;
  missing.per_feature.pop_back();
  EXPECT_THROW(simplicity_bias_table(profiles, missing, 10, 1), Error);
}
