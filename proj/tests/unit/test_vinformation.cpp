#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "support.hpp"

#include "featurescope/error.hpp"
#include "featurescope/synth.hpp"
#include "featurescope/vinformation.hpp"

using namespace featurescope;

namespace {

PlantSpec staged_spec(std::uint64_t seed, int n_epochs = 1) {
  PlantSpec s;
  s.n_samples = 500;
  s.n_layers = 4;
  s.n_epochs = n_epochs;
  s.n_units_per_layer = {10, 10, 10, 10};
  s.seed = seed;
  s.features = {{0, 1, 0, 10.0}, {1, 4, 0, 10.0}, {2, 2, n_epochs / 2, 10.0}};
  return s;
}

}  // namespace

TEST(VInformation, AffineFunctionOfInputIsOne) {
  Rng rng(1);
  const Matrix x = fstest::gaussian(rng, 60, 3);
  const Vector z = 3.0 * x.col(1).array() + 7.0;
  EXPECT_NEAR(v_information(x, z, 0.0), 1.0, 1e-8);
}

TEST(VInformation, IndependentNoiseIsSmall) {
  Rng rng(2);
  const Matrix x = fstest::gaussian(rng, 10000, 1);
  EXPECT_LT(v_information(x, fstest::gaussian_vector(rng, 10000), 0.0), 0.01);
}

TEST(VInformation, ConstantFeatureIsZero) {
  Rng rng(3);
  EXPECT_EQ(v_information(fstest::gaussian(rng, 10, 2), Vector::Constant(10, 1.5)), 0.0);
}

TEST(VInformation, MatchesLikelihoodOracle) {
  Rng rng(4);
  const Matrix x = fstest::gaussian(rng, 20, 3);
  const Vector z = x * Vector::Constant(3, 0.4) + 0.8 * fstest::gaussian_vector(rng, 20);
  EXPECT_NEAR(v_information(x, z, 0.0), oracle_vinfo(x, z), 1e-6);
}

TEST(VInformation, InvariantToAffineFeatureMapsAndInvertibleInputMaps) {
  Rng rng(5);
  const Matrix x = fstest::gaussian(rng, 40, 4);
  const Vector z = x.col(0) - x.col(2) + fstest::gaussian_vector(rng, 40);
  const double base = v_information(x, z, 0.0);
  EXPECT_NEAR(v_information(x, Vector(-2.5 * z.array() + 11.0), 0.0), base, 1e-10);
  Matrix mix = fstest::gaussian(rng, 4, 4);
  mix.diagonal().array() += 3.0;
  EXPECT_NEAR(v_information(x * mix, z, 0.0), base, 1e-8);
  Matrix with_const(40, 5);
  with_const << x, Matrix::Constant(40, 1, 2.0);
  EXPECT_NEAR(v_information(with_const, z), v_information(x, z), 1e-8);
}

TEST(VInformation, MisalignedInputsThrow) {
  try {
    v_information(Matrix::Ones(5, 2), Vector::Ones(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Alignment);
  }
}

TEST(Complexity, OneMinusMeanClips) {
  EXPECT_DOUBLE_EQ(one_minus_mean({1.0, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(one_minus_mean({0.0, 0.5}), 0.75);
}

TEST(Complexity, PlantedFeaturesFollowConstruction) {
  fstest::TempDir dir("vinfo");
  const auto out = generate(staged_spec(11), dir.path());
  const auto& gt = out.ground_truth;
  for (Eigen::Index f = 0; f < 3; ++f) {
    const auto p = complexity_score(out.manifest, gt.values.col(f), gt.sample_ids, 0);
    EXPECT_NEAR(p.complexity_k, out.k_expected[static_cast<std::size_t>(f)], 0.1);
    ASSERT_EQ(p.per_layer_vinfo.size(), 4u);
    const int first = f == 0 ? 1 : (f == 1 ? 4 : 2);
    for (int layer = 1; layer <= 4; ++layer) {
      const double v = p.per_layer_vinfo[static_cast<std::size_t>(layer - 1)].second;
      if (layer >= first) {
        EXPECT_GE(v, 0.8);
      } else {
        EXPECT_LE(v, 0.2);
      }
    }
  }
  Rng rng(1);
  const auto noise = complexity_score(out.manifest, fstest::gaussian_vector(rng, 500), gt.sample_ids, 0);
  EXPECT_GT(noise.complexity_k, 0.9);
}

TEST(Complexity, TimeToDecodeFollowsEmergence) {
  fstest::TempDir dir("ttd");
  const auto out = generate(staged_spec(12, 6), dir.path());
  const auto& gt = out.ground_truth;
  const auto early = time_to_decode(out.manifest, gt.values.col(0), gt.sample_ids);
  const auto late = time_to_decode(out.manifest, gt.values.col(2), gt.sample_ids);
  EXPECT_NEAR(*early.lambda_ttd, 0.0, 0.1);
  EXPECT_NEAR(*late.lambda_ttd, 0.5, 0.1);
  EXPECT_EQ(late.per_epoch_vinfo.size(), 6u);
}

TEST(Complexity, BatchMatchesIndividualCallsAndThreads) {
  fstest::TempDir dir("batch");
  const auto out = generate(staged_spec(13, 2), dir.path());
  FeatureMatrix features = out.ground_truth;
  Matrix values(features.values.rows(), 4);
  values << features.values, features.values.col(1);
  features.values = values;
  BatchOptions opts;
  opts.time_to_decode = true;
  opts.threads = 1;
  const auto serial = batch_profiles(out.manifest, features, opts);
  opts.threads = 4;
  const auto parallel = batch_profiles(out.manifest, features, opts);
  ASSERT_EQ(serial.size(), 4u);
  for (Eigen::Index f = 0; f < 4; ++f) {
    const auto& s = serial[static_cast<std::size_t>(f)];
    const auto single = complexity_score(out.manifest, features.values.col(f), features.sample_ids, 1);
    EXPECT_EQ(s.complexity_k, single.complexity_k);
    EXPECT_EQ(s.complexity_k, parallel[static_cast<std::size_t>(f)].complexity_k);
    EXPECT_EQ(*s.lambda_ttd, *parallel[static_cast<std::size_t>(f)].lambda_ttd);
    const auto t = time_to_decode(out.manifest, features.values.col(f), features.sample_ids);
    EXPECT_EQ(*s.lambda_ttd, *t.lambda_ttd);
  }
  EXPECT_EQ(serial[1].complexity_k, serial[3].complexity_k);
}

TEST(Complexity, BatchBudget) {
  fstest::TempDir dir("budget");
  PlantSpec s;
  s.n_samples = 200;
  s.n_layers = 4;
  s.n_units_per_layer = {32, 32, 32, 32};
  s.features = {{0, 2, 0, 5.0}};
  const auto out = generate(s, dir.path());
  Rng rng(2);
  FeatureMatrix features;
  features.values = fstest::gaussian(rng, 200, 100);
  features.sample_ids = out.ground_truth.sample_ids;
  BatchOptions opts;
  const auto start = std::chrono::steady_clock::now();
  const auto profiles = batch_profiles(out.manifest, features, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(profiles.size(), 100u);
  EXPECT_LT(seconds, 10.0);
  for (const auto& p : profiles) {
    EXPECT_GE(p.complexity_k, 0.0);
    EXPECT_LE(p.complexity_k, 1.0);
  }
}

TEST(Complexity, SelectRows) {
  Matrix v(3, 1);
  v << 10, 20, 30;
  const Matrix r = select_rows(v, {1, 4, 9}, {4, 9});
  EXPECT_EQ(r(0, 0), 20);
  EXPECT_EQ(r(1, 0), 30);
  EXPECT_THROW(select_rows(v, {1, 4, 9}, {5}), Error);
}
