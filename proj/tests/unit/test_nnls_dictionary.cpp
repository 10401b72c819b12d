#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

#include "featurescope/dictionary.hpp"
#include "featurescope/error.hpp"
#include "featurescope/nnls.hpp"
#include "featurescope/synth.hpp"

using namespace featurescope;

namespace {

Dictionary dictionary_of(Matrix atoms) {
  Dictionary d;
  d.atoms = std::move(atoms);
  return d;
}

double relative_error(const Matrix& a, const FeatureMatrix& z, const Dictionary& d) {
  return (a - z.values * d.atoms).norm() / a.norm();
}

}  // namespace

TEST(Nnls, ScalarProjection) {
  Matrix atoms(1, 3);
  atoms << 1, 2, 2;
  const Dictionary d = dictionary_of(atoms);
  const FeatureMatrix z = nnls_extract(d, 2.0 * atoms);
  EXPECT_NEAR(z.values(0, 0), 2.0, 1e-12);
  const FeatureMatrix neg = nnls_extract(d, -atoms);
  EXPECT_EQ(neg.values(0, 0), 0.0);
}

TEST(Nnls, OrthogonalAtomsAreSeparable) {
  Matrix atoms(2, 3);
  atoms << 1, 0, 0, 0, 2, 0;
  Matrix a(1, 3);
  a << 3, -4, 5;
  const FeatureMatrix z = nnls_extract(dictionary_of(atoms), a);
  EXPECT_NEAR(z.values(0, 0), 3.0, 1e-12);
  EXPECT_EQ(z.values(0, 1), 0.0);
}

TEST(Nnls, AtomRowsGiveOneHotAndZeroRowGivesZero) {
  Rng rng(1);
  const Dictionary d = dictionary_of(fstest::uniform(rng, 4, 9));
  Matrix a(5, 9);
  a.topRows(4) = d.atoms;
  a.row(4).setZero();
  const FeatureMatrix z = nnls_extract(d, a);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(z.values(i, j), i == j ? 1.0 : 0.0, 1e-6);
  EXPECT_EQ(z.values.row(4).norm(), 0.0);
}

TEST(Nnls, ActiveSetSatisfiesKktAndMatchesOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Dictionary d = dictionary_of(fstest::gaussian(rng, 3, 5));
    const Vector a = fstest::gaussian_vector(rng, 5);
    const Eigen::MatrixXd gram = d.atoms * d.atoms.transpose();
    const Vector b = d.atoms * a;
    const Vector z = nnls_active_set(gram, b);
    EXPECT_GE(z.minCoeff(), 0.0);
    EXPECT_LE(kkt_residual(gram, b, z), 1e-9 * std::max(1.0, nnls_scale(b)));
    EXPECT_LT((z - oracle_nnls(d, a)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Nnls, ProjectedGradientAgreesWithActiveSet) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix atoms = fstest::uniform(rng, 80, 40);
    const Vector a = atoms.transpose() * fstest::uniform(rng, 80, 1).col(0).cwiseMax(0.7).array().pow(8).matrix() +
                     0.01 * fstest::gaussian_vector(rng, 40);
    const Eigen::MatrixXd gram = atoms * atoms.transpose();
    const Vector b = atoms * a;
    NnlsOptions opts;
    opts.kkt_tol = 1e-10;
    opts.max_iter = 200000;
    const Vector pg = nnls_projected_gradient(gram, b, lipschitz_constant(gram), opts);
    const Vector as = nnls_active_set(gram, b);
    const auto objective = [&](const Vector& z) { return 0.5 * z.dot(gram * z) - b.dot(z); };
    EXPECT_NEAR(objective(pg), objective(as), 1e-6 * std::abs(objective(as)));
    EXPECT_LE(kkt_residual(gram, b, pg), 1e-6 * nnls_scale(b));
  }
}

TEST(Nnls, AutoSelectsByDictionarySize) {
  EXPECT_EQ(NnlsSolver(Eigen::MatrixXd::Identity(64, 64)).method(), NnlsMethod::ActiveSet);
  EXPECT_EQ(NnlsSolver(Eigen::MatrixXd::Identity(65, 65)).method(), NnlsMethod::ProjectedGradient);
}

TEST(Nnls, ExtractIsRowSeparableAndThreadInvariant) {
  Rng rng(4);
  const Dictionary d = dictionary_of(fstest::uniform(rng, 6, 10));
  const Matrix a = fstest::uniform(rng, 40, 10);
  const FeatureMatrix z1 = nnls_extract(d, a, {NnlsOptions{}, 1});
  const FeatureMatrix z4 = nnls_extract(d, a, {NnlsOptions{}, 4});
  EXPECT_EQ(z1.values, z4.values);
  const Matrix reversed = a.colwise().reverse();
  const FeatureMatrix zr = nnls_extract(d, reversed);
  EXPECT_EQ(Matrix(zr.values.colwise().reverse()), z1.values);
}

TEST(Nnls, ShapeMismatchThrows) {
  const Dictionary d = dictionary_of(Matrix::Ones(2, 3));
  try {
    nnls_extract(d, Matrix::Ones(4, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Nmf, PlantedFactorization) {
  Rng rng(5);
  const Matrix z0 = fstest::uniform(rng, 20, 8);
  const Matrix d0 = fstest::uniform(rng, 8, 5);
  const Matrix a = z0 * d0;
  NmfOptions opts;
  opts.k = 8;
  opts.max_iter = 500;
  opts.seed = 1;
  const auto r = nmf_fit(a, opts);
  EXPECT_LT(relative_error(a, r.features, r.dictionary), 1e-3);
  for (std::size_t i = 1; i < r.objective_history.size(); ++i)
    EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] * (1 + 1e-12));
  EXPECT_GE(r.features.values.minCoeff(), 0.0);
  EXPECT_GE(r.dictionary.atoms.minCoeff(), 0.0);
}

TEST(Nmf, RankOneExact) {
  Rng rng(6);
  const Vector u = fstest::uniform(rng, 15, 1).col(0).array() + 0.1;
  const Vector v = fstest::uniform(rng, 7, 1).col(0).array() + 0.1;
  const Matrix a = u * v.transpose();
  NmfOptions opts;
  opts.k = 1;
  const auto r = nmf_fit(a, opts);
  EXPECT_LT(relative_error(a, r.features, r.dictionary), 1e-6);
}

TEST(Nmf, DeterministicAndThreadInvariant) {
  Rng rng(7);
  const Matrix a = fstest::uniform(rng, 30, 6);
  NmfOptions opts;
  opts.k = 4;
  opts.seed = 9;
  opts.threads = 1;
  const auto r1 = nmf_fit(a, opts);
  opts.threads = 3;
  const auto r3 = nmf_fit(a, opts);
  EXPECT_EQ(r1.dictionary.atoms, r3.dictionary.atoms);
  EXPECT_EQ(r1.objective_history, r3.objective_history);
}

TEST(Nmf, RejectsNegativeInput) {
  Matrix a = Matrix::Ones(4, 3);
  a(2, 1) = -0.5;
  NmfOptions opts;
  opts.k = 2;
  try {
    nmf_fit(a, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Domain);
  }
}

TEST(Nmf, PrunesZeroAtoms) {
  // Rank-1 data with more atoms than needed on a single column support.
  Matrix a = Matrix::Zero(10, 4);
  a.col(0).setLinSpaced(10, 1.0, 10.0);
  NmfOptions opts;
  opts.k = 3;
  const auto r = nmf_fit(a, opts);
  for (Eigen::Index i = 0; i < r.dictionary.k(); ++i) EXPECT_GT(r.dictionary.atoms.row(i).norm(), 0.0);
  EXPECT_EQ(r.dictionary.k() + static_cast<Eigen::Index>(r.dictionary.training_meta.pruned_atoms.size()), 3);
  EXPECT_EQ(r.features.k(), r.dictionary.k());
}

TEST(Dictionary, ReconstructionReportExact) {
  Rng rng(8);
  const Dictionary d = dictionary_of(fstest::uniform(rng, 3, 6));
  const Matrix z0 = fstest::uniform(rng, 25, 3);
  const Matrix a = z0 * d.atoms;
  const FeatureMatrix z = nnls_extract(d, a);
  const Matrix head = fstest::gaussian(rng, 6, 4);
  const auto report = reconstruction_report(a, z, d, &head);
  EXPECT_LT(report.rel_error, 1e-6);
  ASSERT_TRUE(report.prediction_agreement.has_value());
  EXPECT_EQ(*report.prediction_agreement, 1.0);
  EXPECT_FALSE(reconstruction_report(a, z, d).prediction_agreement.has_value());
}

TEST(Dictionary, SaveLoadRoundTrip) {
  fstest::TempDir dir("dict");
  Rng rng(9);
  Dictionary d = dictionary_of(fstest::uniform(rng, 5, 4));
  d.training_meta.seed = 77;
  d.training_meta.iterations = 12;
  save_dictionary(d, dir / "dict.acts");
  const Dictionary back = load_dictionary(dir / "dict.acts");
  EXPECT_EQ(back.training_meta.seed, 77u);
  EXPECT_EQ(back.training_meta.iterations, 12);
  EXPECT_LT((back.atoms - d.atoms).cwiseAbs().maxCoeff(), 1e-7);

  FeatureMatrix f;
  f.values = fstest::uniform(rng, 6, 5);
  f.sample_ids = {1, 2, 3, 5, 8, 13};
  save_features(f, dir / "f.acts");
  const FeatureMatrix fb = load_features(dir / "f.acts");
  EXPECT_EQ(fb.sample_ids, f.sample_ids);
  EXPECT_LT((fb.values - f.values).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Dictionary, ArgmaxTiesGoLow) {
  Matrix m(1, 4);
  m << 1, 3, 3, 2;
  EXPECT_EQ(argmax_row(m, 0), 1);
}
