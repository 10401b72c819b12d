#include "featurescope/flow.hpp"

#include "featurescope/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "featurescope/error.hpp"
#include "featurescope/kernels.hpp"
#include "featurescope/parallel.hpp"
#include "featurescope/rng.hpp"
#include "featurescope/vinformation.hpp"

namespace featurescope {

namespace {

Matrix center_columns(const Matrix& a) { return a.rowwise() - a.colwise().mean(); }

// ||S S||_F for symmetric S.
double squared_gram_norm(const Eigen::MatrixXd& s) { return (s * s).norm(); }

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double cka(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorKind::Alignment, "cka: inputs have different sample counts");
  require(a.rows() >= 3, ErrorKind::Shape, "cka needs at least 3 samples");
  const Matrix ac = center_columns(a);
  const Matrix bc = center_columns(b);
  const Eigen::MatrixXd sa = ac.transpose() * ac;
  const Eigen::MatrixXd sb = bc.transpose() * bc;
  const Eigen::MatrixXd m = ac.transpose() * bc;
  const double denom = squared_gram_norm(sa) * squared_gram_norm(sb);
  if (!(denom > 0.0)) return 0.0;
  const double numer = (m.transpose() * sa * m * sb).trace();
  return clamp_unit(numer / denom);
}

CkaActivations::CkaActivations(const Matrix& a) : centered_(center_columns(a)) {
  require(a.rows() >= 3, ErrorKind::Shape, "cka needs at least 3 samples");
  cov_ = centered_.transpose() * centered_;
}

CkaActivations::Projection CkaActivations::project(const Vector& z) const {
  require(z.size() == centered_.rows(), ErrorKind::Alignment, "cka: feature and activations are not sample-aligned");
  const Vector zc = z.array() - z.mean();
  return {centered_.transpose() * zc, zc.squaredNorm()};
}

double CkaActivations::score(const Projection& p) const {
  const double gram_norm = squared_gram_norm(cov_);
  if (!(p.s > 0.0) || !(gram_norm > 0.0)) return 0.0;
  const Vector sm = cov_ * p.m;
  return clamp_unit(kernels::dot(span_of(p.m), span_of(sm)) / (p.s * gram_norm));
}

double CkaActivations::score_masked(const Projection& p, const std::vector<Eigen::Index>& kept) const {
  if (kept.empty()) return 0.0;
  const auto count = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd sub(count, count);
  Vector m(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index ci = kept[static_cast<std::size_t>(i)];
    m(i) = p.m(ci);
    for (Eigen::Index j = 0; j < count; ++j) sub(i, j) = cov_(ci, kept[static_cast<std::size_t>(j)]);
  }
  const double gram_norm = squared_gram_norm(sub);
  if (!(p.s > 0.0) || !(gram_norm > 0.0)) return 0.0;
  const Vector sm = sub * m;
  return clamp_unit(kernels::dot(span_of(m), span_of(sm)) / (p.s * gram_norm));
}

double cka(const Matrix& a, const Vector& z) {
  require(a.rows() == z.size(), ErrorKind::Alignment, "cka: inputs have different sample counts");
  return CkaActivations(a).with_feature(z);
}

namespace {

struct BranchPair {
  std::string block;
  CkaActivations residual;
  CkaActivations main;
};

std::vector<BranchPair> load_branches(const Manifest& manifest, std::uint32_t epoch, const SampleIds& feature_ids,
                                      SampleIds& shared) {
  std::vector<ActivationDump> dumps;
  for (const auto& layer : manifest.layers) {
    dumps.push_back(manifest.load({layer, Branch::Residual, epoch}));
    dumps.push_back(manifest.load({layer, Branch::Main, epoch}));
  }
  std::vector<const SampleIds*> lists{&feature_ids};
  for (const auto& d : dumps) lists.push_back(&d.sample_ids);
  shared = intersect_ids(lists);
  require(shared.size() >= 3, ErrorKind::Alignment, "branch dumps and features share fewer than 3 sample ids");
  std::vector<BranchPair> pairs;
  for (std::size_t i = 0; i < dumps.size(); i += 2) {
    pairs.push_back({dumps[i].layer_id,
                     CkaActivations(select_rows(dumps[i].to_double(), dumps[i].sample_ids, shared)),
                     CkaActivations(select_rows(dumps[i + 1].to_double(), dumps[i + 1].sample_ids, shared))});
  }
  return pairs;
}

FlowCurve curve_for(const std::vector<BranchPair>& pairs, const Vector& z, Eigen::Index feature_id) {
  FlowCurve curve;
  curve.feature_id = feature_id;
  for (const auto& p : pairs) curve.per_block.push_back({p.block, p.residual.with_feature(z), p.main.with_feature(z)});
  return curve;
}

}  // namespace

FlowCurve branch_flow(const Manifest& manifest, const Vector& z, const SampleIds& z_ids, std::uint32_t epoch) {
  require(static_cast<std::size_t>(z.size()) == z_ids.size(), ErrorKind::Alignment, "feature values and ids differ in length");
  SampleIds shared;
  const auto pairs = load_branches(manifest, epoch, z_ids, shared);
  const Matrix zm = z;
  return curve_for(pairs, select_rows(zm, z_ids, shared).col(0), 0);
}

std::vector<FlowCurve> branch_flow_batch(const Manifest& manifest, const FeatureMatrix& features,
                                         const std::vector<Eigen::Index>& feature_ids, std::uint32_t epoch,
                                         int threads) {
  SampleIds shared;
  const auto pairs = load_branches(manifest, epoch, features.sample_ids, shared);
  const Matrix values = select_rows(features.values, features.sample_ids, shared);
  std::vector<FlowCurve> curves(feature_ids.size());
  parallel_for(feature_ids.size(), threads, [&](std::size_t i) {
    const Eigen::Index f = feature_ids[i];
    require(f >= 0 && f < values.cols(), ErrorKind::Argument, "feature id " + std::to_string(f) + " out of range");
    curves[i] = curve_for(pairs, values.col(f), f);
  });
  return curves;
}

Eigen::Index masked_count(double fraction, Eigen::Index d) {
  require(fraction > 0.0 && fraction < 1.0, ErrorKind::Argument, "mask fractions must lie in (0, 1)");
  // The small offset keeps products like 0.1 * 10 from rounding up past an integer.
  const auto count = static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(d) - 1e-9));
  return std::clamp<Eigen::Index>(count, 0, d);
}

RedundancyScore redundancy(const CkaActivations& acts, const Vector& z, const std::vector<double>& fractions,
                           int n_masks, std::uint64_t seed) {
  require(!fractions.empty(), ErrorKind::Argument, "redundancy needs at least one mask fraction");
  require(n_masks >= 1, ErrorKind::Argument, "n_masks must be >= 1");
  const auto projection = acts.project(z);
  const double baseline = acts.score(projection);
  if (!(baseline > 1e-6))
    fail(ErrorKind::Degenerate, "unmasked CKA with the feature is " + std::to_string(baseline) + "; redundancy undefined");

  const Eigen::Index d = acts.units();
  RedundancyScore score;
  double total = 0.0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    const Eigen::Index drop = masked_count(fractions[f], d);
    double sum = 0.0;
    for (int i = 0; i < n_masks; ++i) {
      Rng rng = Rng::derive(seed, f, static_cast<std::uint64_t>(i));
      std::iota(order.begin(), order.end(), 0);
      // Partial Fisher-Yates: the first `drop` entries are the masked units.
      for (Eigen::Index j = 0; j < drop; ++j) {
        const auto pick = j + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d - j)));
        std::swap(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(pick)]);
      }
      std::vector<Eigen::Index> kept(order.begin() + drop, order.end());
      std::sort(kept.begin(), kept.end());
      sum += acts.score_masked(projection, kept) / baseline;
    }
    const double mean = sum / n_masks;
    score.per_fraction[fractions[f]] = mean;
    total += mean;
  }
  score.aggregate = total / static_cast<double>(fractions.size());
  return score;
}

RedundancyScore redundancy(const Matrix& final_acts, const Vector& z, const std::vector<double>& fractions,
                           int n_masks, std::uint64_t seed) {
  require(final_acts.rows() == z.size(), ErrorKind::Alignment, "redundancy: activations and feature are not sample-aligned");
  return redundancy(CkaActivations(final_acts), z, fractions, n_masks, seed);
}

std::vector<SensitivityScore> sensitivity_from_draws(const std::vector<double>& sigmas,
                                                     const std::vector<std::vector<Matrix>>& draws) {
  require(sigmas.size() == draws.size() && !sigmas.empty(), ErrorKind::Argument, "one draw set per sigma required");
  const Eigen::Index n = draws.front().empty() ? 0 : draws.front().front().rows();
  const Eigen::Index k = draws.front().empty() ? 0 : draws.front().front().cols();
  std::vector<SensitivityScore> scores(static_cast<std::size_t>(k));
  for (Eigen::Index f = 0; f < k; ++f) scores[static_cast<std::size_t>(f)].feature_id = f;

  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    const auto& set = draws[s];
    require(set.size() >= 2, ErrorKind::Argument, "need at least 2 noise draws per sigma");
    Matrix mean = Matrix::Zero(n, k);
    Matrix m2 = Matrix::Zero(n, k);
    double count = 0.0;
    for (const Matrix& z : set) {
      require(z.rows() == n && z.cols() == k, ErrorKind::Shape, "noise draws differ in shape");
      // Welford update, elementwise.
      count += 1.0;
      const Matrix delta = z - mean;
      mean += delta / count;
      m2 += delta.cwiseProduct(z - mean);
    }
    const Eigen::RowVectorXd per_feature = (m2 / count).colwise().mean();
    for (Eigen::Index f = 0; f < k; ++f) scores[static_cast<std::size_t>(f)].per_sigma[sigmas[s]] = std::max(0.0, per_feature(f));
  }
  for (auto& score : scores) {
    double total = 0.0;
    for (const auto& [sigma, v] : score.per_sigma) total += v;
    score.aggregate = total / static_cast<double>(score.per_sigma.size());
  }
  return scores;
}

namespace {

const std::vector<std::filesystem::path>& perturbation_set(const Manifest& manifest, double sigma) {
  for (const auto& [key, paths] : manifest.perturbation_sets)
    if (std::abs(key - sigma) <= 1e-12 * std::max(1.0, std::abs(sigma))) return paths;
  fail(ErrorKind::Manifest, "manifest has no perturbation set for sigma " + std::to_string(sigma));
}

}  // namespace

std::vector<SensitivityScore> sensitivity_all(const Manifest& manifest, const Dictionary& dict,
                                              const SensitivityOptions& options) {
  require(!options.sigmas.empty(), ErrorKind::Argument, "sensitivity needs at least one sigma");
  require(options.n_noise >= 2, ErrorKind::Argument, "n_noise must be >= 2");
  std::vector<std::vector<Matrix>> draws;
  for (const double sigma : options.sigmas) {
    const auto& paths = perturbation_set(manifest, sigma);
    require(static_cast<int>(paths.size()) >= options.n_noise, ErrorKind::Manifest,
            "perturbation set for sigma " + format_number(sigma) + " has " + std::to_string(paths.size()) +
                " dumps, " + std::to_string(options.n_noise) + " requested");
    std::vector<Matrix> set;
    SampleIds reference;
    for (int r = 0; r < options.n_noise; ++r) {
      const ActivationDump dump = read_dump(paths[static_cast<std::size_t>(r)]);
      if (reference.empty()) reference = dump.sample_ids;
      require(dump.sample_ids == reference, ErrorKind::Alignment,
              "perturbed dumps disagree on sample ids: " + paths[static_cast<std::size_t>(r)].string());
      set.push_back(nnls_extract(dict, dump.to_double(), options.extract).values);
    }
    draws.push_back(std::move(set));
  }
  return sensitivity_from_draws(options.sigmas, draws);
}

SensitivityScore sensitivity(const Manifest& manifest, const Dictionary& dict, Eigen::Index feature_id,
                             const SensitivityOptions& options) {
  require(feature_id >= 0 && feature_id < dict.k(), ErrorKind::Argument, "feature id out of range");
  return sensitivity_all(manifest, dict, options)[static_cast<std::size_t>(feature_id)];
}

}  // namespace featurescope
