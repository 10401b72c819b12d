#include "featurescope/vinformation.hpp"

#include <algorithm>
#include <string>

#include "featurescope/error.hpp"
#include "featurescope/parallel.hpp"

namespace featurescope {

LinearProbe::LinearProbe(const Matrix& x_layer, double lambda_rel)
    : solver_(standardize(x_layer).values, lambda_rel) {}

double LinearProbe::v_information(const Vector& z) const {
  require(z.size() == solver_.rows(), ErrorKind::Alignment,
          "feature has " + std::to_string(z.size()) + " samples, layer has " + std::to_string(solver_.rows()));
  const auto standardized = standardize_vector(z);
  if (!standardized) return 0.0;
  return std::clamp(solver_.fit(*standardized).r_squared, 0.0, 1.0);
}

double v_information(const Matrix& x_layer, const Vector& z, double lambda_rel) {
  require(z.size() == x_layer.rows(), ErrorKind::Alignment, "v_information: x and z are not sample-aligned");
  return LinearProbe(x_layer, lambda_rel).v_information(z);
}

double one_minus_mean(const std::vector<double>& values) {
  require(!values.empty(), ErrorKind::Argument, "no values to average");
  double sum = 0.0;
  for (const double v : values) sum += v;
  return std::clamp(1.0 - sum / static_cast<double>(values.size()), 0.0, 1.0);
}

Matrix select_rows(const Matrix& values, const SampleIds& ids, const SampleIds& wanted) {
  if (ids == wanted) return values;
  const auto rows = row_positions(ids, wanted);
  Matrix out(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = values.row(rows[i]);
  return out;
}

namespace {

ProbeStack build_stack(std::vector<ActivationDump> dumps, const SampleIds& feature_ids, double lambda_rel) {
  std::vector<const SampleIds*> lists{&feature_ids};
  for (const auto& d : dumps) lists.push_back(&d.sample_ids);
  const SampleIds shared = intersect_ids(lists);
  require(shared.size() >= 2, ErrorKind::Alignment,
          "features and dumps share " + std::to_string(shared.size()) + " sample ids; at least 2 required");
  ProbeStack stack;
  stack.sample_ids = shared;
  for (auto& d : dumps) {
    stack.labels.push_back(d.layer_id);
    stack.epochs.push_back(d.epoch);
    stack.probes.emplace_back(select_rows(d.to_double(), d.sample_ids, shared), lambda_rel);
  }
  return stack;
}

void check_epoch(const Manifest& manifest, std::uint32_t epoch) {
  require(std::find(manifest.epochs.begin(), manifest.epochs.end(), epoch) != manifest.epochs.end(),
          ErrorKind::Manifest, "manifest has no epoch " + std::to_string(epoch));
}

Vector feature_column(const Vector& z, const SampleIds& ids, const SampleIds& wanted) {
  require(static_cast<std::size_t>(z.size()) == ids.size(), ErrorKind::Alignment, "feature values and ids differ in length");
  Matrix m = z;
  return select_rows(m, ids, wanted).col(0);
}

void fill_complexity(ComplexityProfile& profile, const ProbeStack& stack, const Vector& z) {
  std::vector<double> values;
  for (std::size_t l = 0; l < stack.probes.size(); ++l) {
    const double v = stack.probes[l].v_information(z);
    profile.per_layer_vinfo.emplace_back(stack.labels[l], v);
    values.push_back(v);
  }
  profile.complexity_k = one_minus_mean(values);
}

void fill_ttd(ComplexityProfile& profile, const ProbeStack& stack, const Vector& z) {
  std::vector<double> values;
  for (std::size_t e = 0; e < stack.probes.size(); ++e) {
    const double v = stack.probes[e].v_information(z);
    profile.per_epoch_vinfo.emplace_back(stack.epochs[e], v);
    values.push_back(v);
  }
  profile.lambda_ttd = one_minus_mean(values);
}

}  // namespace

ProbeStack layer_stack(const Manifest& manifest, std::uint32_t epoch, const SampleIds& feature_ids, double lambda_rel) {
  check_epoch(manifest, epoch);
  std::vector<ActivationDump> dumps;
  for (const auto& layer : manifest.layers) dumps.push_back(manifest.load({layer, Branch::Combined, epoch}));
  return build_stack(std::move(dumps), feature_ids, lambda_rel);
}

ProbeStack epoch_stack(const Manifest& manifest, const SampleIds& feature_ids, double lambda_rel) {
  std::vector<ActivationDump> dumps;
  for (const auto epoch : manifest.epochs) dumps.push_back(manifest.load({manifest.final_layer(), Branch::Combined, epoch}));
  return build_stack(std::move(dumps), feature_ids, lambda_rel);
}

ComplexityProfile complexity_score(const Manifest& manifest, const Vector& z, const SampleIds& z_ids,
                                   std::uint32_t epoch, double lambda_rel) {
  const ProbeStack stack = layer_stack(manifest, epoch, z_ids, lambda_rel);
  ComplexityProfile profile;
  fill_complexity(profile, stack, feature_column(z, z_ids, stack.sample_ids));
  return profile;
}

ComplexityProfile time_to_decode(const Manifest& manifest, const Vector& z_final, const SampleIds& z_ids,
                                 double lambda_rel) {
  const ProbeStack stack = epoch_stack(manifest, z_ids, lambda_rel);
  ComplexityProfile profile;
  fill_ttd(profile, stack, feature_column(z_final, z_ids, stack.sample_ids));
  return profile;
}

std::vector<ComplexityProfile> batch_profiles(const Manifest& manifest, const FeatureMatrix& features,
                                              const BatchOptions& options) {
  require(static_cast<std::size_t>(features.values.rows()) == features.sample_ids.size(), ErrorKind::Alignment,
          "feature values and sample ids differ in length");
  std::optional<ProbeStack> layers;
  std::optional<ProbeStack> epochs;
  if (options.complexity)
    layers = layer_stack(manifest, options.epoch.value_or(manifest.final_epoch()), features.sample_ids, options.lambda_rel);
  if (options.time_to_decode) epochs = epoch_stack(manifest, features.sample_ids, options.lambda_rel);

  const Matrix layer_values = layers ? select_rows(features.values, features.sample_ids, layers->sample_ids) : Matrix();
  const Matrix epoch_values = epochs ? select_rows(features.values, features.sample_ids, epochs->sample_ids) : Matrix();

  std::vector<ComplexityProfile> profiles(static_cast<std::size_t>(features.k()));
  parallel_for(profiles.size(), options.threads, [&](std::size_t f) {
    const auto col = static_cast<Eigen::Index>(f);
    ComplexityProfile& profile = profiles[f];
    profile.feature_id = col;
    try {
      if (layers) fill_complexity(profile, *layers, layer_values.col(col));
      if (epochs) fill_ttd(profile, *epochs, epoch_values.col(col));
    } catch (const Error& e) {
      throw Error(e.kind(), "feature " + std::to_string(f) + ": " + e.what());
    }
  });
  return profiles;
}

}  // namespace featurescope
