#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "featurescope/acts_io.hpp"
#include "featurescope/dictionary.hpp"
#include "featurescope/numkit.hpp"
#include "featurescope/types.hpp"

namespace featurescope {

// Linear-Gaussian V-information of a feature from one layer. With the
// feature standardized to unit variance the closed form Var(z) R^2 reduces to
// the probe's R^2, clipped to [0, 1].
class LinearProbe {
 public:
  LinearProbe(const Matrix& x_layer, double lambda_rel = kDefaultLambdaRel);

  double v_information(const Vector& z) const;
  Eigen::Index samples() const { return solver_.rows(); }

 private:
  RidgeSolver solver_;
};

double v_information(const Matrix& x_layer, const Vector& z, double lambda_rel = kDefaultLambdaRel);

struct ComplexityProfile {
  Eigen::Index feature_id = 0;
  std::vector<std::pair<std::string, double>> per_layer_vinfo;  // forward order
  double complexity_k = 0.0;
  std::vector<std::pair<std::uint32_t, double>> per_epoch_vinfo;
  std::optional<double> lambda_ttd;
};

// 1 - mean(values), clipped to [0, 1].
double one_minus_mean(const std::vector<double>& values);

// Probes for a fixed set of representations, sample-aligned with each other
// and with the feature ids they were built for.
struct ProbeStack {
  std::vector<std::string> labels;
  std::vector<std::uint32_t> epochs;  // per probe, for epoch stacks
  std::vector<LinearProbe> probes;
  SampleIds sample_ids;
};

// Combined-branch probes for every manifest layer at `epoch`, aligned with
// `feature_ids`.
ProbeStack layer_stack(const Manifest& manifest, std::uint32_t epoch, const SampleIds& feature_ids,
                       double lambda_rel = kDefaultLambdaRel);
// Final-layer combined probes for every manifest epoch, aligned with `feature_ids`.
ProbeStack epoch_stack(const Manifest& manifest, const SampleIds& feature_ids,
                       double lambda_rel = kDefaultLambdaRel);

// Rows of `values` (ids `ids`) restricted to `wanted` ids, in that order.
Matrix select_rows(const Matrix& values, const SampleIds& ids, const SampleIds& wanted);

// K(z) = 1 - mean over manifest layers of I_V(layer -> z) at `epoch`.
ComplexityProfile complexity_score(const Manifest& manifest, const Vector& z, const SampleIds& z_ids,
                                   std::uint32_t epoch, double lambda_rel = kDefaultLambdaRel);

// Lambda(z) = 1 - mean over epochs of I_V(final layer at epoch -> z).
ComplexityProfile time_to_decode(const Manifest& manifest, const Vector& z_final, const SampleIds& z_ids,
                                 double lambda_rel = kDefaultLambdaRel);

struct BatchOptions {
  double lambda_rel = kDefaultLambdaRel;
  std::optional<std::uint32_t> epoch;  // defaults to the final epoch
  bool complexity = true;
  bool time_to_decode = false;
  int threads = 1;
};

// One profile per feature column; identical to the per-feature calls.
std::vector<ComplexityProfile> batch_profiles(const Manifest& manifest, const FeatureMatrix& features,
                                              const BatchOptions& options);

}  // namespace featurescope
