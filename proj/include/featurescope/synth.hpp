#pragma once

// Synthetic multi-layer, multi-epoch activation dumps with planted features
// of known depth and emergence epoch, plus brute-force reference solvers.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "featurescope/acts_io.hpp"
#include "featurescope/dictionary.hpp"
#include "featurescope/types.hpp"

namespace featurescope {

struct PlantedFeature {
  Eigen::Index feature_id = 0;
  int decodable_from_layer = 1;  // 1-based
  int emerges_at_epoch = 0;      // 0-based
  double snr = 10.0;
};

struct PerturbationPlan {
  std::vector<double> sigmas;
  int n_noise = 0;
};

struct HeadPlan {
  int n_classes = 2;
  double jitter = 0.02;
  double class_signal = 1.0;
};

struct PlantSpec {
  int n_samples = 500;
  int n_layers = 4;
  int n_epochs = 1;
  std::vector<int> n_units_per_layer;  // length n_layers
  std::vector<PlantedFeature> features;
  std::uint64_t seed = 0;
  // When set, every written value is max(0, raw + offset).
  std::optional<double> nonnegative_offset;
  // Mixes each layer's combined units by a fixed random orthogonal matrix.
  bool rotate = false;
  std::optional<PerturbationPlan> perturbation;
  // Writes an identity dictionary over the final layer, a classifier head
  // whose weights fall with each unit's expected complexity, and labels.
  std::optional<HeadPlan> head;
};

// Throws Error(Validation) for inconsistent specs.
void validate(const PlantSpec& spec);
PlantSpec read_plant_spec(const std::filesystem::path& path);

// 1 - (n_layers - decodable_from_layer + 1) / n_layers.
double expected_complexity(const PlantedFeature& f, int n_layers);
// 1 - (n_epochs - emerges_at_epoch) / n_epochs.
double expected_time_to_decode(const PlantedFeature& f, int n_epochs);

struct SynthOutput {
  Manifest manifest;
  std::filesystem::path manifest_path;
  FeatureMatrix ground_truth;  // n x F latent vectors g_f
  std::vector<double> k_expected;
  std::vector<double> lambda_expected;
};

// Writes one ACTS dump per (layer, branch, epoch) plus manifest.json,
// ground_truth.acts/.csv and the optional perturbation, head and dictionary
// files. Planted feature f lives in unit f of every layer. With latent
// g_f ~ N(0, 1) and v_f = snr * g_f + N(0, 1) drawn once:
//   combined: unit f = v_f for layers >= decodable_from_layer, epochs >= emerges_at_epoch
//   residual: unit f = v_f for layers >  decodable_from_layer (carried forward unchanged)
//   main:     unit f = v_f at layer == decodable_from_layer (newly planted)
// and every other entry is fresh N(0, 1) noise. Byte-identical for a given spec.
SynthOutput generate(const PlantSpec& spec, const std::filesystem::path& out_dir);

// Exhaustive active-set enumeration for min_{z >= 0} ||a - z D||; k <= 16.
Vector oracle_nnls(const Dictionary& dict, const Vector& a_row);

// Direct minimization of the Gaussian negative log-likelihood (sigma^2 = 1/2)
// over affine predictors and over constants, by conjugate gradients to a
// gradient norm below 1e-10. Returns (H_V(z) - H_V(z | x)) / Var(z).
// n <= 1000, d <= 20. Throws Error(Oracle) on non-convergence.
double oracle_vinfo(const Matrix& x, const Vector& z);

}  // namespace featurescope
