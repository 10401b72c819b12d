#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "featurescope/nnls.hpp"
#include "featurescope/types.hpp"

namespace featurescope {

struct TrainingMeta {
  double tol = 1e-4;
  int max_iter = 200;
  std::uint64_t seed = 0;
  double final_objective = 0.0;
  int iterations = 0;
  std::vector<Eigen::Index> pruned_atoms;  // indices in the unpruned k
};

// k x d non-negative atoms; rows are features.
struct Dictionary {
  Matrix atoms;
  TrainingMeta training_meta;

  Eigen::Index k() const { return atoms.rows(); }
  Eigen::Index d() const { return atoms.cols(); }
};

// n x k non-negative feature values (also used for any per-sample feature
// table, e.g. planted ground truth, where the sign constraint is not enforced).
struct FeatureMatrix {
  Matrix values;
  SampleIds sample_ids;

  Eigen::Index k() const { return values.cols(); }
};

struct NmfOptions {
  Eigen::Index k = 0;
  double tol = 1e-4;
  int max_iter = 200;
  std::uint64_t seed = 0;
  NnlsOptions nnls;
  int threads = 1;
  bool prune_zero_atoms = true;
};

struct NmfResult {
  FeatureMatrix features;
  Dictionary dictionary;
  // ||a - Z D||_F at initialization and after each outer iteration.
  std::vector<double> objective_history;
  bool converged = false;
};

// Alternating non-negative least squares: every outer iteration solves the Z
// block and then the D block exactly (row/column-separable NNLS). Stops when
// the relative objective decrease over an iteration drops below tol.
NmfResult nmf_fit(const Matrix& a, const NmfOptions& options);

struct ExtractOptions {
  NnlsOptions nnls;
  int threads = 1;
};

// Row-wise z = argmin_{z >= 0} ||a_row - z D||.
FeatureMatrix nnls_extract(const Dictionary& dict, const Matrix& a, const ExtractOptions& options = {});

struct ReconstructionReport {
  double rel_error = 0.0;
  std::optional<double> prediction_agreement;
};

ReconstructionReport reconstruction_report(const Matrix& a, const FeatureMatrix& z, const Dictionary& dict,
                                           const Matrix* head_weights = nullptr);

// First index of the maximum (ties go to the lowest index).
Eigen::Index argmax_row(const Matrix& m, Eigen::Index row);

// Atoms as an ACTS matrix (layer "dictionary") plus `<path>.json` with the
// training metadata.
void save_dictionary(const Dictionary& dict, const std::filesystem::path& path);
Dictionary load_dictionary(const std::filesystem::path& path);

// Feature tables as ACTS matrices (layer "features").
void save_features(const FeatureMatrix& features, const std::filesystem::path& path);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace featurescope
