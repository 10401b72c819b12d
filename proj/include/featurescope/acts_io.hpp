#pragma once

// ACTS activation dumps and the experiment manifest.
//
// ACTS layout (all integers little-endian):
//
//   offset  size         field
//   0       4            magic "ACTS"
//   4       1            version (1)
//   5       1            branch (0 = residual, 1 = main, 2 = combined)
//   6       2            layer_id length L (u16)
//   8       L            layer_id, UTF-8
//   8+L     4            epoch (u32)
//   12+L    8            n_samples (u64)
//   20+L    8            n_units (u64)
//   28+L    8*n_samples  sample_ids (i64)
//   ...     4*n*u        payload, row-major IEEE-754 binary32
//
// The file ends exactly at the end of the payload.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "featurescope/types.hpp"

namespace featurescope {

enum class Branch : std::uint8_t { Residual = 0, Main = 1, Combined = 2 };

std::string_view to_string(Branch branch);
Branch parse_branch(std::string_view text);

struct ActivationDump {
  std::string layer_id;
  Branch branch = Branch::Combined;
  std::uint32_t epoch = 0;
  MatrixF data;  // n_samples x n_units
  SampleIds sample_ids;

  Eigen::Index n_samples() const { return data.rows(); }
  Eigen::Index n_units() const { return data.cols(); }
  Matrix to_double() const { return data.cast<double>(); }
};

// Throws Error(Validation) when the dump breaks an invariant: at least two
// samples and one unit, finite entries, strictly increasing sample ids.
void validate(const ActivationDump& dump);

void write_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump read_dump(const std::filesystem::path& path);

// Restricts every dump to the sample ids they all share, rows in increasing id
// order. Throws Error(Alignment) when fewer than two ids are shared.
std::vector<ActivationDump> align_samples(std::vector<ActivationDump> dumps);

// Shared ids of several sorted id lists.
SampleIds intersect_ids(std::span<const SampleIds* const> lists);
// Row indices of `wanted` inside `ids` (both sorted); every wanted id must exist.
std::vector<Eigen::Index> row_positions(const SampleIds& ids, const SampleIds& wanted);

struct DumpKey {
  std::string layer_id;
  Branch branch;
  std::uint32_t epoch;

  auto operator<=>(const DumpKey&) const = default;
};

// Experiment manifest, one JSON document. Relative paths resolve against the
// manifest's own directory. Schema:
//
//   {
//     "version": 1,
//     "layers": ["block1", ...],              forward-pass order, unique
//     "epochs": [0, 5, ...],                  increasing
//     "dumps": [{"layer": "block1", "branch": "combined", "epoch": 0,
//                "path": "dumps/block1_combined_e0.acts"}, ...],
//     "perturbations": [{"sigma": 0.1, "paths": ["...", ...]}, ...],   optional
//     "head_weights": "head.json",            optional, d x c classifier
//     "labels": "labels.csv",                 optional, sample_id,label
//     "features": "ground_truth.acts",        optional default feature table
//     "notes": {...}                          optional, free-form
//   }
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<std::string> layers;
  std::vector<std::uint32_t> epochs;
  std::map<DumpKey, std::filesystem::path> dump_paths;
  std::map<double, std::vector<std::filesystem::path>> perturbation_sets;
  std::optional<std::filesystem::path> head_weights;
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> features;

  const std::string& final_layer() const { return layers.back(); }
  std::uint32_t final_epoch() const { return epochs.back(); }

  // Path of a registered dump; Error(Manifest) naming the key when absent.
  const std::filesystem::path& path_for(const DumpKey& key) const;
  ActivationDump load(const DumpKey& key) const;
};

// Parses and validates the manifest: unique layer ids, increasing epochs,
// every dump key refers to a declared layer and epoch, and every referenced
// file exists. Throws Error(Manifest) naming the offending path.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Classifier weights d x c: {"n_units": d, "n_classes": c, "weights": [[...], ...]}
Matrix read_head_weights(const std::filesystem::path& path);
void write_head_weights(const Matrix& weights, const std::filesystem::path& path);

// CSV with header "sample_id,label".
std::map<std::int64_t, int> read_labels(const std::filesystem::path& path);
void write_labels(const SampleIds& ids, std::span<const int> labels,
                  const std::filesystem::path& path);

}  // namespace featurescope
