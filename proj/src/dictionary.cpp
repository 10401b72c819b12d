#include "featurescope/dictionary.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>

#include "json.hpp"

#include "featurescope/acts_io.hpp"
#include "featurescope/error.hpp"
#include "featurescope/parallel.hpp"
#include "featurescope/rng.hpp"

namespace featurescope {

namespace {

double frobenius_residual(const Matrix& a, const Matrix& z, const Matrix& d) {
  return (a - z * d).norm();
}

// Z block: every row solves min ||a_i - z D|| with z >= 0.
void update_rows(const Matrix& a, const Matrix& dict, Matrix& z, const NnlsOptions& nnls, int threads) {
  const NnlsSolver solver(Eigen::MatrixXd(dict * dict.transpose()), nnls);
  const Matrix rhs = a * dict.transpose();
  parallel_for(static_cast<std::size_t>(a.rows()), threads, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector warm = z.row(r).transpose();
    z.row(r) = solver.solve(rhs.row(r).transpose(), &warm).transpose();
  });
}

// D block: every column solves min ||a_{:,j} - Z d_j|| with d_j >= 0.
void update_columns(const Matrix& a, const Matrix& z, Matrix& dict, const NnlsOptions& nnls, int threads) {
  const NnlsSolver solver(Eigen::MatrixXd(z.transpose() * z), nnls);
  const Matrix rhs = z.transpose() * a;  // k x d
  parallel_for(static_cast<std::size_t>(a.cols()), threads, [&](std::size_t j) {
    const auto c = static_cast<Eigen::Index>(j);
    const Vector warm = dict.col(c);
    dict.col(c) = solver.solve(rhs.col(c), &warm);
  });
}

}  // namespace

NmfResult nmf_fit(const Matrix& a, const NmfOptions& options) {
  const Eigen::Index n = a.rows();
  const Eigen::Index d = a.cols();
  const Eigen::Index k = options.k;
  require(k >= 1, ErrorKind::Argument, "NMF needs k >= 1");
  require(n >= 1 && d >= 1, ErrorKind::Shape, "NMF input is empty");
  require(n * d >= k, ErrorKind::Argument, "NMF needs n*d >= k");
  require(options.tol >= 0.0, ErrorKind::Argument, "tol must be >= 0");
  require(options.max_iter >= 1, ErrorKind::Argument, "max_iter must be >= 1");
  require(a.allFinite(), ErrorKind::Validation, "NMF input must be finite");
  require(a.minCoeff() >= 0.0, ErrorKind::Domain, "NMF input has negative entries (min " + std::to_string(a.minCoeff()) + ")");
  const double a_norm = a.norm();
  require(a_norm > 0.0, ErrorKind::Domain, "NMF input is all zero");

  Rng rng(options.seed);
  const double hi = std::sqrt(a.mean() / static_cast<double>(k));
  Matrix z(n, k);
  Matrix dict(k, d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(0.0, hi);
  for (Eigen::Index i = 0; i < dict.size(); ++i) dict.data()[i] = rng.uniform(0.0, hi);

  NmfResult result;
  double previous = frobenius_residual(a, z, dict);
  result.objective_history.push_back(previous);
  int iterations = 0;
  for (int it = 0; it < options.max_iter; ++it) {
    update_rows(a, dict, z, options.nnls, options.threads);
    update_columns(a, z, dict, options.nnls, options.threads);
    const double current = frobenius_residual(a, z, dict);
    if (current > previous + 1e-10 * a_norm)
      fail(ErrorKind::Internal, "NMF objective increased from " + std::to_string(previous) + " to " +
                                    std::to_string(current) + " at iteration " + std::to_string(it + 1));
    result.objective_history.push_back(current);
    iterations = it + 1;
    const double decrease = previous - current;
    previous = current;
    if (current <= 1e-14 * a_norm || decrease < options.tol * result.objective_history[result.objective_history.size() - 2]) {
      result.converged = true;
      break;
    }
  }

  TrainingMeta meta;
  meta.tol = options.tol;
  meta.max_iter = options.max_iter;
  meta.seed = options.seed;
  meta.final_objective = previous;
  meta.iterations = iterations;

  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < k; ++r) {
    if (dict.row(r).maxCoeff() > 0.0)
      keep.push_back(r);
    else
      meta.pruned_atoms.push_back(r);
  }
  if (options.prune_zero_atoms && !meta.pruned_atoms.empty()) {
    std::cerr << "warning: pruned " << meta.pruned_atoms.size() << " all-zero dictionary atom(s)\n";
    Matrix kept_dict(static_cast<Eigen::Index>(keep.size()), d);
    Matrix kept_z(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      kept_dict.row(static_cast<Eigen::Index>(i)) = dict.row(keep[i]);
      kept_z.col(static_cast<Eigen::Index>(i)) = z.col(keep[i]);
    }
    dict = std::move(kept_dict);
    z = std::move(kept_z);
  } else if (!options.prune_zero_atoms) {
    meta.pruned_atoms.clear();
  }

  result.dictionary = Dictionary{std::move(dict), meta};
  result.features.values = std::move(z);
  result.features.sample_ids.resize(static_cast<std::size_t>(n));
  std::iota(result.features.sample_ids.begin(), result.features.sample_ids.end(), 0);
  return result;
}

FeatureMatrix nnls_extract(const Dictionary& dict, const Matrix& a, const ExtractOptions& options) {
  require(a.cols() == dict.d(), ErrorKind::Shape,
          "activations have " + std::to_string(a.cols()) + " units, dictionary expects " + std::to_string(dict.d()));
  const NnlsSolver solver(Eigen::MatrixXd(dict.atoms * dict.atoms.transpose()), options.nnls);
  const Matrix rhs = a * dict.atoms.transpose();
  FeatureMatrix out;
  out.values.resize(a.rows(), dict.k());
  parallel_for(static_cast<std::size_t>(a.rows()), options.threads, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.values.row(r) = solver.solve(rhs.row(r).transpose()).transpose();
  });
  out.sample_ids.resize(static_cast<std::size_t>(a.rows()));
  std::iota(out.sample_ids.begin(), out.sample_ids.end(), 0);
  return out;
}

Eigen::Index argmax_row(const Matrix& m, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(row, j) > m(row, best)) best = j;
  return best;
}

ReconstructionReport reconstruction_report(const Matrix& a, const FeatureMatrix& z, const Dictionary& dict,
                                           const Matrix* head_weights) {
  require(z.values.rows() == a.rows() && z.values.cols() == dict.k() && a.cols() == dict.d(), ErrorKind::Shape,
          "reconstruction_report: inconsistent shapes");
  const Matrix recon = z.values * dict.atoms;
  ReconstructionReport report;
  const double norm = a.norm();
  const double err = (a - recon).norm();
  report.rel_error = norm > 0.0 ? err / norm : err;
  if (head_weights != nullptr) {
    require(head_weights->rows() == a.cols(), ErrorKind::Shape, "head weights do not match activation units");
    const Matrix original = a * *head_weights;
    const Matrix rebuilt = recon * *head_weights;
    Eigen::Index agree = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) agree += argmax_row(original, i) == argmax_row(rebuilt, i);
    report.prediction_agreement = a.rows() > 0 ? static_cast<double>(agree) / static_cast<double>(a.rows()) : 1.0;
  }
  return report;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

ActivationDump matrix_dump(const Matrix& m, std::string layer, SampleIds ids) {
  ActivationDump dump;
  dump.layer_id = std::move(layer);
  dump.branch = Branch::Combined;
  dump.epoch = 0;
  dump.data = m.cast<float>();
  dump.sample_ids = std::move(ids);
  return dump;
}

}  // namespace

void save_dictionary(const Dictionary& dict, const std::filesystem::path& path) {
  SampleIds ids(static_cast<std::size_t>(dict.k()));
  std::iota(ids.begin(), ids.end(), 0);
  write_dump(matrix_dump(dict.atoms, "dictionary", std::move(ids)), path);
  const auto& meta = dict.training_meta;
  const nlohmann::json doc = {{"k", dict.k()},
                              {"d", dict.d()},
                              {"tol", meta.tol},
                              {"max_iter", meta.max_iter},
                              {"seed", meta.seed},
                              {"final_objective", meta.final_objective},
                              {"iterations", meta.iterations},
                              {"pruned_atoms", meta.pruned_atoms}};
  std::ofstream out(sidecar(path));
  if (!out) fail(ErrorKind::Io, "cannot write " + sidecar(path).string());
  out << doc.dump(2) << '\n';
}

Dictionary load_dictionary(const std::filesystem::path& path) {
  const ActivationDump dump = read_dump(path);
  Dictionary dict;
  dict.atoms = dump.to_double();
  require(dict.atoms.minCoeff() >= 0.0, ErrorKind::Validation, "dictionary has negative atoms: " + path.string());
  const auto meta_path = sidecar(path);
  if (std::filesystem::exists(meta_path)) {
    try {
      std::ifstream in(meta_path);
      const auto doc = nlohmann::json::parse(in);
      auto& meta = dict.training_meta;
      meta.tol = doc.value("tol", meta.tol);
      meta.max_iter = doc.value("max_iter", meta.max_iter);
      meta.seed = doc.value("seed", meta.seed);
      meta.final_objective = doc.value("final_objective", 0.0);
      meta.iterations = doc.value("iterations", 0);
      meta.pruned_atoms = doc.value("pruned_atoms", std::vector<Eigen::Index>{});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, "invalid dictionary sidecar " + meta_path.string() + ": " + e.what());
    }
  }
  return dict;
}

void save_features(const FeatureMatrix& features, const std::filesystem::path& path) {
  write_dump(matrix_dump(features.values, "features", features.sample_ids), path);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  ActivationDump dump = read_dump(path);
  return FeatureMatrix{dump.to_double(), std::move(dump.sample_ids)};
}

}  // namespace featurescope
