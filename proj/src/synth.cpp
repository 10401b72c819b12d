#include "featurescope/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"

#include "featurescope/csv.hpp"
#include "featurescope/error.hpp"
#include "featurescope/rng.hpp"

namespace featurescope {

namespace fs = std::filesystem;

namespace {

// Stream tags for Rng::derive; every dump draws from its own stream.
enum : std::uint64_t { kLatentStream = 1, kNoiseStream = 2, kRotationStream = 3, kPerturbStream = 4, kHeadStream = 5 };

std::string layer_name(int layer) { return "layer" + std::to_string(layer); }


Matrix random_orthogonal(Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so Q is a deterministic function of g.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

ActivationDump to_dump(const Matrix& values, const std::string& layer, Branch branch, std::uint32_t epoch,
                       const SampleIds& ids, const std::optional<double>& offset) {
  ActivationDump dump;
  dump.layer_id = layer;
  dump.branch = branch;
  dump.epoch = epoch;
  if (offset) {
    dump.data = (values.array() + *offset).cwiseMax(0.0).matrix().cast<float>();
  } else {
    dump.data = values.cast<float>();
  }
  dump.sample_ids = ids;
  return dump;
}

}  // namespace

void validate(const PlantSpec& spec) {
  require(spec.n_samples >= 2, ErrorKind::Validation, "n_samples must be >= 2");
  require(spec.n_layers >= 1, ErrorKind::Validation, "n_layers must be >= 1");
  require(spec.n_epochs >= 1, ErrorKind::Validation, "n_epochs must be >= 1");
  require(static_cast<int>(spec.n_units_per_layer.size()) == spec.n_layers, ErrorKind::Validation,
          "n_units_per_layer must list one width per layer");
  const auto planted = static_cast<int>(spec.features.size());
  for (const int units : spec.n_units_per_layer)
    require(units >= std::max(1, planted), ErrorKind::Validation,
            "every layer needs at least one unit per planted feature (" + std::to_string(planted) + ")");
  for (std::size_t i = 0; i < spec.features.size(); ++i) {
    const auto& f = spec.features[i];
    require(f.decodable_from_layer >= 1 && f.decodable_from_layer <= spec.n_layers, ErrorKind::Validation,
            "decodable_from_layer out of range for feature " + std::to_string(f.feature_id));
    require(f.emerges_at_epoch >= 0 && f.emerges_at_epoch < spec.n_epochs, ErrorKind::Validation,
            "emerges_at_epoch out of range for feature " + std::to_string(f.feature_id));
    require(f.snr > 0.0 && std::isfinite(f.snr), ErrorKind::Validation, "snr must be > 0");
    require(f.feature_id == static_cast<Eigen::Index>(i), ErrorKind::Validation, "feature ids must be 0..F-1 in order");
  }
  if (spec.perturbation) {
    require(!spec.perturbation->sigmas.empty(), ErrorKind::Validation, "perturbation needs sigmas");
    for (const double s : spec.perturbation->sigmas) require(s > 0.0, ErrorKind::Validation, "sigmas must be > 0");
    require(spec.perturbation->n_noise >= 2, ErrorKind::Validation, "perturbation n_noise must be >= 2");
  }
  if (spec.head) {
    require(spec.head->n_classes >= 2, ErrorKind::Validation, "head needs at least 2 classes");
    require(!spec.features.empty(), ErrorKind::Validation, "head needs at least one planted feature");
  }
}

PlantSpec read_plant_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Validation, "cannot open synth spec " + path.string());
  PlantSpec spec;
  try {
    const auto doc = nlohmann::json::parse(in);
    spec.n_samples = doc.at("n_samples").get<int>();
    spec.n_layers = doc.at("n_layers").get<int>();
    spec.n_epochs = doc.value("n_epochs", 1);
    if (doc.contains("n_units_per_layer")) {
      spec.n_units_per_layer = doc.at("n_units_per_layer").get<std::vector<int>>();
    } else {
      spec.n_units_per_layer.assign(static_cast<std::size_t>(spec.n_layers), doc.at("n_units").get<int>());
    }
    Eigen::Index next_id = 0;
    for (const auto& f : doc.at("features")) {
      PlantedFeature pf;
      pf.feature_id = f.value("feature_id", next_id);
      pf.decodable_from_layer = f.at("decodable_from_layer").get<int>();
      pf.emerges_at_epoch = f.value("emerges_at_epoch", 0);
      pf.snr = f.value("snr", 10.0);
      spec.features.push_back(pf);
      ++next_id;
    }
    spec.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("nonnegative_offset") && !doc.at("nonnegative_offset").is_null())
      spec.nonnegative_offset = doc.at("nonnegative_offset").get<double>();
    spec.rotate = doc.value("rotate", false);
    if (doc.contains("perturbation")) {
      const auto& p = doc.at("perturbation");
      spec.perturbation = PerturbationPlan{p.at("sigmas").get<std::vector<double>>(), p.at("n_noise").get<int>()};
    }
    if (doc.contains("head")) {
      const auto& h = doc.at("head");
      HeadPlan plan;
      plan.n_classes = h.value("n_classes", plan.n_classes);
      plan.jitter = h.value("jitter", plan.jitter);
      plan.class_signal = h.value("class_signal", plan.class_signal);
      spec.head = plan;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, "invalid synth spec " + path.string() + ": " + e.what());
  }
  validate(spec);
  return spec;
}

double expected_complexity(const PlantedFeature& f, int n_layers) {
  return 1.0 - static_cast<double>(n_layers - f.decodable_from_layer + 1) / static_cast<double>(n_layers);
}

double expected_time_to_decode(const PlantedFeature& f, int n_epochs) {
  return 1.0 - static_cast<double>(n_epochs - f.emerges_at_epoch) / static_cast<double>(n_epochs);
}

SynthOutput generate(const PlantSpec& spec, const fs::path& out_dir) {
  validate(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "dumps", ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / "dumps").string());

  const Eigen::Index n = spec.n_samples;
  const auto n_features = static_cast<Eigen::Index>(spec.features.size());
  SampleIds ids(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;

  // Latents and planted unit vectors, drawn once.
  Matrix latent(n, std::max<Eigen::Index>(n_features, 1));
  Matrix planted(n, std::max<Eigen::Index>(n_features, 1));
  for (Eigen::Index f = 0; f < n_features; ++f) {
    Rng rng = Rng::derive(spec.seed, kLatentStream, static_cast<std::uint64_t>(f));
    for (Eigen::Index i = 0; i < n; ++i) latent(i, f) = rng.normal();
    for (Eigen::Index i = 0; i < n; ++i) planted(i, f) = spec.features[static_cast<std::size_t>(f)].snr * latent(i, f) + rng.normal();
  }

  std::vector<Matrix> rotations;
  if (spec.rotate) {
    for (int l = 1; l <= spec.n_layers; ++l) {
      Rng rng = Rng::derive(spec.seed, kRotationStream, static_cast<std::uint64_t>(l));
      rotations.push_back(random_orthogonal(spec.n_units_per_layer[static_cast<std::size_t>(l - 1)], rng));
    }
  }

  SynthOutput out;
  Manifest& m = out.manifest;
  m.base_dir = out_dir;
  for (int l = 1; l <= spec.n_layers; ++l) m.layers.push_back(layer_name(l));
  for (int e = 0; e < spec.n_epochs; ++e) m.epochs.push_back(static_cast<std::uint32_t>(e));

  Matrix final_combined;
  for (int e = 0; e < spec.n_epochs; ++e) {
    for (int l = 1; l <= spec.n_layers; ++l) {
      const Eigen::Index units = spec.n_units_per_layer[static_cast<std::size_t>(l - 1)];
      for (const Branch branch : {Branch::Residual, Branch::Main, Branch::Combined}) {
        Rng rng = Rng::derive(spec.seed, kNoiseStream,
                              (static_cast<std::uint64_t>(e) << 32) | (static_cast<std::uint64_t>(l) << 8) |
                                  static_cast<std::uint64_t>(branch));
        Matrix values(n, units);
        for (Eigen::Index i = 0; i < values.size(); ++i) values.data()[i] = rng.normal();
        for (Eigen::Index f = 0; f < n_features; ++f) {
          const auto& pf = spec.features[static_cast<std::size_t>(f)];
          if (e < pf.emerges_at_epoch) continue;
          bool carries = false;
          switch (branch) {
            case Branch::Combined: carries = l >= pf.decodable_from_layer; break;
            case Branch::Residual: carries = l > pf.decodable_from_layer; break;
            case Branch::Main: carries = l == pf.decodable_from_layer; break;
          }
          if (carries) values.col(f) = planted.col(f);
        }
        if (branch == Branch::Combined && spec.rotate) values = values * rotations[static_cast<std::size_t>(l - 1)];
        if (branch == Branch::Combined && l == spec.n_layers && e == spec.n_epochs - 1) final_combined = values;

        const std::string file = layer_name(l) + "_" + std::string(to_string(branch)) + "_e" + std::to_string(e) + ".acts";
        const fs::path path = out_dir / "dumps" / file;
        write_dump(to_dump(values, layer_name(l), branch, static_cast<std::uint32_t>(e), ids, spec.nonnegative_offset), path);
        m.dump_paths[{layer_name(l), branch, static_cast<std::uint32_t>(e)}] = path;
      }
    }
  }

  if (spec.perturbation) {
    fs::create_directories(out_dir / "perturb", ec);
    const auto& plan = *spec.perturbation;
    for (std::size_t s = 0; s < plan.sigmas.size(); ++s) {
      std::vector<fs::path> paths;
      for (int r = 0; r < plan.n_noise; ++r) {
        Rng rng = Rng::derive(spec.seed, kPerturbStream, (static_cast<std::uint64_t>(s) << 32) | static_cast<std::uint64_t>(r));
        Matrix noisy = final_combined;
        for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += plan.sigmas[s] * rng.normal();
        const fs::path path = out_dir / "perturb" / ("sigma" + std::to_string(s) + "_draw" + std::to_string(r) + ".acts");
        write_dump(to_dump(noisy, m.final_layer(), Branch::Combined, m.final_epoch(), ids, spec.nonnegative_offset), path);
        paths.push_back(path);
      }
      m.perturbation_sets[plan.sigmas[s]] = std::move(paths);
    }
  }

  out.ground_truth.values = latent.leftCols(n_features);
  out.ground_truth.sample_ids = ids;
  if (n_features >= 1) {
    save_features(out.ground_truth, out_dir / "ground_truth.acts");
    m.features = out_dir / "ground_truth.acts";
  }

  for (const auto& f : spec.features) {
    out.k_expected.push_back(expected_complexity(f, spec.n_layers));
    out.lambda_expected.push_back(expected_time_to_decode(f, spec.n_epochs));
  }
  {
    std::ofstream csv(out_dir / "ground_truth.csv");
    if (!csv) fail(ErrorKind::Io, "cannot write ground_truth.csv");
    csv << "feature_id,unit,decodable_from_layer,emerges_at_epoch,snr,K_expected,lambda_expected\n";
    for (std::size_t i = 0; i < spec.features.size(); ++i) {
      const auto& f = spec.features[i];
      csv << f.feature_id << ',' << i << ',' << f.decodable_from_layer << ',' << f.emerges_at_epoch << ','
          << format_number(f.snr) << ',' << format_number(out.k_expected[i]) << ','
          << format_number(out.lambda_expected[i]) << '\n';
    }
  }

  if (spec.head) {
    const auto& plan = *spec.head;
    const Eigen::Index d = spec.n_units_per_layer.back();
    Dictionary identity;
    identity.atoms = Matrix::Identity(d, d);
    save_dictionary(identity, out_dir / "identity_dictionary.acts");

    Rng rng = Rng::derive(spec.seed, kHeadStream, 0);
    const double unplanted_k = 1.0 - 1.0 / static_cast<double>(spec.n_layers);
    Matrix w(d, plan.n_classes);
    for (Eigen::Index u = 0; u < d; ++u) {
      const double k = u < n_features ? out.k_expected[static_cast<std::size_t>(u)] : unplanted_k;
      const double base = 1.0 - k + plan.jitter * rng.normal();
      w.row(u).setConstant(base);
    }
    for (int c = 0; c < plan.n_classes; ++c) w(c % n_features, c) += plan.class_signal;
    write_head_weights(w, out_dir / "head.json");
    m.head_weights = out_dir / "head.json";

    const ActivationDump written = read_dump(m.path_for({m.final_layer(), Branch::Combined, m.final_epoch()}));
    const Matrix logits = written.to_double() * w;
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(argmax_row(logits, i));
    write_labels(ids, labels, out_dir / "labels.csv");
    m.labels = out_dir / "labels.csv";
  }

  out.manifest_path = out_dir / "manifest.json";
  save_manifest(m, out.manifest_path);
  return out;
}

Vector oracle_nnls(const Dictionary& dict, const Vector& a_row) {
  const Eigen::Index k = dict.k();
  require(k <= 16, ErrorKind::Budget, "oracle_nnls enumerates 2^k active sets; k = " + std::to_string(k) + " > 16");
  require(a_row.size() == dict.d(), ErrorKind::Shape, "oracle_nnls: row length does not match dictionary");
  const Eigen::RowVectorXd a = a_row.transpose();
  Vector best = Vector::Zero(k);
  double best_obj = a.squaredNorm();
  for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < k; ++i)
      if (mask & (1u << i)) active.push_back(i);
    const auto m = static_cast<Eigen::Index>(active.size());
    // Least squares on the active atoms: a^T ~ D_S^T z_S.
    Eigen::MatrixXd basis(dict.d(), m);
    for (Eigen::Index j = 0; j < m; ++j) basis.col(j) = dict.atoms.row(active[static_cast<std::size_t>(j)]).transpose();
    const Eigen::VectorXd coef = basis.completeOrthogonalDecomposition().solve(a_row);
    if (coef.minCoeff() < 0.0) continue;
    Vector candidate = Vector::Zero(k);
    for (Eigen::Index j = 0; j < m; ++j) candidate(active[static_cast<std::size_t>(j)]) = coef(j);
    const double obj = (a - candidate.transpose() * dict.atoms).squaredNorm();
    if (obj < best_obj) {
      best_obj = obj;
      best = candidate;
    }
  }
  return best;
}

namespace {

// Minimizes mean((z - x theta)^2) / (2 sigma^2) by nonlinear CG with exact line
// search (the objective is quadratic). Returns the minimal mean squared error.
double minimize_gaussian_nll(const Eigen::MatrixXd& x, const Eigen::VectorXd& z) {
  constexpr double kSigma2 = 0.5;
  const double n = static_cast<double>(x.rows());
  const Eigen::Index p = x.cols();
  auto gradient = [&](const Eigen::VectorXd& theta) -> Eigen::VectorXd {
    return -(x.transpose() * (z - x * theta)) / (n * kSigma2);
  };
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd g = gradient(theta);
  Eigen::VectorXd dir = -g;
  const int max_iter = 200 * static_cast<int>(p + 1);
  int since_restart = 0;
  for (int it = 0; it < max_iter && g.norm() >= 1e-10; ++it) {
    const Eigen::VectorXd xd = x * dir;
    const double curvature = xd.squaredNorm() / (n * kSigma2);
    if (!(curvature > 0.0)) {
      dir = -g;
      since_restart = 0;
      continue;
    }
    theta += (-g.dot(dir) / curvature) * dir;
    const Eigen::VectorXd g_next = gradient(theta);
    double beta = std::max(0.0, g_next.dot(g_next - g) / g.squaredNorm());
    if (++since_restart > p) {
      beta = 0.0;
      since_restart = 0;
    }
    dir = -g_next + beta * dir;
    g = g_next;
  }
  if (!(g.norm() < 1e-10))
    fail(ErrorKind::Oracle, "NLL minimization did not reach gradient norm 1e-10 (reached " + std::to_string(g.norm()) + ")");
  return (z - x * theta).squaredNorm() / n;
}

}  // namespace

double oracle_vinfo(const Matrix& x, const Vector& z) {
  require(x.rows() == z.size(), ErrorKind::Shape, "oracle_vinfo: x and z differ in sample count");
  require(x.rows() >= 2, ErrorKind::Shape, "oracle_vinfo needs at least 2 samples");
  require(x.rows() <= 1000 && x.cols() <= 20, ErrorKind::Budget, "oracle_vinfo is limited to n <= 1000, d <= 20");
  const double n = static_cast<double>(z.size());
  const double variance = (z.array() - z.mean()).square().sum() / n;
  if (variance < 1e-12) return 0.0;

  // Affine predictors are unchanged by shifting and rescaling the columns of x.
  Eigen::MatrixXd standardized = x.rowwise() - x.colwise().mean();
  for (Eigen::Index j = 0; j < standardized.cols(); ++j) {
    const double norm = standardized.col(j).norm() / std::sqrt(n);
    if (norm > 0.0) standardized.col(j) /= norm;
  }
  const Eigen::VectorXd centered = z.array() - z.mean();

  const Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(x.rows(), 1);
  Eigen::MatrixXd affine(x.rows(), x.cols() + 1);
  affine.leftCols(x.cols()) = standardized;
  affine.col(x.cols()) = Eigen::VectorXd::Ones(x.rows());

  // With sigma^2 = 1/2 the entropy difference is the drop in mean squared error.
  const double h_marginal = minimize_gaussian_nll(constant, centered);
  const double h_conditional = minimize_gaussian_nll(affine, centered);
  return (h_marginal - h_conditional) / variance;
}

}  // namespace featurescope
