#include "featurescope/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "featurescope/acts_io.hpp"
#include "featurescope/attribution.hpp"
#include "featurescope/csv.hpp"
#include "featurescope/dictionary.hpp"
#include "featurescope/error.hpp"
#include "featurescope/flow.hpp"
#include "featurescope/kernels.hpp"
#include "featurescope/metafeatures.hpp"
#include "featurescope/parallel.hpp"
#include "featurescope/rng.hpp"
#include "featurescope/synth.hpp"
#include "featurescope/vinformation.hpp"

namespace featurescope::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kFeaturesPerClass = 10;

struct Common {
  std::string manifest;
  std::string out_dir = "out";
  int threads = 0;
  std::uint64_t seed = 0;
  double lambda_rel = kDefaultLambdaRel;
};

struct Options {
  Common common;
  // learn-dict / extract
  Eigen::Index k = 0;
  int per_class = kFeaturesPerClass;
  double tol = 1e-4;
  int max_iter = 200;
  std::string layer;
  std::optional<std::uint32_t> epoch;
  std::string dict;
  std::string features;
  // flow
  std::string select = "all";
  double percentile = 1.0;
  // redundancy / sensitivity
  std::vector<double> fractions = kDefaultMaskFractions;
  int n_masks = kDefaultMasks;
  std::vector<double> sigmas;
  int n_noise = 0;
  // importance / ablate
  std::optional<int> class_filter;
  std::string target = "predicted";
  std::string order = "complexity";
  std::vector<double> steps{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  // cluster
  int n_clusters = kDefaultMetaClusters;
  int select_count = 30;
  // synth
  std::string spec;
  // report
  int n_perm = kDefaultPermutations;
};

struct Context {
  const Options& opt;
  std::ostream& out;
  std::ostream& err;
  int threads;
  fs::path out_dir;
};

// ---------------------------------------------------------------- helpers

Manifest manifest_of(const Context& ctx) {
  require(!ctx.opt.common.manifest.empty(), ErrorKind::Validation, "--manifest is required");
  return load_manifest(ctx.opt.common.manifest);
}

void ensure_out_dir(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + ctx.out_dir.string());
}

fs::path existing(const fs::path& p, const std::string& what) {
  require(fs::exists(p), ErrorKind::Validation, what + " not found: " + p.string());
  return p;
}

fs::path features_path(const Context& ctx, const Manifest& m) {
  if (!ctx.opt.features.empty()) return existing(ctx.opt.features, "features file");
  const fs::path extracted = ctx.out_dir / "features.acts";
  if (fs::exists(extracted) || !m.features) return existing(extracted, "features file (pass --features)");
  return *m.features;
}

fs::path dictionary_path(const Context& ctx) {
  if (!ctx.opt.dict.empty()) return existing(ctx.opt.dict, "dictionary");
  return existing(ctx.out_dir / "dictionary.acts", "dictionary (pass --dict)");
}

std::uint32_t epoch_of(const Context& ctx, const Manifest& m) {
  const std::uint32_t e = ctx.opt.epoch.value_or(m.final_epoch());
  require(std::find(m.epochs.begin(), m.epochs.end(), e) != m.epochs.end(), ErrorKind::Validation,
          "manifest has no epoch " + std::to_string(e));
  return e;
}

std::string layer_of(const Context& ctx, const Manifest& m) {
  if (ctx.opt.layer.empty()) return m.final_layer();
  require(std::find(m.layers.begin(), m.layers.end(), ctx.opt.layer) != m.layers.end(), ErrorKind::Validation,
          "manifest has no layer '" + ctx.opt.layer + "'");
  return ctx.opt.layer;
}

// Final-layer (or --layer) combined activations, restricted to `ids` when given.
ActivationDump probe_dump(const Context& ctx, const Manifest& m) {
  return m.load({layer_of(ctx, m), Branch::Combined, epoch_of(ctx, m)});
}

Matrix head_of(const Manifest& m) {
  require(m.head_weights.has_value(), ErrorKind::Validation, "manifest has no head_weights entry");
  return read_head_weights(*m.head_weights);
}

std::vector<int> labels_for(const Manifest& m, const SampleIds& ids) {
  require(m.labels.has_value(), ErrorKind::Validation, "manifest has no labels entry");
  const auto labels = read_labels(*m.labels);
  std::vector<int> out;
  out.reserve(ids.size());
  for (const auto id : ids) {
    const auto it = labels.find(id);
    require(it != labels.end(), ErrorKind::Alignment, "no label for sample " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

std::map<Eigen::Index, double> read_column(const fs::path& path, const std::string& column) {
  const CsvTable table = read_csv(existing(path, "table"));
  const auto id_col = table.column("feature_id");
  const auto value_col = table.column(column);
  require(id_col && value_col, ErrorKind::Format, path.string() + " lacks feature_id/" + column + " columns");
  std::map<Eigen::Index, double> values;
  for (const auto& row : table.rows)
    values[static_cast<Eigen::Index>(parse_number(row[*id_col]))] = parse_number(row[*value_col]);
  return values;
}

std::vector<ComplexityProfile> profiles_from_csv(const fs::path& path) {
  std::vector<ComplexityProfile> profiles;
  for (const auto& [id, k] : read_column(path, "K")) {
    ComplexityProfile p;
    p.feature_id = id;
    p.complexity_k = k;
    profiles.push_back(p);
  }
  return profiles;
}

void check_fraction_list(const std::vector<double>& values, bool open_interval, const std::string& what) {
  require(!values.empty(), ErrorKind::Validation, what + " list is empty");
  for (const double v : values) {
    const bool ok = open_interval ? (v > 0.0 && v < 1.0) : (v >= 0.0 && v <= 1.0);
    require(ok, ErrorKind::Validation, what + " value " + format_number(v) + " out of range");
  }
}

// ---------------------------------------------------------------- commands

void cmd_synth(const Context& ctx) {
  require(!ctx.opt.spec.empty(), ErrorKind::Validation, "--spec is required");
  const PlantSpec spec = read_plant_spec(ctx.opt.spec);
  const SynthOutput out = generate(spec, ctx.out_dir);
  ctx.out << "synth: wrote " << out.manifest.dump_paths.size() << " dumps, " << spec.features.size()
          << " planted features -> " << out.manifest_path.string() << '\n';
}

void cmd_learn_dict(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.tol >= 0.0, ErrorKind::Validation, "--tol must be >= 0");
  require(o.max_iter >= 1, ErrorKind::Validation, "--max-iter must be >= 1");
  require(o.per_class >= 1, ErrorKind::Validation, "--per-class must be >= 1");
  const Manifest m = manifest_of(ctx);
  Eigen::Index k = o.k;
  std::optional<Matrix> head;
  if (m.head_weights) head = head_of(m);
  if (k <= 0) {
    require(head.has_value(), ErrorKind::Validation, "pass --k or provide head_weights to derive k = per-class * classes");
    k = o.per_class * head->cols();
  }
  const ActivationDump dump = probe_dump(ctx, m);
  ensure_out_dir(ctx);

  NmfOptions nmf;
  nmf.k = k;
  nmf.tol = o.tol;
  nmf.max_iter = o.max_iter;
  nmf.seed = o.common.seed;
  nmf.threads = ctx.threads;
  const Matrix a = dump.to_double();
  NmfResult result = nmf_fit(a, nmf);
  result.features.sample_ids = dump.sample_ids;

  save_dictionary(result.dictionary, ctx.out_dir / "dictionary.acts");
  save_features(result.features, ctx.out_dir / "nmf_features.acts");
  {
    CsvWriter csv(ctx.out_dir / "nmf_objective.csv", {"iteration", "objective"});
    for (std::size_t i = 0; i < result.objective_history.size(); ++i)
      csv.cell(static_cast<long long>(i)).cell(result.objective_history[i]).end_row();
  }
  const auto report = reconstruction_report(a, result.features, result.dictionary, head ? &*head : nullptr);
  ctx.out << "learn-dict: k=" << result.dictionary.k() << " d=" << result.dictionary.d()
          << " iterations=" << result.dictionary.training_meta.iterations
          << " rel_error=" << format_number(report.rel_error)
          << (result.converged ? "" : " (max_iter reached)") << '\n';
}

void cmd_extract(const Context& ctx) {
  const Manifest m = manifest_of(ctx);
  const Dictionary dict = load_dictionary(dictionary_path(ctx));
  const ActivationDump dump = probe_dump(ctx, m);
  std::optional<Matrix> head;
  if (m.head_weights) head = head_of(m);
  ensure_out_dir(ctx);

  const Matrix a = dump.to_double();
  FeatureMatrix features = nnls_extract(dict, a, {NnlsOptions{}, ctx.threads});
  features.sample_ids = dump.sample_ids;
  save_features(features, ctx.out_dir / "features.acts");
  const auto report = reconstruction_report(a, features, dict, head ? &*head : nullptr);
  nlohmann::json doc = {{"rel_error", report.rel_error}, {"samples", a.rows()}, {"k", dict.k()}};
  if (report.prediction_agreement) doc["prediction_agreement"] = *report.prediction_agreement;
  std::ofstream(ctx.out_dir / "reconstruction.json") << doc.dump(2) << '\n';
  ctx.out << "extract: " << a.rows() << " samples x " << dict.k() << " features, rel_error="
          << format_number(report.rel_error);
  if (report.prediction_agreement) ctx.out << " agreement=" << format_number(*report.prediction_agreement);
  ctx.out << '\n';
}

void write_profiles_json(const fs::path& path, const std::vector<ComplexityProfile>& profiles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : profiles) {
    nlohmann::json j;
    j["feature_id"] = p.feature_id;
    if (!p.per_layer_vinfo.empty()) {
      nlohmann::json layers = nlohmann::json::array();
      for (const auto& [layer, v] : p.per_layer_vinfo) layers.push_back({{"layer", layer}, {"vinfo", v}});
      j["per_layer_vinfo"] = std::move(layers);
      j["K"] = p.complexity_k;
    }
    if (p.lambda_ttd) {
      nlohmann::json epochs = nlohmann::json::array();
      for (const auto& [epoch, v] : p.per_epoch_vinfo) epochs.push_back({{"epoch", epoch}, {"vinfo", v}});
      j["per_epoch_vinfo"] = std::move(epochs);
      j["lambda"] = *p.lambda_ttd;
    }
    arr.push_back(std::move(j));
  }
  std::ofstream(path) << arr.dump(2) << '\n';
}

void cmd_complexity(const Context& ctx) {
  require(ctx.opt.common.lambda_rel >= 0.0, ErrorKind::Validation, "--lambda-rel must be >= 0");
  const Manifest m = manifest_of(ctx);
  const std::uint32_t epoch = epoch_of(ctx, m);
  const FeatureMatrix features = load_features(features_path(ctx, m));
  ensure_out_dir(ctx);
  BatchOptions batch;
  batch.lambda_rel = ctx.opt.common.lambda_rel;
  batch.epoch = epoch;
  batch.threads = ctx.threads;
  const auto profiles = batch_profiles(m, features, batch);

  CsvWriter summary(ctx.out_dir / "complexity.csv", {"feature_id", "K"});
  CsvWriter layers(ctx.out_dir / "complexity_layers.csv", {"feature_id", "layer", "vinfo"});
  double mean_k = 0.0;
  for (const auto& p : profiles) {
    summary.cell(static_cast<long long>(p.feature_id)).cell(p.complexity_k).end_row();
    for (const auto& [layer, v] : p.per_layer_vinfo)
      layers.cell(static_cast<long long>(p.feature_id)).cell(layer).cell(v).end_row();
    mean_k += p.complexity_k;
  }
  write_profiles_json(ctx.out_dir / "complexity.json", profiles);
  ctx.out << "complexity: " << profiles.size() << " features x " << m.layers.size() << " layers at epoch " << epoch
          << ", mean K=" << format_number(profiles.empty() ? 0.0 : mean_k / static_cast<double>(profiles.size()))
          << '\n';
}

void cmd_ttd(const Context& ctx) {
  require(ctx.opt.common.lambda_rel >= 0.0, ErrorKind::Validation, "--lambda-rel must be >= 0");
  const Manifest m = manifest_of(ctx);
  const FeatureMatrix features = load_features(features_path(ctx, m));
  ensure_out_dir(ctx);
  BatchOptions batch;
  batch.lambda_rel = ctx.opt.common.lambda_rel;
  batch.complexity = false;
  batch.time_to_decode = true;
  batch.threads = ctx.threads;
  const auto profiles = batch_profiles(m, features, batch);

  CsvWriter summary(ctx.out_dir / "ttd.csv", {"feature_id", "lambda"});
  CsvWriter epochs(ctx.out_dir / "ttd_epochs.csv", {"feature_id", "epoch", "vinfo"});
  double mean = 0.0;
  for (const auto& p : profiles) {
    summary.cell(static_cast<long long>(p.feature_id)).cell(*p.lambda_ttd).end_row();
    for (const auto& [epoch, v] : p.per_epoch_vinfo)
      epochs.cell(static_cast<long long>(p.feature_id)).cell(static_cast<long long>(epoch)).cell(v).end_row();
    mean += *p.lambda_ttd;
  }
  write_profiles_json(ctx.out_dir / "ttd.json", profiles);
  ctx.out << "ttd: " << profiles.size() << " features x " << m.epochs.size() << " epochs, mean lambda="
          << format_number(profiles.empty() ? 0.0 : mean / static_cast<double>(profiles.size())) << '\n';
}

std::vector<Eigen::Index> flow_selection(const Context& ctx, Eigen::Index k) {
  std::vector<Eigen::Index> ids;
  if (ctx.opt.select == "all") {
    ids.resize(static_cast<std::size_t>(k));
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
  }
  // Rank-based top and bottom percentile by K from complexity.csv.
  auto profiles = profiles_from_csv(ctx.out_dir / "complexity.csv");
  require(static_cast<Eigen::Index>(profiles.size()) == k, ErrorKind::Alignment,
          "complexity.csv does not cover the feature table");
  const auto order = complexity_order(profiles);  // most complex first
  const auto count = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::ceil(ctx.opt.percentile / 100.0 * static_cast<double>(k) - 1e-9)));
  std::set<Eigen::Index> chosen;
  for (Eigen::Index i = 0; i < std::min(count, k); ++i) {
    chosen.insert(order[static_cast<std::size_t>(i)]);
    chosen.insert(order[static_cast<std::size_t>(k - 1 - i)]);
  }
  return {chosen.begin(), chosen.end()};
}

void cmd_flow(const Context& ctx) {
  require(ctx.opt.select == "all" || ctx.opt.select == "extremes", ErrorKind::Validation,
          "--select must be 'all' or 'extremes'");
  require(ctx.opt.percentile > 0.0 && ctx.opt.percentile <= 50.0, ErrorKind::Validation, "--percentile must be in (0, 50]");
  const Manifest m = manifest_of(ctx);
  const std::uint32_t epoch = epoch_of(ctx, m);
  const FeatureMatrix features = load_features(features_path(ctx, m));
  ensure_out_dir(ctx);
  const auto ids = flow_selection(ctx, features.k());
  const auto curves = branch_flow_batch(m, features, ids, epoch, ctx.threads);
  CsvWriter csv(ctx.out_dir / "flow.csv", {"feature_id", "block", "cka_residual", "cka_main"});
  for (const auto& c : curves)
    for (const auto& p : c.per_block)
      csv.cell(static_cast<long long>(c.feature_id)).cell(p.block).cell(p.cka_residual).cell(p.cka_main).end_row();
  ctx.out << "flow: " << curves.size() << " features x " << m.layers.size() << " blocks at epoch " << epoch << '\n';
}

std::string fraction_column(const std::string& prefix, double v) { return prefix + format_number(v); }

void cmd_redundancy(const Context& ctx) {
  const auto& o = ctx.opt;
  check_fraction_list(o.fractions, true, "--fractions");
  require(o.n_masks >= 1, ErrorKind::Validation, "--n-masks must be >= 1");
  const Manifest m = manifest_of(ctx);
  const FeatureMatrix features = load_features(features_path(ctx, m));
  const ActivationDump dump = probe_dump(ctx, m);
  ensure_out_dir(ctx);

  std::vector<const SampleIds*> lists{&features.sample_ids, &dump.sample_ids};
  const SampleIds shared = intersect_ids(lists);
  require(shared.size() >= 3, ErrorKind::Alignment, "features and activations share fewer than 3 samples");
  const CkaActivations acts(select_rows(dump.to_double(), dump.sample_ids, shared));
  const Matrix values = select_rows(features.values, features.sample_ids, shared);

  std::vector<std::optional<RedundancyScore>> scores(static_cast<std::size_t>(features.k()));
  parallel_for(scores.size(), ctx.threads, [&](std::size_t f) {
    try {
      auto score = redundancy(acts, values.col(static_cast<Eigen::Index>(f)), o.fractions, o.n_masks,
                              Rng::derive(o.common.seed, f).next_u64());
      score.feature_id = static_cast<Eigen::Index>(f);
      scores[f] = std::move(score);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
    }
  });

  std::vector<std::string> header{"feature_id"};
  for (const double fr : o.fractions) header.push_back(fraction_column("mask_", fr));
  header.emplace_back("aggregate");
  CsvWriter csv(ctx.out_dir / "redundancy.csv", header);
  std::size_t degenerate = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t f = 0; f < scores.size(); ++f) {
    csv.cell(static_cast<long long>(f));
    if (!scores[f]) ++degenerate;
    for (const double fr : o.fractions) csv.cell(scores[f] ? scores[f]->per_fraction.at(fr) : nan);
    csv.cell(scores[f] ? scores[f]->aggregate : nan);
    csv.end_row();
  }
  ctx.out << "redundancy: " << scores.size() << " features, " << o.fractions.size() << " fractions x " << o.n_masks
          << " masks";
  if (degenerate > 0) ctx.out << ", " << degenerate << " degenerate (nan)";
  ctx.out << '\n';
}

void cmd_sensitivity(const Context& ctx) {
  const auto& o = ctx.opt;
  for (const double s : o.sigmas) require(s > 0.0, ErrorKind::Validation, "sigmas must be > 0");
  require(o.n_noise == 0 || o.n_noise >= 2, ErrorKind::Validation, "--n-noise must be >= 2");
  const Manifest m = manifest_of(ctx);
  SensitivityOptions opts;
  if (!o.sigmas.empty()) {
    opts.sigmas = o.sigmas;
  } else if (!m.perturbation_sets.empty()) {
    opts.sigmas.clear();
    for (const auto& [sigma, paths] : m.perturbation_sets) opts.sigmas.push_back(sigma);
  }
  if (o.n_noise > 0) {
    opts.n_noise = o.n_noise;
  } else {
    // Every draw the manifest lists, up to the default count.
    for (const double sigma : opts.sigmas) {
      const auto it = m.perturbation_sets.find(sigma);
      require(it != m.perturbation_sets.end(), ErrorKind::Validation,
              "manifest has no perturbation set for sigma " + format_number(sigma));
      opts.n_noise = std::min(opts.n_noise, static_cast<int>(it->second.size()));
    }
  }
  const Dictionary dict = load_dictionary(dictionary_path(ctx));
  ensure_out_dir(ctx);
  opts.extract.threads = ctx.threads;
  const auto scores = sensitivity_all(m, dict, opts);

  std::vector<std::string> header{"feature_id"};
  for (const double s : opts.sigmas) header.push_back(fraction_column("sigma_", s));
  header.emplace_back("aggregate");
  CsvWriter csv(ctx.out_dir / "sensitivity.csv", header);
  for (const auto& s : scores) {
    csv.cell(static_cast<long long>(s.feature_id));
    for (const double sigma : opts.sigmas) csv.cell(s.per_sigma.at(sigma));
    csv.cell(s.aggregate);
    csv.end_row();
  }
  ctx.out << "sensitivity: " << scores.size() << " features, " << opts.sigmas.size() << " sigmas x " << opts.n_noise
          << " draws\n";
}

struct AttributionInputs {
  FeatureMatrix features;
  FoldedHead head;
};

AttributionInputs attribution_inputs(const Context& ctx, const Manifest& m) {
  const Matrix weights = head_of(m);
  const Dictionary dict = load_dictionary(dictionary_path(ctx));
  FeatureMatrix features = load_features(features_path(ctx, m));
  require(features.k() == dict.k(), ErrorKind::Shape, "feature table and dictionary disagree on k");
  return {std::move(features), fold_head(dict, weights)};
}

void cmd_importance(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.target == "predicted" || o.target == "label", ErrorKind::Validation, "--target must be 'predicted' or 'label'");
  const Manifest m = manifest_of(ctx);
  const auto inputs = attribution_inputs(ctx, m);
  if (o.class_filter)
    require(*o.class_filter >= 0 && *o.class_filter < inputs.head.class_count(), ErrorKind::Validation,
            "--class out of range");
  ensure_out_dir(ctx);
  const std::vector<int> targets =
      o.target == "label" ? labels_for(m, inputs.features.sample_ids) : predicted_classes(inputs.features, inputs.head);
  const auto report = importance(inputs.features, inputs.head, targets, o.class_filter);

  CsvWriter csv(ctx.out_dir / "importance.csv", {"feature_id", "importance", "mean_signed", "inhibitor", "frequency"});
  std::size_t inhibitors = 0;
  for (const auto& fi : report.per_feature) {
    csv.cell(static_cast<long long>(fi.feature_id)).cell(fi.importance).cell(fi.mean_signed)
        .cell(fi.inhibitor ? 1 : 0).cell(fi.frequency).end_row();
    inhibitors += fi.inhibitor;
  }
  ctx.out << "importance: " << report.per_feature.size() << " features over " << report.samples_used << " samples, "
          << inhibitors << " inhibitors\n";
}

void cmd_ablate(const Context& ctx) {
  const auto& o = ctx.opt;
  check_fraction_list(o.steps, false, "--steps");
  require(o.order == "complexity" || o.order == "importance" || o.order == "index", ErrorKind::Validation,
          "--order must be complexity, importance or index");
  const Manifest m = manifest_of(ctx);
  const auto inputs = attribution_inputs(ctx, m);
  const auto labels = labels_for(m, inputs.features.sample_ids);
  const Eigen::Index k = inputs.features.k();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  if (o.order == "complexity") {
    order = complexity_order(profiles_from_csv(ctx.out_dir / "complexity.csv"));
  } else if (o.order == "importance") {
    const auto imp = read_column(ctx.out_dir / "importance.csv", "importance");
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double ia = imp.count(a) ? imp.at(a) : 0.0;
      const double ib = imp.count(b) ? imp.at(b) : 0.0;
      return ia > ib;
    });
  }
  ensure_out_dir(ctx);
  const auto curve = support_ablation(inputs.features, inputs.head, labels, order, o.steps);
  CsvWriter csv(ctx.out_dir / "ablation.csv", {"fraction_removed", "removed", "accuracy"});
  for (const auto& p : curve) csv.cell(p.fraction_removed).cell(static_cast<long long>(p.removed)).cell(p.accuracy).end_row();
  ctx.out << "ablate: " << curve.size() << " steps by " << o.order << ", accuracy " << format_number(curve.front().accuracy)
          << " -> " << format_number(curve.back().accuracy) << '\n';
}

void cmd_cluster(const Context& ctx) {
  const auto& o = ctx.opt;
  require(o.n_clusters >= 1, ErrorKind::Validation, "--n-clusters must be >= 1");
  require(o.select_count >= 0, ErrorKind::Validation, "--select-count must be >= 0");
  const Dictionary dict = load_dictionary(dictionary_path(ctx));
  require(o.n_clusters <= dict.k(), ErrorKind::Validation,
          "--n-clusters (" + std::to_string(o.n_clusters) + ") exceeds dictionary size (" + std::to_string(dict.k()) + ")");
  const fs::path complexity_csv = ctx.out_dir / "complexity.csv";
  ensure_out_dir(ctx);

  MetaFeatureSet set = cluster_dictionary(dict, o.n_clusters, o.common.seed);
  const bool have_k = fs::exists(complexity_csv);
  if (have_k) {
    set = aggregate_complexity(std::move(set), profiles_from_csv(complexity_csv));
  } else {
    std::vector<ComplexityProfile> blank(static_cast<std::size_t>(dict.k()));
    for (std::size_t i = 0; i < blank.size(); ++i) blank[i].feature_id = static_cast<Eigen::Index>(i);
    set = aggregate_complexity(std::move(set), blank);
  }
  std::vector<int> rank_of(static_cast<std::size_t>(set.n_clusters), -1);
  const auto ranked = rank_by_complexity(set);
  for (std::size_t r = 0; r < ranked.size(); ++r) rank_of[static_cast<std::size_t>(ranked[r])] = static_cast<int>(r);
  const auto picked = select_spectrum(set, o.select_count);
  const std::set<int> selected(picked.begin(), picked.end());

  CsvWriter csv(ctx.out_dir / "clusters.csv",
                {"cluster_id", "member_count", "mean_complexity", "complexity_rank", "selected", "members"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& c : set.per_cluster) {
    std::string members;
    for (const auto f : c.members) members += (members.empty() ? "" : " ") + std::to_string(f);
    csv.cell(c.cluster_id).cell(static_cast<long long>(c.member_count))
        .cell(have_k && !c.empty ? c.mean_complexity : nan).cell(rank_of[static_cast<std::size_t>(c.cluster_id)])
        .cell(selected.count(c.cluster_id) ? 1 : 0).cell(members).end_row();
  }
  CsvWriter assign(ctx.out_dir / "cluster_assignments.csv", {"feature_id", "cluster_id"});
  for (std::size_t f = 0; f < set.assignments.size(); ++f)
    assign.cell(static_cast<long long>(f)).cell(set.assignments[f]).end_row();
  ctx.out << "cluster: " << dict.k() << " atoms -> " << set.n_clusters << " meta-features, " << picked.size()
          << " selected" << (have_k ? "" : " (no complexity.csv; means left blank)") << '\n';
}

void cmd_report(const Context& ctx) {
  require(ctx.opt.n_perm >= 1, ErrorKind::Validation, "--n-perm must be >= 1");
  struct Source {
    std::string file;
    std::string column;
    std::string name;
  };
  const std::vector<Source> sources{{"complexity.csv", "K", "K"},
                                    {"ttd.csv", "lambda", "lambda"},
                                    {"importance.csv", "importance", "importance"},
                                    {"redundancy.csv", "aggregate", "redundancy"},
                                    {"sensitivity.csv", "aggregate", "sensitivity"}};
  std::vector<std::string> names;
  std::vector<std::map<Eigen::Index, double>> columns;
  std::set<Eigen::Index> ids;
  for (const auto& s : sources) {
    const fs::path p = ctx.out_dir / s.file;
    if (!fs::exists(p)) continue;
    names.push_back(s.name);
    columns.push_back(read_column(p, s.column));
    for (const auto& [id, v] : columns.back()) ids.insert(id);
  }
  require(!names.empty(), ErrorKind::Validation, "no analysis tables found in " + ctx.out_dir.string());

  std::vector<std::string> header{"feature_id"};
  header.insert(header.end(), names.begin(), names.end());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  {
    CsvWriter csv(ctx.out_dir / "master.csv", header);
    for (const auto id : ids) {
      csv.cell(static_cast<long long>(id));
      for (const auto& col : columns) {
        const auto it = col.find(id);
        csv.cell(it == col.end() ? nan : it->second);
      }
      csv.end_row();
    }
  }

  CsvWriter corr(ctx.out_dir / "correlations.csv", {"x", "y", "n", "spearman", "p_value", "permutations"});
  const auto k_it = std::find(names.begin(), names.end(), "K");
  std::size_t printed = 0;
  if (k_it != names.end()) {
    const auto& kcol = columns[static_cast<std::size_t>(k_it - names.begin())];
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == "K") continue;
      std::vector<double> xs;
      std::vector<double> ys;
      for (const auto& [id, kv] : kcol) {
        const auto it = columns[c].find(id);
        if (it == columns[c].end() || std::isnan(kv) || std::isnan(it->second)) continue;
        xs.push_back(kv);
        ys.push_back(it->second);
      }
      if (xs.size() < 3) continue;
      const auto test = spearman_permutation_test(xs, ys, ctx.opt.n_perm, Rng::derive(ctx.opt.common.seed, c).next_u64());
      corr.cell("K").cell(names[c]).cell(static_cast<long long>(xs.size())).cell(test.rho).cell(test.p_value)
          .cell(test.permutations).end_row();
      ctx.out << "spearman(K, " << names[c] << ") = " << format_number(test.rho)
              << " (p = " << format_number(test.p_value) << ", n = " << xs.size() << ")\n";
      ++printed;
    }
  }
  ctx.out << "report: " << ids.size() << " features, columns " << names.size() << ", " << printed
          << " correlations -> " << (ctx.out_dir / "master.csv").string() << '\n';
}

// ---------------------------------------------------------------- wiring

void add_common(CLI::App* sub, Options& o, bool needs_manifest) {
  auto* opt = sub->add_option("--manifest", o.common.manifest, "Experiment manifest (JSON)");
  if (needs_manifest) opt->required();
  sub->add_option("--out", o.common.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--threads", o.common.threads, "Worker threads (default: FEATURESCOPE_THREADS or all cores)");
  sub->add_option("--seed", o.common.seed, "Random seed")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"featurescope: complexity, flow, redundancy, robustness and importance of learned features"};
  app.require_subcommand(1, 1);

  std::vector<std::pair<CLI::App*, std::function<void(const Context&)>>> commands;
  auto add = [&](const std::string& name, const std::string& help, bool needs_manifest,
                 std::function<void(const Context&)> fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, o, needs_manifest);
    commands.emplace_back(sub, std::move(fn));
    return sub;
  };

  auto* synth = add("synth", "Generate planted-feature activation dumps", false, cmd_synth);
  synth->add_option("--spec", o.spec, "Plant spec JSON")->required();

  auto* learn = add("learn-dict", "Learn a non-negative dictionary on final-layer activations", true, cmd_learn_dict);
  learn->add_option("--k", o.k, "Dictionary size (default: per-class x classes)");
  learn->add_option("--per-class", o.per_class, "Features per class when --k is omitted")->capture_default_str();
  learn->add_option("--tol", o.tol, "Relative objective decrease tolerance")->capture_default_str();
  learn->add_option("--max-iter", o.max_iter, "Maximum outer iterations")->capture_default_str();
  learn->add_option("--layer", o.layer, "Layer id (default: final layer)");
  learn->add_option("--epoch", o.epoch, "Epoch (default: final epoch)");

  auto* extract = add("extract", "Extract feature values by NNLS against a dictionary", true, cmd_extract);
  extract->add_option("--dict", o.dict, "Dictionary ACTS file (default: <out>/dictionary.acts)");
  extract->add_option("--layer", o.layer, "Layer id (default: final layer)");
  extract->add_option("--epoch", o.epoch, "Epoch (default: final epoch)");

  auto* complexity = add("complexity", "Per-layer V-information and complexity K", true, cmd_complexity);
  complexity->add_option("--features", o.features, "Feature table (default: manifest features or <out>/features.acts)");
  complexity->add_option("--epoch", o.epoch, "Epoch (default: final epoch)");
  complexity->add_option("--lambda-rel", o.common.lambda_rel, "Relative ridge strength")->capture_default_str();

  auto* ttd = add("ttd", "Per-epoch V-information and time-to-decode", true, cmd_ttd);
  ttd->add_option("--features", o.features, "Feature table");
  ttd->add_option("--lambda-rel", o.common.lambda_rel, "Relative ridge strength")->capture_default_str();

  auto* flow = add("flow", "CKA of residual and main branches with each feature", true, cmd_flow);
  flow->add_option("--features", o.features, "Feature table");
  flow->add_option("--epoch", o.epoch, "Epoch (default: final epoch)");
  flow->add_option("--select", o.select, "all | extremes (top/bottom percentile by K)")->capture_default_str();
  flow->add_option("--percentile", o.percentile, "Percentile for --select extremes")->capture_default_str();

  auto* red = add("redundancy", "Masked-CKA redundancy of each feature", true, cmd_redundancy);
  red->add_option("--features", o.features, "Feature table");
  red->add_option("--fractions", o.fractions, "Mask fractions")->delimiter(',')->capture_default_str();
  red->add_option("--n-masks", o.n_masks, "Masks per fraction")->capture_default_str();
  red->add_option("--layer", o.layer, "Layer id (default: final layer)");
  red->add_option("--epoch", o.epoch, "Epoch (default: final epoch)");

  auto* sens = add("sensitivity", "Variance of feature values under input noise", true, cmd_sensitivity);
  sens->add_option("--dict", o.dict, "Dictionary ACTS file");
  sens->add_option("--sigmas", o.sigmas, "Noise levels (default: the manifest's perturbation sets, else 0.01,0.1,0.5)")
      ->delimiter(',');
  sens->add_option("--n-noise", o.n_noise, "Noise draws per sigma (default: all listed, at most 100)");

  auto* imp = add("importance", "Gradient-input importance through the folded head", true, cmd_importance);
  imp->add_option("--features", o.features, "Feature table");
  imp->add_option("--dict", o.dict, "Dictionary ACTS file");
  imp->add_option("--target", o.target, "predicted | label")->capture_default_str();
  imp->add_option("--class", o.class_filter, "Only samples whose target is this class");

  auto* ablate = add("ablate", "Accuracy while removing features in order", true, cmd_ablate);
  ablate->add_option("--features", o.features, "Feature table");
  ablate->add_option("--dict", o.dict, "Dictionary ACTS file");
  ablate->add_option("--order", o.order, "complexity | importance | index")->capture_default_str();
  ablate->add_option("--steps", o.steps, "Fractions of features removed")->delimiter(',')->capture_default_str();

  auto* cluster = add("cluster", "K-means meta-features over dictionary atoms", false, cmd_cluster);
  cluster->add_option("--dict", o.dict, "Dictionary ACTS file");
  cluster->add_option("--n-clusters", o.n_clusters, "Number of meta-features")->capture_default_str();
  cluster->add_option("--select-count", o.select_count, "Clusters picked across the complexity spectrum")
      ->capture_default_str();

  auto* report = add("report", "Join analysis tables and test correlations with K", false, cmd_report);
  report->add_option("--n-perm", o.n_perm, "Permutations for p-values")->capture_default_str();

  std::vector<std::string> argv_storage{"featurescope"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    std::string usage;
    for (const auto* sub : app.get_subcommands({})) usage += (usage.empty() ? "" : ", ") + sub->get_name();
    err << "usage: featurescope <subcommand> [options]; subcommands: " << usage << '\n';
    return kExitValidation;
  }

  try {
    for (const auto& [sub, fn] : commands) {
      if (!sub->parsed()) continue;
      Context ctx{o, out, err, resolve_threads(o.common.threads), fs::path(o.common.out_dir)};
      require(o.common.threads >= 0, ErrorKind::Validation, "--threads must be >= 0");
      fn(ctx);
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return is_input_error(e.kind()) ? kExitValidation : kExitComputation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitComputation;
  }
  return kExitValidation;
}

}  // namespace featurescope::cli
