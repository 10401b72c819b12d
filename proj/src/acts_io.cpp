#include "featurescope/acts_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "featurescope/error.hpp"

namespace featurescope {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'C', 'T', 'S'};
constexpr std::uint8_t kVersion = 1;

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  template <typename T>
  void little(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buffer_.push_back(static_cast<char>(u & 0xFF));
      u = static_cast<U>(u >> 8);
    }
  }
  const std::vector<char>& buffer() const { return buffer_; }

 private:
  std::vector<char> buffer_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& data, const fs::path& path) : data_(data), path_(path) {}

  bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n) const {
    if (!has(n)) fail(ErrorKind::Corruption, "truncated ACTS file: " + path_.string());
  }
  template <typename T>
  T little() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u = static_cast<U>(u | (static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i)));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  std::string string(std::size_t n) {
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  const std::vector<char>& data_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string relative_to(const fs::path& base, const fs::path& p) {
  if (base.empty()) return p.generic_string();
  std::error_code ec;
  const fs::path rel = fs::relative(p, base, ec);
  return ec || rel.empty() ? p.generic_string() : rel.generic_string();
}

}  // namespace

std::string_view to_string(Branch branch) {
  switch (branch) {
    case Branch::Residual: return "residual";
    case Branch::Main: return "main";
    case Branch::Combined: return "combined";
  }
  return "combined";
}

Branch parse_branch(std::string_view text) {
  if (text == "residual") return Branch::Residual;
  if (text == "main") return Branch::Main;
  if (text == "combined") return Branch::Combined;
  fail(ErrorKind::Validation, "unknown branch '" + std::string(text) + "'");
}

void validate(const ActivationDump& dump) {
  require(dump.n_samples() >= 2, ErrorKind::Validation,
          "dump '" + dump.layer_id + "' needs at least 2 samples, has " +
              std::to_string(dump.n_samples()));
  require(dump.n_units() >= 1, ErrorKind::Validation, "dump '" + dump.layer_id + "' has no units");
  require(static_cast<Eigen::Index>(dump.sample_ids.size()) == dump.n_samples(),
          ErrorKind::Validation, "dump '" + dump.layer_id + "': sample_ids length mismatch");
  require(dump.layer_id.size() <= 0xFFFF, ErrorKind::Validation, "layer_id too long");
  for (std::size_t i = 1; i < dump.sample_ids.size(); ++i)
    require(dump.sample_ids[i - 1] < dump.sample_ids[i], ErrorKind::Validation,
            "dump '" + dump.layer_id + "': sample_ids not strictly increasing");
  require(dump.data.allFinite(), ErrorKind::Validation,
          "dump '" + dump.layer_id + "' contains non-finite entries");
}

void write_dump(const ActivationDump& dump, const fs::path& path) {
  validate(dump);
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.little<std::uint8_t>(kVersion);
  w.little<std::uint8_t>(static_cast<std::uint8_t>(dump.branch));
  w.little<std::uint16_t>(static_cast<std::uint16_t>(dump.layer_id.size()));
  w.bytes(dump.layer_id.data(), dump.layer_id.size());
  w.little<std::uint32_t>(dump.epoch);
  w.little<std::uint64_t>(static_cast<std::uint64_t>(dump.n_samples()));
  w.little<std::uint64_t>(static_cast<std::uint64_t>(dump.n_units()));
  for (const auto id : dump.sample_ids) w.little<std::int64_t>(id);
  const float* values = dump.data.data();
  for (Eigen::Index i = 0; i < dump.data.size(); ++i) w.little<std::uint32_t>(std::bit_cast<std::uint32_t>(values[i]));

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

ActivationDump read_dump(const fs::path& path) {
  const std::vector<char> bytes = slurp(path);
  ByteReader r(bytes, path);
  if (!r.has(4) || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    fail(ErrorKind::Format, "not an ACTS file (bad magic): " + path.string());
  r.string(4);
  const auto version = r.little<std::uint8_t>();
  if (version != kVersion)
    fail(ErrorKind::Format, "unsupported ACTS version " + std::to_string(version) + ": " + path.string());
  const auto branch_code = r.little<std::uint8_t>();
  if (branch_code > 2) fail(ErrorKind::Format, "bad branch code in " + path.string());

  ActivationDump dump;
  dump.branch = static_cast<Branch>(branch_code);
  dump.layer_id = r.string(r.little<std::uint16_t>());
  dump.epoch = r.little<std::uint32_t>();
  const auto n = r.little<std::uint64_t>();
  const auto u = r.little<std::uint64_t>();
  // Size check before allocating: header counts must match the file length.
  const std::uint64_t expected = 8 * n + 4 * n * u;
  if (n > (1ULL << 40) || u > (1ULL << 40) || r.remaining() != expected)
    fail(ErrorKind::Corruption, "ACTS size mismatch (expected " + std::to_string(expected) +
                                    " bytes after header, found " + std::to_string(r.remaining()) +
                                    "): " + path.string());
  dump.sample_ids.resize(n);
  for (auto& id : dump.sample_ids) id = r.little<std::int64_t>();
  dump.data.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(u));
  float* values = dump.data.data();
  for (Eigen::Index i = 0; i < dump.data.size(); ++i) values[i] = std::bit_cast<float>(r.little<std::uint32_t>());
  validate(dump);
  return dump;
}

SampleIds intersect_ids(std::span<const SampleIds* const> lists) {
  if (lists.empty()) return {};
  SampleIds shared = *lists.front();
  for (std::size_t i = 1; i < lists.size(); ++i) {
    SampleIds next;
    std::set_intersection(shared.begin(), shared.end(), lists[i]->begin(), lists[i]->end(),
                          std::back_inserter(next));
    shared = std::move(next);
  }
  return shared;
}

std::vector<Eigen::Index> row_positions(const SampleIds& ids, const SampleIds& wanted) {
  std::vector<Eigen::Index> rows;
  rows.reserve(wanted.size());
  auto it = ids.begin();
  for (const auto id : wanted) {
    it = std::lower_bound(it, ids.end(), id);
    if (it == ids.end() || *it != id)
      fail(ErrorKind::Alignment, "sample id " + std::to_string(id) + " missing");
    rows.push_back(static_cast<Eigen::Index>(it - ids.begin()));
  }
  return rows;
}

std::vector<ActivationDump> align_samples(std::vector<ActivationDump> dumps) {
  require(!dumps.empty(), ErrorKind::Argument, "align_samples needs at least one dump");
  std::vector<const SampleIds*> lists;
  for (const auto& d : dumps) lists.push_back(&d.sample_ids);
  const SampleIds shared = intersect_ids(lists);
  require(shared.size() >= 2, ErrorKind::Alignment,
          "dumps share " + std::to_string(shared.size()) + " sample ids; at least 2 required");
  for (auto& d : dumps) {
    if (d.sample_ids == shared) continue;
    const auto rows = row_positions(d.sample_ids, shared);
    MatrixF restricted(static_cast<Eigen::Index>(rows.size()), d.data.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) restricted.row(static_cast<Eigen::Index>(i)) = d.data.row(rows[i]);
    d.data = std::move(restricted);
    d.sample_ids = shared;
  }
  return dumps;
}

const fs::path& Manifest::path_for(const DumpKey& key) const {
  const auto it = dump_paths.find(key);
  if (it == dump_paths.end())
    fail(ErrorKind::Manifest, "manifest has no dump for layer '" + key.layer_id + "', branch " +
                                  std::string(to_string(key.branch)) + ", epoch " +
                                  std::to_string(key.epoch));
  return it->second;
}

ActivationDump Manifest::load(const DumpKey& key) const {
  const fs::path& path = path_for(key);
  ActivationDump dump = read_dump(path);
  if (dump.layer_id != key.layer_id || dump.branch != key.branch || dump.epoch != key.epoch)
    fail(ErrorKind::Manifest, "dump header of " + path.string() + " does not match its manifest entry");
  return dump;
}

Manifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Manifest, "manifest not found: " + path.string());
  json doc;
  try {
    std::ifstream in(path);
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Manifest, "cannot parse manifest " + path.string() + ": " + e.what());
  }

  Manifest m;
  m.base_dir = path.parent_path();
  try {
    m.layers = doc.at("layers").get<std::vector<std::string>>();
    m.epochs = doc.at("epochs").get<std::vector<std::uint32_t>>();
    require(!m.layers.empty(), ErrorKind::Manifest, "manifest declares no layers");
    require(!m.epochs.empty(), ErrorKind::Manifest, "manifest declares no epochs");
    {
      auto sorted = m.layers;
      std::sort(sorted.begin(), sorted.end());
      require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorKind::Manifest,
              "manifest layer ids are not unique");
    }
    for (std::size_t i = 1; i < m.epochs.size(); ++i)
      require(m.epochs[i - 1] < m.epochs[i], ErrorKind::Manifest, "manifest epochs must be strictly increasing");

    for (const auto& entry : doc.at("dumps")) {
      DumpKey key{entry.at("layer").get<std::string>(),
                  parse_branch(entry.at("branch").get<std::string>()),
                  entry.at("epoch").get<std::uint32_t>()};
      require(std::find(m.layers.begin(), m.layers.end(), key.layer_id) != m.layers.end(),
              ErrorKind::Manifest, "dump refers to undeclared layer '" + key.layer_id + "'");
      require(std::find(m.epochs.begin(), m.epochs.end(), key.epoch) != m.epochs.end(),
              ErrorKind::Manifest, "dump refers to undeclared epoch " + std::to_string(key.epoch));
      const fs::path p = resolve(m.base_dir, entry.at("path").get<std::string>());
      require(fs::exists(p), ErrorKind::Manifest, "missing dump file: " + p.string());
      require(m.dump_paths.emplace(key, p).second, ErrorKind::Manifest,
              "duplicate dump entry for layer '" + key.layer_id + "'");
    }
    if (doc.contains("perturbations")) {
      for (const auto& set : doc.at("perturbations")) {
        const double sigma = set.at("sigma").get<double>();
        require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::Manifest, "perturbation sigma must be > 0");
        std::vector<fs::path> paths;
        for (const auto& p : set.at("paths")) {
          paths.push_back(resolve(m.base_dir, p.get<std::string>()));
          require(fs::exists(paths.back()), ErrorKind::Manifest, "missing perturbation dump: " + paths.back().string());
        }
        m.perturbation_sets[sigma] = std::move(paths);
      }
    }
    auto optional_path = [&](const char* field) -> std::optional<fs::path> {
      if (!doc.contains(field) || doc.at(field).is_null()) return std::nullopt;
      const fs::path p = resolve(m.base_dir, doc.at(field).get<std::string>());
      require(fs::exists(p), ErrorKind::Manifest, std::string("missing ") + field + " file: " + p.string());
      return p;
    };
    m.head_weights = optional_path("head_weights");
    m.labels = optional_path("labels");
    m.features = optional_path("features");
  } catch (const json::exception& e) {
    fail(ErrorKind::Manifest, "invalid manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  const fs::path base = path.parent_path();
  json doc;
  doc["version"] = 1;
  doc["layers"] = m.layers;
  doc["epochs"] = m.epochs;
  json dumps = json::array();
  // Forward order, then branch, then epoch, for stable diffs.
  for (const auto& layer : m.layers)
    for (const auto& [key, p] : m.dump_paths)
      if (key.layer_id == layer)
        dumps.push_back({{"layer", key.layer_id},
                         {"branch", std::string(to_string(key.branch))},
                         {"epoch", key.epoch},
                         {"path", relative_to(base, p)}});
  doc["dumps"] = std::move(dumps);
  if (!m.perturbation_sets.empty()) {
    json sets = json::array();
    for (const auto& [sigma, paths] : m.perturbation_sets) {
      json list = json::array();
      for (const auto& p : paths) list.push_back(relative_to(base, p));
      sets.push_back({{"sigma", sigma}, {"paths", std::move(list)}});
    }
    doc["perturbations"] = std::move(sets);
  }
  if (m.head_weights) doc["head_weights"] = relative_to(base, *m.head_weights);
  if (m.labels) doc["labels"] = relative_to(base, *m.labels);
  if (m.features) doc["features"] = relative_to(base, *m.features);

  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

Matrix read_head_weights(const fs::path& path) {
  json doc;
  try {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    doc = json::parse(in);
    const auto d = doc.at("n_units").get<Eigen::Index>();
    const auto c = doc.at("n_classes").get<Eigen::Index>();
    const auto& rows = doc.at("weights");
    require(d >= 1 && c >= 1 && static_cast<Eigen::Index>(rows.size()) == d, ErrorKind::Shape,
            "head weights in " + path.string() + " do not match n_units x n_classes");
    Matrix w(d, c);
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto& row = rows.at(static_cast<std::size_t>(i));
      require(static_cast<Eigen::Index>(row.size()) == c, ErrorKind::Shape,
              "head weight row " + std::to_string(i) + " has wrong length");
      for (Eigen::Index j = 0; j < c; ++j) w(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
    }
    require(w.allFinite(), ErrorKind::Validation, "non-finite head weights in " + path.string());
    return w;
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "invalid head weights " + path.string() + ": " + e.what());
  }
}

void write_head_weights(const Matrix& weights, const fs::path& path) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < weights.cols(); ++j) row.push_back(weights(i, j));
    rows.push_back(std::move(row));
  }
  const json doc = {{"n_units", weights.rows()}, {"n_classes", weights.cols()}, {"weights", rows}};
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump() << '\n';
}

std::map<std::int64_t, int> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open labels " + path.string());
  std::string line;
  std::getline(in, line);
  require(line.rfind("sample_id,label", 0) == 0, ErrorKind::Format,
          "labels file must start with header 'sample_id,label': " + path.string());
  std::map<std::int64_t, int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::int64_t id = 0;
    int label = 0;
    char comma = 0;
    if (!(fields >> id >> comma >> label) || comma != ',')
      fail(ErrorKind::Format, "bad labels line " + std::to_string(lineno) + " in " + path.string());
    labels[id] = label;
  }
  return labels;
}

void write_labels(const SampleIds& ids, std::span<const int> labels, const fs::path& path) {
  require(ids.size() == labels.size(), ErrorKind::Shape, "labels and ids differ in length");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "sample_id,label\n";
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << labels[i] << '\n';
}

}  // namespace featurescope
