#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "featurescope/rng.hpp"
#include "featurescope/types.hpp"

namespace fstest {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("featurescope_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline featurescope::Matrix gaussian(featurescope::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  featurescope::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline featurescope::Matrix uniform(featurescope::Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = 0.0,
                                    double hi = 1.0) {
  featurescope::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline featurescope::Vector gaussian_vector(featurescope::Rng& rng, Eigen::Index n) {
  featurescope::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
inline featurescope::Matrix orthogonal(featurescope::Rng& rng, Eigen::Index d) {
  const Eigen::MatrixXd g = gaussian(rng, d, d);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return Eigen::MatrixXd(qr.householderQ());
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fstest
