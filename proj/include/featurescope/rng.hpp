#pragma once

#include <cstdint>
#include <random>

namespace featurescope {

// Seeded generator with portable sampling. The standard distributions are
// implementation-defined, so draws are built directly on mt19937_64 output
// and give the same streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Deterministic child stream for (seed, a, b); used to give every parallel
  // task its own stream so results do not depend on scheduling.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);

  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace featurescope
