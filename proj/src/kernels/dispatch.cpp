#include <cassert>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "featurescope/kernels.hpp"

namespace featurescope::kernels {

namespace {

struct Table {
  Isa isa;
  double (*dot)(const double*, const double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
  double (*sum_squares)(const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
};

constexpr Table kScalar{Isa::Scalar, scalar::dot, scalar::squared_distance, scalar::sum_squares,
                        scalar::axpy};
#if FEATURESCOPE_HAVE_AVX2
constexpr Table kAvx2{Isa::Avx2, avx2::dot, avx2::squared_distance, avx2::sum_squares,
                      avx2::axpy};
#endif

bool cpu_has_avx2() {
#if FEATURESCOPE_HAVE_AVX2 && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* table_for(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return &kScalar;
    case Isa::Avx2:
#if FEATURESCOPE_HAVE_AVX2
      if (cpu_has_avx2()) return &kAvx2;
#endif
      return nullptr;
  }
  return nullptr;
}

const Table* select_default() {
  if (const char* env = std::getenv("FEATURESCOPE_ISA")) {
    const std::string requested(env);
    if (requested == "scalar") return &kScalar;
  }
  if (const Table* t = table_for(Isa::Avx2)) return t;
  return &kScalar;
}

const Table*& current() {
  static const Table* table = select_default();
  return table;
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

Isa active_isa() { return current()->isa; }

bool isa_available(Isa isa) { return table_for(isa) != nullptr; }

void set_isa(Isa isa) {
  const Table* t = table_for(isa);
  if (t == nullptr) throw std::invalid_argument("kernel ISA not available: " + std::string(to_string(isa)));
  current() = t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return current()->dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return current()->squared_distance(a.data(), b.data(), a.size());
}

double sum_squares(std::span<const double> a) { return current()->sum_squares(a.data(), a.size()); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  current()->axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace featurescope::kernels
