#pragma once

// Inner-loop arithmetic kernels. Each kernel has a scalar reference
// implementation and, where the CPU supports it, an AVX2+FMA variant. The
// variant is selected once at first use; FEATURESCOPE_ISA=scalar forces the
// reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace featurescope::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa);

Isa active_isa();
bool isa_available(Isa isa);
// Overrides runtime selection; throws std::invalid_argument when the ISA is
// not available on this CPU or in this build.
void set_isa(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double sum_squares(std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
double sum_squares(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
double sum_squares(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

}  // namespace featurescope::kernels
