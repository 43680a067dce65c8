#pragma once

// Data-parallel inner loops shared by the tensor engine. Every kernel has a
// scalar reference implementation; vectorized variants are picked once at
// startup from the host CPU and can be overridden for testing.

#include <cstddef>
#include <string_view>

namespace advshap::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

// Best ISA supported by this build and the running CPU.
Isa detect_isa();

// ISA currently used by the dispatching entry points below. Honors the
// ADVSHAP_ISA environment variable ("scalar", "avx2", "neon") on first use.
Isa active_isa();

// Returns false (and leaves the active ISA unchanged) if `isa` is not
// available on this machine.
bool set_active_isa(Isa isa);

bool isa_available(Isa isa);

// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);

// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

// y[i] += a[i] * b[i]
void fma_accumulate(const double* a, const double* b, double* y, std::size_t n);

// Per-ISA entry points; used by the equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void fma_accumulate(const double* a, const double* b, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void fma_accumulate(const double* a, const double* b, double* y, std::size_t n);
}  // namespace avx2

namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void fma_accumulate(const double* a, const double* b, double* y, std::size_t n);
}  // namespace neon

}  // namespace advshap::kernels
