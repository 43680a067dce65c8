#include <atomic>
#include <cstdlib>
#include <string>

#include "advshap/kernels.hpp"

namespace advshap::kernels {
namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*fma_accumulate)(const double*, const double*, double*, std::size_t);
};

constexpr Table kScalarTable{&scalar::dot, &scalar::axpy, &scalar::fma_accumulate};
constexpr Table kAvx2Table{&avx2::dot, &avx2::axpy, &avx2::fma_accumulate};
constexpr Table kNeonTable{&neon::dot, &neon::axpy, &neon::fma_accumulate};

const Table& table_for(Isa isa) {
  switch (isa) {
    case Isa::kAvx2: return kAvx2Table;
    case Isa::kNeon: return kNeonTable;
    case Isa::kScalar: break;
  }
  return kScalarTable;
}

Isa initial_isa() {
  Isa isa = detect_isa();
  if (const char* env = std::getenv("ADVSHAP_ISA")) {
    const std::string want(env);
    if (want == "scalar") isa = Isa::kScalar;
    else if (want == "avx2" && isa_available(Isa::kAvx2)) isa = Isa::kAvx2;
    else if (want == "neon" && isa_available(Isa::kNeon)) isa = Isa::kNeon;
  }
  return isa;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
    case Isa::kScalar: break;
  }
  return "scalar";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(ADVSHAP_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::kNeon:
#if defined(__aarch64__) && defined(__ARM_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() {
  if (isa_available(Isa::kAvx2)) return Isa::kAvx2;
  if (isa_available(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

bool set_active_isa(Isa isa) {
  if (!isa_available(isa)) return false;
  active().store(isa, std::memory_order_relaxed);
  return true;
}

double dot(const double* a, const double* b, std::size_t n) {
  return table_for(active_isa()).dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  table_for(active_isa()).axpy(alpha, x, y, n);
}

void fma_accumulate(const double* a, const double* b, double* y, std::size_t n) {
  table_for(active_isa()).fma_accumulate(a, b, y, n);
}

}  // namespace advshap::kernels
