#include <atomic>
#include <cstdlib>
#include <string>

#include "roughcalc/errors.hpp"
#include "roughcalc/kernels.hpp"

namespace roughcalc::kernels {

namespace {

Isa initial_isa() {
  const char* env = std::getenv("ROUGHCALC_SIMD");
  if (env != nullptr && std::string(env) == "scalar") return Isa::kScalar;
  return avx2_available() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !avx2_available()) throw Error(ErrorKind::kUnsupported, "AVX2/FMA not available on this CPU");
  current().store(isa, std::memory_order_relaxed);
}

const char* isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

ScanResult anchored_residual_scan(const SoaView& x, const SoaView& w, const double* g, std::size_t s,
                                  const double* w2) {
#if defined(__x86_64__) || defined(__i386__)
  if (active_isa() == Isa::kAvx2) return avx2::anchored_residual_scan(x, w, g, s, w2);
#endif
  return scalar::anchored_residual_scan(x, w, g, s, w2);
}

void paired_dot(const double* const* a, const double* const* b, std::size_t terms, std::size_t n, double* out) {
#if defined(__x86_64__) || defined(__i386__)
  if (active_isa() == Isa::kAvx2) return avx2::paired_dot(a, b, terms, n, out);
#endif
  scalar::paired_dot(a, b, terms, n, out);
}

}  // namespace roughcalc::kernels
