#pragma once

#include <cstddef>

// Hot loops with a portable scalar reference and an AVX2/FMA variant picked at
// runtime. ROUGHCALC_SIMD=scalar forces the reference path.
namespace roughcalc::kernels {

enum class Isa { kScalar, kAvx2 };

bool avx2_available();
Isa active_isa();
// Overrides the runtime choice (tests, benchmarks). Throws if the ISA is unavailable.
void set_isa(Isa isa);
const char* isa_name(Isa isa);

// Component-major block: component c occupies data[c*stride .. c*stride + n).
struct SoaView {
  const double* data = nullptr;
  std::size_t comps = 0;
  std::size_t n = 0;
  std::size_t stride = 0;
  const double* comp(std::size_t c) const { return data + c * stride; }
};

struct ScanResult {
  double value2 = 0.0;  // weighted squared norm at the maximiser
  std::size_t index = 0;
};

// For a fixed anchor s, the maximum over t in (s, n) of
//   w2[t-s] * sum_c ( X_c[t] - X_c[s] - sum_k G[c*W.comps + k] * (W_k[t] - W_k[s]) )^2.
// Ties resolve to the smallest t. Returns value2 = 0, index = s when s+1 >= n.
ScanResult anchored_residual_scan(const SoaView& x, const SoaView& w, const double* g, std::size_t s,
                                  const double* w2);

// out[i] = sum_j a[j][i] * b[j][i] for i < n.
void paired_dot(const double* const* a, const double* const* b, std::size_t terms, std::size_t n, double* out);

namespace scalar {
ScanResult anchored_residual_scan(const SoaView& x, const SoaView& w, const double* g, std::size_t s,
                                  const double* w2);
void paired_dot(const double* const* a, const double* const* b, std::size_t terms, std::size_t n, double* out);
}  // namespace scalar

namespace avx2 {
ScanResult anchored_residual_scan(const SoaView& x, const SoaView& w, const double* g, std::size_t s,
                                  const double* w2);
void paired_dot(const double* const* a, const double* const* b, std::size_t terms, std::size_t n, double* out);
}  // namespace avx2

}  // namespace roughcalc::kernels
