#include <array>
#include <vector>

#include "roughcalc/kernels.hpp"

namespace roughcalc::kernels::scalar {

ScanResult anchored_residual_scan(const SoaView& x, const SoaView& w, const double* g, std::size_t s,
                                  const double* w2) {
  ScanResult best{0.0, s};
  const std::size_t n = x.n;
  if (s + 1 >= n) return best;
  for (std::size_t t = s + 1; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.comps; ++c) {
      double r = x.comp(c)[t] - x.comp(c)[s];
      const double* gc = g + c * w.comps;
      for (std::size_t k = 0; k < w.comps; ++k) r -= gc[k] * (w.comp(k)[t] - w.comp(k)[s]);
      acc += r * r;
    }
    const double v = acc * w2[t - s];
    if (v > best.value2) best = {v, t};
  }
  return best;
}

void paired_dot(const double* const* a, const double* const* b, std::size_t terms, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < terms; ++j) acc += a[j][i] * b[j][i];
    out[i] = acc;
  }
}

}  // namespace roughcalc::kernels::scalar
