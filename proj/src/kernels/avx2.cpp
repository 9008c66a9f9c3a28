#include <immintrin.h>

#include <limits>

#include "roughcalc/kernels.hpp"

namespace roughcalc::kernels::avx2 {

ScanResult anchored_residual_scan(const SoaView& x, const SoaView& w, const double* g, std::size_t s,
                                  const double* w2) {
  ScanResult best{0.0, s};
  const std::size_t n = x.n;
  if (s + 1 >= n) return best;

  __m256d best_v = _mm256_setzero_pd();
  __m256d best_i = _mm256_set1_pd(static_cast<double>(s));
  __m256d idx = _mm256_setr_pd(static_cast<double>(s + 1), static_cast<double>(s + 2),
                               static_cast<double>(s + 3), static_cast<double>(s + 4));
  const __m256d four = _mm256_set1_pd(4.0);

  std::size_t t = s + 1;
  for (; t + 4 <= n; t += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t c = 0; c < x.comps; ++c) {
      const double* xc = x.comp(c);
      __m256d r = _mm256_sub_pd(_mm256_loadu_pd(xc + t), _mm256_set1_pd(xc[s]));
      const double* gc = g + c * w.comps;
      for (std::size_t k = 0; k < w.comps; ++k) {
        const double* wk = w.comp(k);
        const __m256d dw = _mm256_sub_pd(_mm256_loadu_pd(wk + t), _mm256_set1_pd(wk[s]));
        r = _mm256_fnmadd_pd(_mm256_set1_pd(gc[k]), dw, r);
      }
      acc = _mm256_fmadd_pd(r, r, acc);
    }
    const __m256d v = _mm256_mul_pd(acc, _mm256_loadu_pd(w2 + (t - s)));
    const __m256d gt = _mm256_cmp_pd(v, best_v, _CMP_GT_OQ);
    best_v = _mm256_blendv_pd(best_v, v, gt);
    best_i = _mm256_blendv_pd(best_i, idx, gt);
    idx = _mm256_add_pd(idx, four);
  }

  alignas(32) double lane_v[4];
  alignas(32) double lane_i[4];
  _mm256_store_pd(lane_v, best_v);
  _mm256_store_pd(lane_i, best_i);
  for (int l = 0; l < 4; ++l) {
    const auto li = static_cast<std::size_t>(lane_i[l]);
    if (lane_v[l] > best.value2 || (lane_v[l] == best.value2 && lane_v[l] > 0.0 && li < best.index)) {
      best = {lane_v[l], li};
    }
  }

  for (; t < n; ++t) {
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
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t j = 0; j < terms; ++j) {
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(a[j] + i), _mm256_loadu_pd(b[j] + i), acc);
    }
    _mm256_storeu_pd(out + i, acc);
  }
  for (; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < terms; ++j) acc += a[j][i] * b[j][i];
    out[i] = acc;
  }
}

}  // namespace roughcalc::kernels::avx2
