#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Index conventions for the products used throughout. Matrices are row-major;
// an E-valued matrix with E = R^e stores component c as a contiguous block.
namespace roughcalc::pairing {

// x in E^d (rows = e, cols = d), y in R^d: (x . y)_c = sum_l x[c][l] y[l].
inline std::vector<double> dot(std::span<const double> x, std::span<const double> y, std::size_t e) {
  const std::size_t d = y.size();
  std::vector<double> out(e, 0.0);
  for (std::size_t c = 0; c < e; ++c)
    for (std::size_t l = 0; l < d; ++l) out[c] += x[c * d + l] * y[l];
  return out;
}

// A in E^{m x n}, B in R^{m x n}: (A : B)_c = Trace(A_c B^*) = sum_ij A_c[i][j] B[i][j].
inline std::vector<double> trace(std::span<const double> a, std::span<const double> b, std::size_t e) {
  const std::size_t mn = b.size();
  std::vector<double> out(e, 0.0);
  for (std::size_t c = 0; c < e; ++c)
    for (std::size_t k = 0; k < mn; ++k) out[c] += a[c * mn + k] * b[k];
  return out;
}

// Area pairing of a Gubinelli derivative D (row l holds the derivative of the
// l-th integrand component) with a second-level increment W, (i,j) = int w^i dw^j:
//   sum_{l,k} D_c[l][k] W[k][l].
// This equals Trace(D W) and makes the compensated sum of w against its own lift
// reproduce the (i,j) convention of the second level.
inline std::vector<double> area(std::span<const double> dmat, std::span<const double> w, std::size_t e,
                                std::size_t d) {
  std::vector<double> out(e, 0.0);
  for (std::size_t c = 0; c < e; ++c)
    for (std::size_t l = 0; l < d; ++l)
      for (std::size_t k = 0; k < d; ++k) out[c] += dmat[(c * d + l) * d + k] * w[k * d + l];
  return out;
}

// A in R^{m x p}, x in R^{n x p}: (A (x) x)[i][j] = sum_k A[i][k] x[j][k].
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> x, std::size_t m,
                                    std::size_t p) {
  const std::size_t n = x.size() / p;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < p; ++k) out[i * n + j] += a[i * p + k] * x[j * p + k];
  return out;
}

// A in R^{p x q}, x in R^{m x p}, y in R^{n x q}:
//   (A (x)_2 [x, y])[i][j] = sum_{k,l} A[k][l] x[i][k] y[j][l].
inline std::vector<double> convolve2(std::span<const double> a, std::span<const double> x, std::span<const double> y,
                                     std::size_t p, std::size_t q) {
  const std::size_t m = x.size() / p;
  const std::size_t n = y.size() / q;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < p; ++k)
        for (std::size_t l = 0; l < q; ++l) out[i * n + j] += a[k * q + l] * x[i * p + k] * y[j * q + l];
  return out;
}

}  // namespace roughcalc::pairing
