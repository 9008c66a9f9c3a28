#include "scan.hpp"

#include <cmath>

#include "roughcalc/kernels.hpp"

namespace roughcalc::detail {

namespace {

std::vector<double> strided_soa(const std::vector<double>& node_major, std::size_t dim,
                                std::size_t stride, std::size_t count) {
  std::vector<double> out(count * dim);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < dim; ++c) out[c * count + i] = node_major[i * stride * dim + c];
  return out;
}

}  // namespace

NormResult anchored_sup(const Grid& grid, const std::vector<double>& x, std::size_t xc, const std::vector<double>& w,
                        std::size_t wc, const std::function<void(std::size_t, double*)>& fill_g, double exponent,
                        Stride stride) {
  require(exponent > 0.0 && exponent <= 1.0, ErrorKind::kParameter, "Hoelder exponent must lie in (0, 1]");
  require(grid.nodes() >= 2, ErrorKind::kDegenerateInput, "Hoelder norm needs at least two nodes");
  const std::size_t st = resolve_stride(grid, stride);
  const std::size_t count = (grid.nodes() - 1) / st + 1;
  const std::vector<double> xs = strided_soa(x, xc, st, count);
  const std::vector<double> ws = wc > 0 ? strided_soa(w, wc, st, count) : std::vector<double>{};
  std::vector<double> w2(count, 0.0);
  const double h = grid.h();
  for (std::size_t k = 1; k < count; ++k) w2[k] = std::pow(static_cast<double>(k * st) * h, -2.0 * exponent);
  const kernels::SoaView xv{xs.data(), xc, count, count};
  const kernels::SoaView wv{ws.data(), wc, count, count};
  std::vector<double> g(xc * wc, 0.0);
  NormResult best;
  double best2 = 0.0;
  for (std::size_t s = 0; s + 1 < count; ++s) {
    if (wc > 0) fill_g(s * st, g.data());
    const auto r = kernels::anchored_residual_scan(xv, wv, g.data(), s, w2.data());
    if (r.value2 > best2) {
      best2 = r.value2;
      best = {std::sqrt(r.value2), s * st, r.index * st};
    }
  }
  return best;
}

}  // namespace roughcalc::detail
