#include <doctest.h>

#include <cmath>
#include <vector>

#include "roughcalc/counter_rng.hpp"
#include "roughcalc/grid.hpp"
#include "roughcalc/kernels.hpp"
#include "roughcalc/rough_path.hpp"

using namespace roughcalc;
namespace k = roughcalc::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = counter_normal(seed, i, 0, 0);
  return v;
}

struct IsaGuard {
  k::Isa saved = k::active_isa();
  ~IsaGuard() { k::set_isa(saved); }
};

}  // namespace

TEST_CASE("scalar reference scan on a hand case") {
  // X = (0, 1, 3), no W, unit weights: max of (X_t - X_0)^2 is 9 at t = 2.
  const std::vector<double> x{0.0, 1.0, 3.0};
  const std::vector<double> w2{0.0, 1.0, 1.0};
  const k::SoaView xv{x.data(), 1, 3, 3};
  const auto r = k::scalar::anchored_residual_scan(xv, {}, nullptr, 0, w2.data());
  CHECK(r.value2 == 9.0);
  CHECK(r.index == 2);
  // With W = X and G = 1 the residual vanishes.
  const double g = 1.0;
  const auto z = k::scalar::anchored_residual_scan(xv, xv, &g, 0, w2.data());
  CHECK(z.value2 == 0.0);
  CHECK(z.index == 0);
}

TEST_CASE("AVX2 kernels agree with the scalar reference") {
  if (!k::avx2_available()) {
    MESSAGE("AVX2 not available; equivalence test skipped");
    return;
  }
  for (std::size_t n : {1u, 2u, 3u, 5u, 8u, 13u, 64u, 257u, 1031u})
    for (std::size_t xc : {1u, 2u, 4u, 9u})
      for (std::size_t wc : {0u, 1u, 3u}) {
        const auto x = noise(xc * n, 100 + n + xc);
        const auto w = noise(wc * n, 200 + n + wc);
        const auto g = noise(xc * wc + 1, 300 + xc + wc);
        std::vector<double> w2(n);
        for (std::size_t i = 1; i < n; ++i) w2[i] = std::pow(static_cast<double>(i) / n, -0.9);
        const k::SoaView xv{x.data(), xc, n, n};
        const k::SoaView wv{w.data(), wc, n, n};
        for (std::size_t s : {std::size_t{0}, n / 3, n > 0 ? n - 1 : 0}) {
          const auto a = k::scalar::anchored_residual_scan(xv, wv, g.data(), s, w2.data());
          const auto b = k::avx2::anchored_residual_scan(xv, wv, g.data(), s, w2.data());
          CHECK(b.value2 == doctest::Approx(a.value2).epsilon(1e-12));
          CHECK(b.index == a.index);
        }
      }
  for (std::size_t n : {0u, 1u, 4u, 7u, 1000u})
    for (std::size_t terms : {1u, 3u, 10u}) {
      std::vector<std::vector<double>> a(terms), b(terms);
      std::vector<const double*> pa, pb;
      for (std::size_t j = 0; j < terms; ++j) {
        a[j] = noise(n, 400 + j);
        b[j] = noise(n, 500 + j);
        pa.push_back(a[j].data());
        pb.push_back(b[j].data());
      }
      std::vector<double> o1(n), o2(n);
      k::scalar::paired_dot(pa.data(), pb.data(), terms, n, o1.data());
      k::avx2::paired_dot(pa.data(), pb.data(), terms, n, o2.data());
      for (std::size_t i = 0; i < n; ++i) CHECK(o2[i] == doctest::Approx(o1[i]).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("norms agree across dispatch targets") {
  if (!k::avx2_available()) return;
  IsaGuard guard;
  const Grid g = Grid::dyadic(0.0, 1.0, 11);
  const RoughPath rp = lift_brownian_ito(3, 2, g, 2);
  k::set_isa(k::Isa::kScalar);
  const auto h1 = holder_norm_located(rp.omega(), 0.449);
  const auto t1 = two_param_holder_norm(rp.second(), rp.omega(), 0.898);
  k::set_isa(k::Isa::kAvx2);
  const auto h2 = holder_norm_located(rp.omega(), 0.449);
  const auto t2 = two_param_holder_norm(rp.second(), rp.omega(), 0.898);
  CHECK(h2.value == doctest::Approx(h1.value).epsilon(1e-12));
  CHECK(h2.s == h1.s);
  CHECK(h2.t == h1.t);
  CHECK(t2.value == doctest::Approx(t1.value).epsilon(1e-10));
}
