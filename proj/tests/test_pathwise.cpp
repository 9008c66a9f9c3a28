#include <doctest.h>

#include <cmath>

#include "roughcalc/pathwise.hpp"

using namespace roughcalc;

namespace {

RoughPathPtr share(RoughPath rp) { return std::make_shared<const RoughPath>(std::move(rp)); }

// theta = w^p on a 1-d driver, with D_t theta = 0.
SecondOrderControlled power_of_driver(const RoughPathPtr& base, int p) {
  return SecondOrderControlled::of_function(base, 1, 1,
                                            [p](std::span<const double> w, std::span<double> v, std::span<double> j,
                                                std::span<double> h) {
                                              v[0] = std::pow(w[0], p);
                                              j[0] = p * std::pow(w[0], p - 1);
                                              h[0] = p > 1 ? p * (p - 1) * std::pow(w[0], p - 2) : 0.0;
                                            });
}

double max_node_gap(const ControlledPath& a, const ControlledPath& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.grid().nodes(); ++i)
    for (std::size_t v = 0; v < a.size(); ++v) worst = std::max(worst, std::abs(a.value(i)[v] - b.value(i)[v]));
  return worst;
}

}  // namespace

TEST_CASE("compose with the identity returns the path") {
  const auto base = share(lift_brownian_ito(3, 2, Grid::dyadic(0.0, 1.0, 8), 1));
  const ControlledPath theta = ControlledPath::of_driver(base);
  const BundlePtr id = affine_bundle({2, 2, 1, 2}, {1, 0, 0, 1}, {});
  const ControlledPath eta = compose(*id, theta);
  for (std::size_t i = 0; i < base->grid().nodes(); i += 17) {
    for (std::size_t v = 0; v < 2; ++v) CHECK(eta.value(i)[v] == theta.value(i)[v]);
    for (std::size_t q = 0; q < 4; ++q) CHECK(eta.derivative(i)[q] == theta.derivative(i)[q]);
  }
}

TEST_CASE("compose with a y-free time function") {
  const auto base = share(lift_brownian_ito(3, 1, Grid::dyadic(0.0, 1.0, 6), 1));
  CoefficientBundle g;
  g.name = "ct";
  g.regularity = Regularity::kC33;
  g.uses_path = true;
  g.value = [](const TimePoint& tp, std::span<const double>, std::span<double> out) { out[0] = 2.5 * tp.t; };
  g.dy = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  g.dyy = g.dy;
  g.path = [](const TimePoint&, std::span<const double>, std::span<double> out) { out[0] = 0.25; };
  const ControlledPath eta = compose(*register_bundle(g), ControlledPath::of_driver(base));
  CHECK(eta.value(64)[0] == doctest::Approx(2.5));
  CHECK(eta.derivative(10)[0] == doctest::Approx(0.25));
}

TEST_CASE("compose refuses weak regularity tags") {
  const auto base = share(lift_brownian_ito(3, 1, Grid::dyadic(0.0, 1.0, 4), 1));
  CoefficientBundle g;
  g.name = "weak";
  g.regularity = Regularity::kC2;
  g.path_free = true;
  g.value = [](const TimePoint&, std::span<const double> y, std::span<double> out) { out[0] = y[0]; };
  g.dy = [](const TimePoint&, std::span<const double>, std::span<double> out) { out[0] = 1.0; };
  g.dyy = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  try {
    compose(*register_bundle(g), ControlledPath::of_driver(base));
    FAIL("expected a capability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCapability);
  }
}

TEST_CASE("squared Brownian path: chain-rule derivative and remainder order") {
  const auto base = share(lift_brownian_ito(11, 1, Grid::dyadic(0.0, 1.0, 14), 2));
  const ControlledPath theta = ControlledPath::of_driver(base);
  const ControlledPath eta = compose(*poly_bundle({1, 1, 1, 1}, {0, 0, 1}), theta);
  for (std::size_t i = 0; i < base->grid().nodes(); i += 511)
    CHECK(eta.derivative(i)[0] == doctest::Approx(2 * theta.value(i)[0]));
  const RemainderReport rep = remainder_order(eta);
  CHECK(rep.profile.fit.order >= rep.threshold);
  CHECK(rep.pass);
}

TEST_CASE("second-order composition: constant-a example") {
  const auto base = share(lift_brownian_ito(2, 2, Grid::dyadic(0.0, 1.0, 8), 1));
  const double a0 = 0.7, a1 = -1.3;
  const ControlledPath first = ControlledPath::of_function(
      base, 1, 1, [&](double, std::span<const double> w, std::span<double> v, std::span<double> jac) {
        v[0] = a0 * w[0] + a1 * w[1];
        jac[0] = a0;
        jac[1] = a1;
      });
  const std::size_t nodes = base->grid().nodes();
  const auto theta = SecondOrderControlled::from_ab(first, std::vector<double>(nodes * 4, 0.0),
                                                    std::vector<double>(nodes * 4, 0.0));
  const auto eta = compose_second_order(*poly_bundle({1, 1, 1, 2}, {0, 0, 1}), theta);
  const double a[2] = {a0, a1};
  for (std::size_t i = 0; i < nodes; i += 13) {
    for (std::size_t q = 0; q < 4; ++q) {
      CHECK(eta.time_part(i)[q] == doctest::Approx(0.0));
      CHECK(eta.second(i)[q] == doctest::Approx(2 * a[q / 2] * a[q % 2]));
    }
    CHECK(eta.first().derivative(i)[0] == doctest::Approx(2 * first.value(i)[0] * a0));
  }
  CHECK(eta.max_time_asymmetry() < 1e-12);
}

TEST_CASE("second-order composition: identity passes data through, missing D_t is refused") {
  const auto base = share(lift_brownian_ito(2, 1, Grid::dyadic(0.0, 1.0, 8), 1));
  const auto theta = power_of_driver(base, 3);
  const auto eta = compose_second_order(*affine_bundle({1, 1, 1, 1}, {1}, {}), theta);
  for (std::size_t i = 0; i < base->grid().nodes(); i += 7) {
    CHECK(eta.second(i)[0] == theta.second(i)[0]);
    CHECK(eta.time_part(i)[0] == theta.time_part(i)[0]);
    CHECK(eta.first().value(i)[0] == theta.first().value(i)[0]);
  }
  CHECK_THROWS_AS(compose_second_order(*adapted_lipschitz_bundle({1, 1, 1, 1}, 0.5, 2.0), theta), Error);
}

TEST_CASE("D_t of a sum of compositions is the sum") {
  const auto base = share(lift_brownian_ito(6, 1, Grid::dyadic(0.0, 1.0, 8), 1));
  const auto theta = power_of_driver(base, 2);
  const BundleShape s{1, 1, 1, 1};
  const BundlePtr g1 = omega_quadratic_bundle(s, 0.4);
  const BundlePtr g2 = poly_bundle(s, {0.5, -1, 0.3});
  const auto e1 = compose_second_order(*g1, theta);
  const auto e2 = compose_second_order(*g2, theta);
  const auto e12 = compose_second_order(*sum_bundles(g1, g2), theta);
  for (std::size_t i = 0; i < base->grid().nodes(); ++i) {
    CHECK(std::abs(e12.time_part(i)[0] - e1.time_part(i)[0] - e2.time_part(i)[0]) < 1e-12);
    CHECK(std::abs(e12.second(i)[0] - e1.second(i)[0] - e2.second(i)[0]) < 1e-12);
  }
}

TEST_CASE("Ito-Ventzell reconstruction of the squared Brownian path") {
  const Grid grid = Grid::dyadic(0.0, 1.0, 14);
  const auto base = share(lift_brownian_ito(21, 1, grid, 2));
  const auto theta = SecondOrderControlled::of_driver(base);
  const ControlledPath eta = ito_ventzell_apply(*poly_bundle({1, 1, 1, 1}, {0, 0, 1}), theta);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double w = base->omega()(i, 0);
    worst = std::max(worst, std::abs(eta.value(i)[0] - w * w));
  }
  CHECK(worst < 2e-2 * grid.span());
}

TEST_CASE("Ito-Ventzell with a linear map on a smooth driver") {
  const auto base = share(lift_smooth(circle_generator(), Grid::dyadic(0.0, 1.0, 10)));
  const auto theta = SecondOrderControlled::of_driver(base);
  const BundlePtr g = affine_bundle({2, 1, 1, 2}, {2.0, -0.5}, {0.3});
  const ControlledPath eta = ito_ventzell_apply(*g, theta);
  double worst = 0.0;
  for (std::size_t i = 0; i < base->grid().nodes(); ++i) {
    const auto w = base->omega().at(i);
    worst = std::max(worst, std::abs(eta.value(i)[0] - (2.0 * w[0] - 0.5 * w[1] + 0.3)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("Ito-Ventzell with a path-dependent field matches direct evaluation") {
  const Grid grid = Grid::dyadic(0.0, 1.0, 14);
  const auto base = share(lift_brownian_ito(8, 1, grid, 2));
  const auto theta = power_of_driver(base, 1);
  const BundlePtr g = omega_quadratic_bundle({1, 1, 1, 1}, 0.8);
  const ControlledPath eta = ito_ventzell_apply(*g, theta);
  const ControlledPath direct = compose(*g, theta.first());
  CHECK(max_node_gap(eta, direct) < 2e-2 * grid.span());
}

TEST_CASE("Ito-Ventzell of the zero dynamics is constant") {
  const auto base = share(lift_brownian_ito(8, 1, Grid::dyadic(0.0, 1.0, 8), 1));
  const std::size_t nodes = base->grid().nodes();
  const ControlledPath first(base, 1, 1, std::vector<double>(nodes, 0.4), std::vector<double>(nodes, 0.0));
  const SecondOrderControlled theta(first, std::vector<double>(nodes, 0.0), std::vector<double>(nodes, 0.0));
  const ControlledPath eta = ito_ventzell_apply(*poly_bundle({1, 1, 1, 1}, {1, 2, 3}), theta);
  for (std::size_t i = 0; i < nodes; ++i) CHECK(eta.value(i)[0] == doctest::Approx(1 + 0.8 + 0.48));
}

TEST_CASE("Ito reconstruction of theta's own dynamics") {
  const auto base = share(lift_brownian_ito(4, 1, Grid::dyadic(0.0, 1.0, 12), 2));
  const auto sq = power_of_driver(base, 2);
  CHECK(max_node_gap(ito_reconstruction(sq), sq.first()) < 1e-10);
  // theta = w^3: the per-step mismatch is the Taylor residual, so the local
  // reconstruction error decays with order >= 2a + b - 0.1 across levels.
  const auto fine = share(lift_brownian_ito(4, 1, Grid::dyadic(0.0, 1.0, 14), 2));
  const auto cube = power_of_driver(fine, 3);
  std::vector<double> h, err;
  for (int level = 8; level <= 14; level += 2) {
    const auto coarse = share(refine(*fine, level));
    const auto c = cube.restricted(coarse);
    const ControlledPath r = ito_reconstruction(c);
    double sq_sum = 0.0;
    for (std::size_t i = 0; i + 1 < coarse->grid().nodes(); ++i) {
      const double e = (r.value(i + 1)[0] - r.value(i)[0]) - (c.first().value(i + 1)[0] - c.first().value(i)[0]);
      sq_sum += e * e;
    }
    h.push_back(coarse->grid().h());
    err.push_back(std::sqrt(sq_sum / coarse->grid().steps()));
  }
  CHECK(fit_order(h, err).order >= fine->pair().young_exponent() - 0.1);
}

TEST_CASE("Taylor residual") {
  SUBCASE("linear in a smooth geometric driver is exact") {
    const auto base = share(lift_smooth(circle_generator(), Grid::dyadic(0.0, 1.0, 10)));
    const auto theta = SecondOrderControlled::of_driver(base);
    const TaylorReport rep = taylor_residual(theta);
    CHECK(rep.max_abs < 1e-12);
    CHECK(rep.pass);
  }
  SUBCASE("zero path") {
    const auto base = share(lift_brownian_ito(1, 2, Grid::dyadic(0.0, 1.0, 8), 1));
    const std::size_t n = base->grid().nodes();
    const ControlledPath zero(base, 1, 1, std::vector<double>(n, 0.0), std::vector<double>(n * 2, 0.0));
    const SecondOrderControlled theta(zero, std::vector<double>(n * 4, 0.0), std::vector<double>(n * 4, 0.0));
    const TaylorReport rep = taylor_residual(theta);
    CHECK(rep.max_abs == 0.0);
    CHECK(rep.profile.fit.exact);
  }
  SUBCASE("squared Ito Brownian path") {
    const auto base = share(lift_brownian_ito(9, 1, Grid::dyadic(0.0, 1.0, 14), 2));
    const TaylorReport rep = taylor_residual(power_of_driver(base, 2));
    CHECK(rep.pass);
  }
  SUBCASE("cubed Ito Brownian path fits order >= 2a + b - 0.1") {
    const auto base = share(lift_brownian_ito(9, 1, Grid::dyadic(0.0, 1.0, 14), 2));
    const TaylorReport rep = taylor_residual(power_of_driver(base, 3));
    CHECK(rep.profile.fit.order >= rep.threshold);
    CHECK(rep.profile.fit.order < 2.0);
    const TaylorReport sym = taylor_residual_symmetric(power_of_driver(base, 3));
    CHECK(sym.profile.fit.order == doctest::Approx(rep.profile.fit.order));
  }
  SUBCASE("iterated integral with a non-symmetric second derivative") {
    // theta = int w^0 dw^1: D theta = (0, w^0), D2[1][0] = 1, b = 0.
    const auto base = share(lift_brownian_ito(12, 2, Grid::dyadic(0.0, 1.0, 12), 2));
    const ControlledPath integrand = ControlledPath::of_function(
        base, 1, 2, [](double, std::span<const double> w, std::span<double> v, std::span<double> jac) {
          v[0] = 0.0;
          v[1] = w[0];
          jac[2] = 1.0;
        });
    const ControlledPath first = rough_integral(integrand);
    const std::size_t n = base->grid().nodes();
    std::vector<double> second(n * 4, 0.0);
    for (std::size_t i = 0; i < n; ++i) second[i * 4 + 2] = 1.0;
    const auto theta = SecondOrderControlled::from_ab(first, second, std::vector<double>(n * 4, 0.0));
    const TaylorReport rep = taylor_residual(theta);
    CHECK(rep.max_abs < 1e-12);
    CHECK(rep.pass);
    CHECK(theta.time_trace(5)[0] == doctest::Approx(0.0));
    CHECK(theta.time_part(5)[1] == doctest::Approx(-0.25));
  }
}

TEST_CASE("commutation of path and space derivatives") {
  const BundleShape s{1, 1, 1, 1};
  const CommutationReport poly = commutation_check(*poly_bundle(s, {1, 2, 3}));
  CHECK(poly.path_gap == 0.0);
  CHECK(poly.pass);
  const CommutationReport lin = commutation_check(*omega_linear_bundle(s, 0.9));
  CHECK(lin.pass);
  const CommutationReport quad = commutation_check(*omega_quadratic_bundle(s, 0.9));
  CHECK(quad.pass);
  CHECK(quad.path_gap < 1e-5);

  // a bundle that advertises a wrong d_w d_y g is caught
  CoefficientBundle bad = *omega_quadratic_bundle(s, 0.9);
  bad.dy_path = [](const TimePoint&, std::span<const double> y, std::span<double> out) { out[0] = y[0]; };
  CHECK_FALSE(commutation_check(bad).pass);
}

TEST_CASE("chain bound ratio is finite") {
  const auto base = share(lift_brownian_ito(5, 1, Grid::dyadic(0.0, 1.0, 9), 1));
  const ChainBoundReport rep =
      chain_bound_ratio(*omega_quadratic_bundle({1, 1, 1, 1}, 0.6), ControlledPath::of_driver(base));
  CHECK(std::isfinite(rep.ratio));
  CHECK(rep.ratio > 0.0);
  CHECK(rep.g_norm > 0.0);
}
