#include <doctest.h>

#include <cmath>

#include "roughcalc/sde.hpp"

using namespace roughcalc;

namespace {

const BundleShape kScalar{1, 1, 1, 1};

// sigma(t, w) = k sin(w^0_t), y-independent, with its Gubinelli derivative.
BundlePtr sine_of_path(double k) {
  CoefficientBundle b;
  b.name = "sine-of-path";
  b.regularity = Regularity::kC23;
  b.uses_path = true;
  b.value = [k](const TimePoint& tp, std::span<const double>, std::span<double> o) {
    o[0] = k * std::sin(tp.view().current()[0]);
  };
  b.dy = [](const TimePoint&, std::span<const double>, std::span<double> o) { o[0] = 0.0; };
  b.dyy = b.dy;
  b.path = [k](const TimePoint& tp, std::span<const double>, std::span<double> o) {
    o[0] = k * std::cos(tp.view().current()[0]);
  };
  b.path_dy = b.dy;
  b.path2 = [k](const TimePoint& tp, std::span<const double>, std::span<double> o) {
    o[0] = -k * std::sin(tp.view().current()[0]);
  };
  return std::make_shared<const CoefficientBundle>(std::move(b));
}

double gbm_error(std::uint64_t seed, int level) {
  SdeProblem p{affine_bundle(kScalar, {1.0}, {}), nullptr, {1.0}};
  const SdeResult r = solve_sde_pathwise(seed, p, Grid::dyadic(0.0, 1.0, level));
  const auto& w = r.driver->omega();
  std::vector<double> exact(w.nodes());
  for (std::size_t i = 0; i < w.nodes(); ++i) exact[i] = std::exp(w(i, 0) - 0.5 * w.grid().time(i));
  return relative_sup_gap(r.solution.theta.first().theta(), SampledPath(w.grid(), 1, exact));
}

}  // namespace

TEST_CASE("additive noise gives x0 + w") {
  SdeProblem p{constant_bundle({1, 1, 2, 2}, {1.0, -0.5}), nullptr, {0.3}};
  const SdeResult r = solve_sde_pathwise(11, p, Grid::dyadic(0.0, 1.0, 10), {14});
  for (std::size_t i = 0; i < r.driver->grid().nodes(); ++i) {
    const auto w = r.driver->omega().at(i);
    CHECK(std::abs(r.solution.theta.first().value(i)[0] - (0.3 + w[0] - 0.5 * w[1])) < 1e-12);
  }
}

TEST_CASE("drift enters through the bracket") {
  SdeProblem p{zero_bundle({1, 1, 2, 2}), constant_bundle({1, 1, 1, 2}, {0.8}), {1.0}};
  const SdeResult r = solve_sde_pathwise(2, p, Grid::dyadic(0.0, 1.0, 10), {14});
  const BracketPath br = bracket(*r.driver);
  for (std::size_t i = 0; i < r.driver->grid().nodes(); i += 13) {
    const auto v = br.at(i);
    CHECK(r.solution.theta.first().value(i)[0] == doctest::Approx(1.0 + 0.8 * 0.5 * (v[0] + v[3])).epsilon(1e-12));
  }
}

TEST_CASE("geometric Brownian motion against the closed form") {
  std::size_t good = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    if (gbm_error(seed, 14) < 0.02) ++good;
  CHECK(good >= 95);
}

TEST_CASE("path-dependent sigma against Euler-Maruyama on the same path") {
  SdeProblem p{adapted_lipschitz_bundle(kScalar, 0.5, 2.0), nullptr, {0.0}};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SdeResult r = solve_sde_pathwise(seed, p, Grid::dyadic(0.0, 1.0, 14));
    const SampledPath em = euler_maruyama(seed, p, Grid::dyadic(0.0, 1.0, 20));
    INFO("seed " << seed);
    CHECK(relative_sup_gap(r.solution.theta.first().theta(), em) < 0.05);
  }
}

TEST_CASE("Stratonovich correction") {
  SUBCASE("constant sigma has no correction") {
    const ItoForm f = stratonovich_to_ito(constant_bundle({1, 1, 2, 2}, {0.4, 0.7}), nullptr);
    const PathContext ctx(brownian_path(1, 2, Grid::dyadic(0.0, 1.0, 4)));
    for (double y : {-1.0, 0.0, 2.0}) CHECK(f.b->eval_value(TimePoint{0.5, 8, &ctx}, std::vector<double>{y})[0] == 0.0);
  }
  SUBCASE("sigma(x) = x gives drift x/2 and the exponential solution") {
    const ItoForm f = stratonovich_to_ito(affine_bundle(kScalar, {1.0}, {}), nullptr);
    CHECK(f.b->eval_value(TimePoint{}, std::vector<double>{3.0})[0] == doctest::Approx(1.5));
    CHECK(f.b->eval_dy(TimePoint{}, std::vector<double>{3.0})[0] == doctest::Approx(0.5));
    std::size_t good = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const SdeResult r = solve_sde_pathwise(seed, SdeProblem{f.sigma, f.b, {1.0}}, Grid::dyadic(0.0, 1.0, 14));
      const auto& w = r.driver->omega();
      std::vector<double> exact(w.nodes());
      for (std::size_t i = 0; i < w.nodes(); ++i) exact[i] = std::exp(w(i, 0));
      if (relative_sup_gap(r.solution.theta.first().theta(), SampledPath(w.grid(), 1, exact)) < 0.02) ++good;
    }
    CHECK(good >= 19);
  }
  SUBCASE("the path part is linear in sigma and b passes through") {
    const PathContext ctx(brownian_path(4, 1, Grid::dyadic(0.0, 1.0, 6)));
    const BundlePtr s1 = sine_of_path(0.7), s2 = sine_of_path(-1.3), s12 = sine_of_path(-0.6);
    const BundlePtr drift = affine_bundle(kScalar, {0.25}, {0.1});
    for (std::size_t node : {0u, 17u, 64u}) {
      const TimePoint tp{node / 64.0, node, &ctx};
      const std::vector<double> y{0.4};
      const double c1 = stratonovich_to_ito(s1, nullptr).b->eval_value(tp, y)[0];
      const double c2 = stratonovich_to_ito(s2, nullptr).b->eval_value(tp, y)[0];
      const double c12 = stratonovich_to_ito(s12, nullptr).b->eval_value(tp, y)[0];
      CHECK(std::abs(c12 - c1 - c2) < 1e-14);
      const double cb = stratonovich_to_ito(s1, drift).b->eval_value(tp, y)[0];
      CHECK(std::abs(cb - c1 - 0.2) < 1e-14);
    }
  }
  SUBCASE("missing d_y sigma is refused") {
    CoefficientBundle b;
    b.value = [](const TimePoint&, std::span<const double>, std::span<double> o) { o[0] = 1.0; };
    b.path_free = true;
    CHECK_THROWS_AS(stratonovich_to_ito(std::make_shared<const CoefficientBundle>(b), nullptr), Error);
  }
}

TEST_CASE("Ito form on the Ito lift matches the plain equation on the Stratonovich lift") {
  // The sub-grid refines with the level: the gap carries the sub-grid quadratic-variation error.
  const BundlePtr sigma = trig_bundle(kScalar, 0.8, 0.3);
  const ItoForm f = stratonovich_to_ito(sigma, nullptr);
  std::vector<double> h, gaps;
  for (int level = 8; level <= 14; level += 2) {
    const Grid grid = Grid::dyadic(0.0, 1.0, level);
    const RoughPathPtr ito = sde_driver(5, 1, grid, {level + 4});
    const auto strat = std::make_shared<const RoughPath>(stratonovich_of(*ito));
    const RdeSolution a = solve_sde_on(SdeProblem{f.sigma, f.b, {0.2}}, ito);
    const RdeSolution b = solve_sde_on(SdeProblem{sigma, nullptr, {0.2}}, strat);
    double g = 0.0;
    for (std::size_t i = 0; i < grid.nodes(); ++i)
      g = std::max(g, std::abs(a.theta.first().value(i)[0] - b.theta.first().value(i)[0]));
    h.push_back(grid.h());
    gaps.push_back(g);
  }
  for (std::size_t k = 1; k < gaps.size(); ++k) CHECK(gaps[k] < gaps[k - 1]);
  CHECK(gaps.back() < 1e-2);
}

TEST_CASE("continuity in the driver") {
  const SdeProblem gbm{affine_bundle(kScalar, {1.0}, {}), nullptr, {1.0}};
  const Grid grid = Grid::dyadic(0.0, 1.0, 11);
  SUBCASE("zero perturbation") {
    const ContinuityReport r = omega_continuity_probe(gbm, 3, grid, 0.0, 4, {15});
    for (const auto& row : r.rows) {
      CHECK(row.driver_distance == 0.0);
      CHECK(row.solution_distance == 0.0);
    }
  }
  SUBCASE("linear sigma: distances shrink together") {
    const ContinuityReport r = omega_continuity_probe(gbm, 3, grid, 0.2, 4, {15});
    CHECK(r.pass);
    REQUIRE(r.rows.size() == 4);
    double lo = r.rows[0].ratio, hi = r.rows[0].ratio;
    for (const auto& row : r.rows) {
      CHECK(row.solution_distance <= r.observed_c * row.driver_distance * (1 + 1e-12));
      lo = std::min(lo, row.ratio);
      hi = std::max(hi, row.ratio);
    }
    CHECK(hi <= 10.0 * lo);
  }
}

TEST_CASE("rough integrals against Ito and Stratonovich sums") {
  SUBCASE("constant integrand") {
    const auto r = pathwise_vs_ito_integral(
        7, 2, 1, [](double, std::span<const double>, std::span<double> v, std::span<double> j) {
          v[0] = 0.5;
          v[1] = -1.5;
          std::fill(j.begin(), j.end(), 0.0);
        },
        {6, 8, 10}, 2);
    for (std::size_t k = 0; k < r.levels.size(); ++k) {
      CHECK(r.ito_gap[k] < 1e-12);
      CHECK(r.strat_gap[k] < 1e-12);
    }
  }
  SUBCASE("theta = w is exact against the Ito sum") {
    const auto r = pathwise_vs_ito_integral(
        7, 2, 2, [](double, std::span<const double> w, std::span<double> v, std::span<double> j) {
          // rows c, cols k: theta_(c,k) = w^c
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t k = 0; k < 2; ++k) v[c * 2 + k] = w[c];
          std::fill(j.begin(), j.end(), 0.0);
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t k = 0; k < 2; ++k) j[(c * 2 + k) * 2 + c] = 1.0;
        },
        {6, 8, 10, 12}, 2);
    for (double g : r.ito_gap) CHECK(g < 1e-10);
  }
  SUBCASE("smooth function of w converges at the rough rate") {
    const auto r = pathwise_vs_ito_integral(
        9, 1, 1, [](double, std::span<const double> w, std::span<double> v, std::span<double> j) {
          v[0] = std::sin(2.0 * w[0]);
          j[0] = 2.0 * std::cos(2.0 * w[0]);
        },
        {8, 10, 12, 14}, 4);
    const double threshold = HolderPair{}.young_exponent() - 1.0 - 0.1;
    CHECK(r.ito_fit.order >= threshold);
    CHECK(r.strat_fit.order >= threshold);
  }
}

TEST_CASE("adaptedness guard") {
  CoefficientBundle peek;
  peek.name = "peek";
  peek.uses_path = true;
  peek.regularity = Regularity::kC23;
  peek.value = [](const TimePoint& tp, std::span<const double>, std::span<double> o) {
    o[0] = tp.view().at(tp.node + 1)[0];
  };
  peek.dy = [](const TimePoint&, std::span<const double>, std::span<double> o) { o[0] = 0.0; };
  peek.dyy = peek.dy;
  peek.path = peek.dy;
  const SdeProblem p{std::make_shared<const CoefficientBundle>(peek), nullptr, {0.0}};
  CHECK_THROWS_AS(solve_sde_pathwise(1, p, Grid::dyadic(0.0, 1.0, 6), {8}), AdaptednessError);
  CHECK_THROWS_AS(euler_maruyama(1, p, Grid::dyadic(0.0, 1.0, 6)), AdaptednessError);
}

TEST_CASE("Ito isometry over 200 seeds") {
  const Grid grid = Grid::dyadic(0.0, 1.0, 10);
  double sum = 0.0, sum2 = 0.0;
  const int seeds = 200;
  for (int s = 0; s < seeds; ++s) {
    const RoughPathPtr rp = sde_driver(s, 1, grid, {14});
    const double v = rough_integral(ControlledPath::of_driver(rp)).value(grid.steps())[0];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / seeds, var = sum2 / seeds - mean * mean;
  INFO("variance " << var);
  CHECK(std::abs(var - 0.5) < 0.15 * 0.5);
}

TEST_CASE("adapted modulus and sample-path diagnostics") {
  const Grid grid = Grid::dyadic(0.0, 1.0, 10);
  const RoughPathPtr a = sde_driver(1, 1, grid, {14}), b = sde_driver(2, 1, grid, {14});
  const BundlePtr sigma = adapted_lipschitz_bundle(kScalar, 0.5, 2.0);
  const AdaptedModulusReport m = adapted_modulus(*sigma, *a, *b);
  CHECK(m.pairs > 100);
  CHECK(std::isfinite(m.constant));
  CHECK(m.constant <= 0.5 + 1e-12);  // |sup a - sup b| <= sup |a - b|, and the time oscillation dominates

  std::size_t flagged = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    if (sample_path_diagnostics(*sde_driver(seed, 2, grid, {16})).flagged) ++flagged;
  CHECK(flagged <= 3);
}
