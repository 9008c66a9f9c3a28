#include <doctest.h>

#include <cmath>

#include "roughcalc/rpde.hpp"
#include "roughcalc/sde.hpp"

using namespace roughcalc;

namespace {

RoughPathPtr share(RoughPath rp) { return std::make_shared<const RoughPath>(std::move(rp)); }

RoughPathPtr smooth_driver(int level, std::uint64_t seed = 97) {
  return share(lift_smooth(smooth_test_generator(1, seed), Grid::dyadic(0, 1, level)));
}

BundlePtr const_sigma(double c) { return affine_bundle({1, 1, 1, 1}, {0.0}, {c}); }

double w0(const RoughPath& rp, std::size_t k) { return rp.omega()(k, 0) - rp.omega()(0, 0); }

// Gaussian datum exp(-x^2 / (2 s0)) after heat smoothing that adds `var` to its variance.
double smoothed_gauss(double s0, double var, double x) {
  const double s = s0 + var;
  return std::sqrt(s0 / s) * std::exp(-x * x / (2 * s));
}

// phi(t, x) by RK4 backwards along y' = -sigma(y) w'(s) from y(t) = x to s = 0.
double rk4_phi(const std::function<double(double)>& sigma, const SmoothGenerator& gen, double t, double x,
               int steps) {
  std::vector<double> dw(1);
  auto rhs = [&](double s, double y) {
    gen.derivative(s, dw);
    return -sigma(y) * dw[0];
  };
  const double h = -t / steps;
  double y = x;
  for (int i = 0; i < steps; ++i) {
    const double s = t + i * h;
    const double k1 = rhs(s, y), k2 = rhs(s + h / 2, y + h / 2 * k1), k3 = rhs(s + h / 2, y + h / 2 * k2),
                 k4 = rhs(s + h, y + h * k3);
    y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return y;
}

CharacteristicOptions box(double x_lo, double x_hi, double dx, double y_lo = -2, double y_hi = 2, double dy = 1.0 / 8) {
  CharacteristicOptions o;
  o.x = Lattice::padded(x_lo, x_hi, dx);
  o.y = Lattice::padded(y_lo, y_hi, dy);
  return o;
}

}  // namespace

TEST_CASE("lattice interpolation and differences are exact on low-degree polynomials") {
  const Lattice L = Lattice::span(-1, 2, 24);
  CHECK(L.n == 25);
  CHECK(L.hi() == doctest::Approx(2.0));
  std::vector<double> cubic(L.n), quartic(L.n);
  for (std::size_t i = 0; i < L.n; ++i) {
    const double x = L.at(i);
    cubic[i] = 1 - 2 * x + 0.5 * x * x * x;
    quartic[i] = x * x * x * x - x;
  }
  for (double x : {-1.0, -0.93, 0.0, 0.41, 1.999, 2.0})
    CHECK(interpolate(L, cubic, x) == doctest::Approx(1 - 2 * x + 0.5 * x * x * x).epsilon(1e-12));
  const auto d1 = differentiate(L, quartic, 1), d2 = differentiate(L, quartic, 2);
  for (std::size_t i = 0; i < L.n; ++i) {
    const double x = L.at(i);
    CHECK(d1[i] == doctest::Approx(4 * x * x * x - 1).epsilon(1e-9));
    CHECK(d2[i] == doctest::Approx(12 * x * x).epsilon(1e-9));
  }
  CHECK_THROWS_AS(interpolate(L, cubic, 2.01), Error);
  try {
    interpolate(L, cubic, -1.5);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kExtrapolation);
  }
  const Lattice P = Lattice::padded(0, 1, 0.25);
  CHECK(P.n == 9);
  CHECK(P.lo == doctest::Approx(-0.5));
}

TEST_CASE("parameterized RDE: closed form, finite differences and the initial derivative") {
  const auto rp = smooth_driver(12);
  ParameterizedRde p;
  p.driver = rp;
  p.g = make_xy_bundle("linear:1", 1);  // g = u, independent of x
  p.initial = [](double x, std::span<double> u, std::span<double> v) {
    u[0] = x;
    v[0] = 1.0;
  };
  const auto sol = solve_parameterized_rde(p, {-1.5, -0.2, 0.7, 2.0});
  REQUIRE(sol.failures == 0);
  double gap = 0.0, homog = 0.0;
  for (const auto& a : sol.anchors) {
    CHECK(a.v[0] == 1.0);
    for (std::size_t k = 0; k < rp->grid().nodes(); ++k) {
      gap = std::max(gap, std::abs(a.v[k] - std::exp(w0(*rp, k))));
      homog = std::max(homog, std::abs(a.u[k] - a.x * a.v[k]));
    }
  }
  CHECK(gap < 1e-6);
  CHECK(homog < 1e-12);

  ParameterizedRde q = p;
  q.g = make_xy_bundle("sin:0.8", 1);  // sin(x + u)
  q.f = constant_bundle({2, 1, 1, 1}, {0.2});
  q.initial = [](double x, std::span<double> u, std::span<double> v) {
    u[0] = std::sin(2 * x);
    v[0] = 2 * std::cos(2 * x);
  };
  const auto nl = solve_parameterized_rde(q, {-1.0, -0.3, 0.4, 1.1}, 1e-3);
  REQUIRE(nl.failures == 0);
  CHECK(nl.max_fd_gap < 1e-4);
  for (const auto& a : nl.anchors) CHECK(a.v[0] == doctest::Approx(2 * std::cos(2 * a.x)));
}

TEST_CASE("parameterized RDE failures are reported per anchor") {
  const auto rp = smooth_driver(8);
  ParameterizedRde p;
  p.driver = rp;
  p.g = xy_bundle("blowup", 1, [](double x, double u, std::size_t) {
    return XyPartials{x * u * u, u * u, 2 * x * u, 0, 2 * u, 2 * x};
  });
  p.initial = [](double, std::span<double> u, std::span<double> v) {
    u[0] = 1.0;
    v[0] = 0.0;
  };
  const auto sol = solve_parameterized_rde(p, {0.0, 1e6});
  CHECK(sol.anchors[0].ok);
  CHECK_FALSE(sol.anchors[1].ok);
  CHECK(sol.failures == 1);
  CHECK_FALSE(sol.anchors[1].error.empty());
}

TEST_CASE("characteristics: zero and constant sigma") {
  const auto rp = smooth_driver(12);
  const Grid& grid = rp->grid();
  const auto zero = build_characteristics(const_sigma(0.0), nullptr, rp, box(-2, 2, 1.0 / 16));
  for (std::size_t k : zero.maps->anchors())
    for (double x : {-1.3, 0.0, 0.77}) {
      CHECK(zero.maps->theta(k, x) == doctest::Approx(x).epsilon(1e-14));
      CHECK(zero.maps->phi(grid.time(k), x) == doctest::Approx(x).epsilon(1e-14));
      CHECK(zero.maps->psi(grid.time(k), x, 0.3) == 0.3);
      CHECK(zero.maps->zeta(grid.time(k), x, -0.4, MapPart::kY) == 1.0);
    }

  const double c = 0.7;
  const auto ch = build_characteristics(const_sigma(c), nullptr, rp, box(-3, 3, 1.0 / 32));
  double gap = 0.0;
  for (std::size_t k : ch.maps->anchors())
    for (double x : {-1.1, 0.0, 0.35, 1.6}) {
      gap = std::max(gap, std::abs(ch.maps->theta(k, x) - (x - c * w0(*rp, k))));
      gap = std::max(gap, std::abs(ch.maps->phi(grid.time(k), x) - (x + c * w0(*rp, k))));
      gap = std::max(gap, std::abs(ch.maps->phi(grid.time(k), x, MapPart::kX) - 1.0));
    }
  CHECK(gap < 1e-10);
  CHECK(ch.flow->failures == 0);
  CHECK(ch.maps->roundtrip_gap() < 1e-10);
  CHECK(ch.flow->inverse_gap < 1e-10);
  // linear interpolation of x + c w in time is what the halving measures
  CHECK(ch.maps->time_interp_gap() > 0.0);
}

TEST_CASE("characteristics: round trip, inverse identities and the theta derivative on nonlinear sigma") {
  const auto rp = smooth_driver(12);
  const auto sigma = make_bundle("trig:0.5,0.3", {1, 1, 1, 1});
  const auto ch = build_characteristics(sigma, nullptr, rp, box(-3, 3, 1.0 / 32));
  CHECK(ch.flow->failures == 0);
  CHECK(ch.maps->roundtrip_gap() < 1e-6);
  CHECK(ch.flow->inverse_gap < 1e-8);
  // d_x theta from the variational equation against differences of the flow
  const auto& f = *ch.flow;
  double dgap = 0.0;
  for (std::size_t node : {std::size_t{1024}, std::size_t{4096}}) {
    const std::span<const double> row(f.theta.data() + node * f.x.n, f.x.n);
    const auto d = differentiate(f.x, row, 1);
    for (std::size_t i = 0; i < f.x.n; ++i) dgap = std::max(dgap, std::abs(d[i] - f.dtheta[node * f.x.n + i]));
  }
  CHECK(dgap < 1e-5);
  // phi against an RK4 backward characteristic
  const auto gen = smooth_test_generator(1, 97);
  auto sig = [](double y) { return 0.5 * std::sin(y) + 0.3 * std::cos(y); };
  double pgap = 0.0;
  for (std::size_t k : ch.maps->anchors())
    for (double x : {-1.0, 0.2, 0.9}) {
      const double t = rp->grid().time(k);
      pgap = std::max(pgap, std::abs(ch.maps->phi(t, x) - rk4_phi(sig, gen, t, x, 8192)));
    }
  CHECK(pgap < 1e-6);
}

TEST_CASE("property: round trip below 1e-6 across sigma families and drivers") {
  for (std::uint64_t seed : {3u, 11u, 29u}) {
    const auto rp = smooth_driver(12, seed);
    for (const char* spec : {"trig:0.4,-0.2", "poly:0.3,0.2", "affine:0.5,0.1"}) {
      CAPTURE(seed);
      CAPTURE(spec);
      const auto ch = build_characteristics(make_bundle(spec, {1, 1, 1, 1}), nullptr, rp, [] {
        auto o = box(-2, 2, 1.0 / 32);
        o.track_halving = false;
        o.t0_count = 9;
        return o;
      }());
      CHECK(ch.maps->roundtrip_gap() < 1e-6);
      CHECK(ch.flow->inverse_gap < 1e-8);
    }
  }
}

TEST_CASE("characteristics with g: pair identity and closed-form zeta") {
  const auto rp = smooth_driver(12);
  const double c = 0.6, a = 0.3, b = 0.5;
  const auto g = make_xy_bundle("xlinear:0.3,0.5", 1);  // (a + b sin x) y
  auto o = box(-2.5, 2.5, 1.0 / 16, -2, 2, 1.0 / 8);
  const auto ch = build_characteristics(const_sigma(c), g, rp, o);
  CHECK(ch.flow->failures == 0);
  CHECK(ch.maps->pair_gap() < 1e-4);
  CHECK(ch.flow->inverse_gap < 1e-8);
  // zeta(t, x, y) = y exp(a w + (b / c)(cos x - cos(x + c w)))
  double gap = 0.0, pgap = 0.0;
  for (std::size_t k : ch.maps->anchors()) {
    const double t = rp->grid().time(k), w = w0(*rp, k);
    for (double x : {-1.0, 0.0, 0.6})
      for (double y : {-0.9, 0.2, 1.1}) {
        const double e = std::exp(a * w + (b / c) * (std::cos(x) - std::cos(x + c * w)));
        gap = std::max(gap, std::abs(ch.maps->zeta(t, x, y) - y * e));
        // psi inverts zeta at theta: zeta(t, x - c w, psi(t, x, y)) = y
        pgap = std::max(pgap, std::abs(ch.maps->psi(t, x, y) - y / std::exp(a * w + (b / c) * (std::cos(x - c * w) - std::cos(x)))));
      }
  }
  CHECK(gap < 1e-5);
  CHECK(pgap < 1e-5);
}

TEST_CASE("flow RDE residuals: trivial, constant and refinement order") {
  const auto rp = smooth_driver(12);
  const auto zero = build_characteristics(const_sigma(0.0), nullptr, rp, box(-2, 2, 1.0 / 16));
  const auto r0 = verify_flow_rdes(*zero.maps, const_sigma(0.0), nullptr);
  CHECK(r0.pairs > 0);
  CHECK(r0.phi_residual == 0.0);
  CHECK(r0.psi_residual == 0.0);

  const auto cst = build_characteristics(const_sigma(0.8), nullptr, rp, box(-2, 2, 1.0 / 16));
  CHECK(verify_flow_rdes(*cst.maps, const_sigma(0.8), nullptr).phi_residual < 1e-6);

  const auto sigma = make_bundle("trig:0.5,0.3", {1, 1, 1, 1});
  const auto g = make_xy_bundle("sin:0.4", 1);
  auto o = box(-2, 2, 1.0 / 16, -1.5, 1.5, 1.0 / 8);
  o.t0_count = 9;
  const HolderPair pair{};
  const auto st = flow_rde_refinement(
      sigma, g, [](int level) { return share(lift_brownian_ito(7, 1, Grid::dyadic(0, 1, level), 4)); }, {7, 8, 9, 10},
      o, pair);
  MESSAGE("phi residual order " << st.phi_fit.order << ", psi " << st.psi_fit.order << ", threshold "
                                << st.threshold);
  CHECK(st.threshold == doctest::Approx(pair.young_exponent() - 0.15));
  CHECK(st.phi_fit.order >= st.threshold);
  CHECK(st.psi_fit.order >= st.threshold);
  CHECK(st.pass);
  CHECK_THROWS_AS(flow_rde_refinement(sigma, g, [](int) { return RoughPathPtr{}; }, {7, 8}, o, pair), Error);
}

TEST_CASE("transform_rhs: identity maps, the transport cancellation and extrapolation") {
  const auto rp = smooth_driver(10);
  const PdeRhs f = make_rhs("burgers:0.3,0.7", 1);
  const auto id = build_characteristics(const_sigma(0.0), nullptr, rp, box(-2, 2, 1.0 / 16));
  const auto fi = transform_rhs(f, id.maps, const_sigma(0.0), nullptr);
  double out[1], ref[1];
  for (double x : {-1.0, 0.5})
    for (std::size_t node : {std::size_t{0}, std::size_t{512}, std::size_t{1024}}) {
      const PdePoint p{rp->grid().time(node), node, x, 0.4, -1.2, 2.5};
      CHECK(fi.y_hat(p) == 0.4);
      CHECK(fi.z_hat(p) == doctest::Approx(-1.2).epsilon(1e-12));
      CHECK(fi.gamma_hat(p) == doctest::Approx(2.5).epsilon(1e-12));
      fi(p, out);
      f(p, ref);
      CHECK(out[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    }

  const double c = 0.9;
  const auto tr = build_characteristics(const_sigma(c), nullptr, rp, box(-3, 3, 1.0 / 16));
  const auto ft = transform_rhs(make_rhs("heat:" + std::to_string(c * c / 2), 1), tr.maps, const_sigma(c), nullptr);
  const auto f0 = transform_rhs(make_rhs("zero", 1), tr.maps, const_sigma(c), nullptr);
  for (double x : {-1.0, 0.0, 0.8}) {
    const PdePoint p{rp->grid().time(700), 700, x, 0.3, 0.5, -1.7};
    ft(p, out);
    CHECK(std::abs(out[0]) < 1e-12);
    f0(p, out);
    CHECK(out[0] == doctest::Approx(-0.5 * c * c * -1.7).epsilon(1e-10));
  }
  CHECK_THROWS_AS(ft(PdePoint{0.0, 0, 10.0, 0.0, 0.0, 0.0}, out), Error);
  try {
    ft(PdePoint{0.0, 0, -10.0, 0.0, 0.0, 0.0}, out);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kExtrapolation);
  }
}

TEST_CASE("property: transformed right side is affine in the f slot") {
  const auto rp = share(lift_brownian_ito(5, 1, Grid::dyadic(0, 1, 9), 4));
  const auto sigma = make_bundle("trig:0.4,0.2", {1, 1, 1, 1});
  const auto g = make_xy_bundle("sin:0.3", 1);
  auto o = box(-2, 2, 1.0 / 16, -2, 2, 1.0 / 8);
  o.t0_count = 9;
  const auto ch = build_characteristics(sigma, g, rp, o);
  const PdeRhs f1 = make_rhs("burgers:0.2,0.5", 1), f2 = make_rhs("linear:-0.7", 1), zero = make_rhs("zero", 1);
  const PdeRhs sum = [&](const PdePoint& p, std::span<double> out) {
    double a[1], b[1];
    f1(p, a);
    f2(p, b);
    out[0] = a[0] + b[0];
  };
  const auto h1 = transform_rhs(f1, ch.maps, sigma, g), h2 = transform_rhs(f2, ch.maps, sigma, g),
             hs = transform_rhs(sum, ch.maps, sigma, g), h0 = transform_rhs(zero, ch.maps, sigma, g);
  double worst = 0.0;
  for (std::size_t node : {std::size_t{0}, std::size_t{100}, std::size_t{300}, std::size_t{511}})
    for (double x : {-0.8, 0.1, 0.6})
      for (double y : {-0.5, 0.3}) {
        const PdePoint p{rp->grid().time(node), node, x, y, 0.7, -0.4};
        double a[1], b[1], s[1], z[1];
        h1(p, a);
        h2(p, b);
        hs(p, s);
        h0(p, z);
        worst = std::max(worst, std::abs(s[0] - a[0] - b[0] + z[0]));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("gamma hat: chain rule matches differences of the composed map, the literal form does not") {
  const auto rp = smooth_driver(10);
  const auto sigma = make_bundle("trig:0.5,0.3", {1, 1, 1, 1});
  const auto g = make_xy_bundle("sin:0.6", 1);
  auto o = box(-2.5, 2.5, 1.0 / 32, -2, 2, 1.0 / 16);
  const auto ch = build_characteristics(sigma, g, rp, o);
  const auto fh = transform_rhs(make_rhs("zero", 1), ch.maps, sigma, g, GammaForm::kChainRule);
  // v(x) = 0.4 + 0.8 sin(x); u(s) = zeta(t, s, v(phi(t, s))) from direct flow solves
  auto V = [](double x) { return 0.4 + 0.8 * std::sin(x); };
  const std::size_t K = 512;
  const double t = rp->grid().time(K);
  auto phi_direct = [&](double s) {
    RdeProblem bp;
    bp.driver = share(backward_lift(*rp, K));
    bp.g = sigma;
    bp.y0 = {s};
    return solve_rde_values(bp).back();
  };
  auto pair_sys = [&] {
    CoefficientBundle b;
    b.name = "forward pair";
    b.in_dim = 2;
    b.rows = 2;
    b.cols = 1;
    b.driver_dim = 1;
    b.regularity = Regularity::kC33;
    b.path_free = true;
    b.value = [](const TimePoint&, std::span<const double> y, std::span<double> out) {
      out[0] = -(0.5 * std::sin(y[0]) + 0.3 * std::cos(y[0]));
      out[1] = 0.6 * std::sin(y[0] + y[1]);
    };
    b.dy = [](const TimePoint&, std::span<const double> y, std::span<double> out) {
      out[0] = -(0.5 * std::cos(y[0]) - 0.3 * std::sin(y[0]));
      out[1] = 0.0;
      out[2] = 0.6 * std::cos(y[0] + y[1]);
      out[3] = 0.6 * std::cos(y[0] + y[1]);
    };
    return std::make_shared<const CoefficientBundle>(std::move(b));
  }();
  auto u_direct = [&](double s) {
    const double ph = phi_direct(s);
    RdeProblem fp;
    fp.driver = rp;
    fp.g = pair_sys;
    fp.y0 = {ph, V(ph)};
    fp.end_node = K;
    return solve_rde_values(fp).back();
  };
  double worst_chain = 0.0, worst_z = 0.0, min_literal = 1e300;
  for (double xp : {-0.6, 0.1, 0.7}) {
    const PdePoint p{t, K, xp, V(xp), 0.8 * std::cos(xp), -0.8 * std::sin(xp)};
    const double th = ch.maps->theta(K, xp);
    const double h = 0.02;
    double u[5];
    for (int m = -2; m <= 2; ++m) u[m + 2] = u_direct(th + m * h);
    const double uxx = (-u[4] + 16 * u[3] - 30 * u[2] + 16 * u[1] - u[0]) / (12 * h * h);
    const double ux = (-u[4] + 8 * u[3] - 8 * u[1] + u[0]) / (12 * h);
    CHECK(fh.y_hat(p) == doctest::Approx(u[2]).epsilon(1e-5));
    worst_z = std::max(worst_z, std::abs(fh.z_hat(p) - ux));
    worst_chain = std::max(worst_chain, std::abs(fh.gamma_chain_rule(p) - uxx));
    min_literal = std::min(min_literal, std::abs(fh.gamma_literal(p) - uxx));
    const auto fl = fh.flagged(p);
    CHECK(fl.bracket + fl.yy == doctest::Approx(fh.gamma_literal(p) - fh.gamma_chain_rule(p)).epsilon(1e-9));
  }
  MESSAGE("z hat gap " << worst_z << ", chain-rule gamma gap " << worst_chain << ", literal gap >= " << min_literal);
  CHECK(worst_z < 1e-4);
  CHECK(worst_chain < 1e-3);
  CHECK(min_literal > 100 * worst_chain);
}

TEST_CASE("transformed PDE solver: constant, heat kernel and source") {
  const Grid grid = Grid::dyadic(0, 0.25, 10);
  const auto id = BracketPath::identity_rate(grid, 1);
  const Lattice L = Lattice::padded(-4, 4, 1.0 / 256);
  auto u0 = make_initial("gauss:0.25");

  const auto flat = solve_transformed_pde(make_rhs("zero", 1), u0, id, L, {});
  for (std::size_t j = 0; j < L.n; j += 37) CHECK(flat.at(grid.steps(), L.at(j)) == u0(L.at(j)));

  const double kappa = 1.0;
  const auto heat = solve_transformed_pde(make_rhs("heat:1", 1), u0, id, L, {});
  CHECK(heat.gamma_dependent);
  CHECK(heat.max_substeps > 1);
  CHECK(heat.max_mu <= 0.5);
  double err = 0.0;
  for (std::size_t node : {std::size_t{256}, grid.steps()})
    for (std::size_t j = 0; j < L.n; ++j) {
      const double x = L.at(j);
      err = std::max(err, std::abs(heat.at(node, x) - smoothed_gauss(0.25, 2 * kappa * grid.time(node), x)));
    }
  CHECK(err < 1e-3);

  const auto rp = share(lift_brownian_ito(2, 2, Grid::dyadic(0, 1, 8), 4));
  const auto br = bracket(*rp);
  const double c = 0.7;
  const PdeRhs source = [c](const PdePoint&, std::span<double> out) {
    out[0] = c;
    out[1] = 0.0;
    out[2] = 0.0;
    out[3] = c;
  };
  const auto src = solve_transformed_pde(source, u0, br, Lattice::span(-1, 1, 32), {});
  double sgap = 0.0;
  for (std::size_t node = 0; node <= 256; node += 16) {
    const auto b = br.at(node);
    for (double x : {-0.5, 0.0, 0.75})
      sgap = std::max(sgap, std::abs(src.at(node, x) - (u0(x) + c * (b[0] + b[3]))));
  }
  CHECK(sgap < 1e-12);
}

TEST_CASE("transformed PDE solver: CFL halving, backward parabolic and exhausted halvings") {
  const Grid grid = Grid::dyadic(0, 0.25, 6);
  const auto id = BracketPath::identity_rate(grid, 1);
  const Lattice L = Lattice::padded(-2, 2, 1.0 / 64);
  auto u0 = make_initial("gauss:0.25");
  const auto ok = solve_transformed_pde(make_rhs("heat:0.5", 1), u0, id, L, {});
  CHECK(ok.max_substeps >= 16);
  try {
    solve_transformed_pde(make_rhs("heat:-0.5", 1), u0, id, L, {});
    FAIL("backward-parabolic right side accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCfl);
  }
  PdeOptions few;
  few.max_halvings = 2;
  try {
    solve_transformed_pde(make_rhs("heat:0.5", 1), u0, id, L, few);
    FAIL("CFL violation accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCfl);
  }
}

TEST_CASE("RPDE round trip: transport on an Ito driver against the composed oracle") {
  const auto rp = sde_driver(3, 1, Grid::dyadic(0, 1, 12));
  const auto br = bracket(*rp);
  struct Case {
    double sigma, kappa, s0, margin;
  };
  // kappa = sigma^2 / 2 is a pure shift; kappa = sigma^2 adds heat smoothing with the empirical bracket
  for (const Case cs : {Case{0.7, 0.245, 0.25, 1.0}, Case{0.5, 0.25, 0.1, 2.0}}) {
    CAPTURE(cs.kappa);
    RpdeProblem p;
    p.u0 = make_initial("gauss:" + std::to_string(cs.s0));
    p.sigma = const_sigma(cs.sigma);
    p.f = make_rhs("heat:" + std::to_string(cs.kappa), 1);
    p.driver = rp;
    RpdeOptions o;
    o.margin = cs.margin;
    const auto rep = rpde_roundtrip(p, o);
    CHECK(rep.x.step == doctest::Approx(1.0 / 256));
    double err = 0.0;
    for (std::size_t q = 0; q < rep.nodes.size(); ++q) {
      const std::size_t k = rep.nodes[q];
      const double var = 2 * (cs.kappa - cs.sigma * cs.sigma / 2) * br.at(k)[0];
      for (std::size_t j = 0; j < rep.x.n; ++j) {
        const double y = rep.x.at(j) + cs.sigma * w0(*rp, k);
        err = std::max(err, std::abs(rep.u[q * rep.x.n + j] - smoothed_gauss(cs.s0, var, y)));
      }
    }
    MESSAGE("transport kappa " << cs.kappa << ": sup error " << err << ", residual " << rep.residual);
    CHECK(err < 5e-3);
    CHECK(rep.roundtrip_gap < 1e-10);
    CHECK(rep.flagged_bracket == 0.0);
    CHECK(rep.flagged_yy == 0.0);
  }
}

TEST_CASE("RPDE round trip: zero sigma is the heat equation on the bracket") {
  const auto rp = sde_driver(8, 1, Grid::dyadic(0, 1, 10));
  const auto br = bracket(*rp);
  RpdeProblem p;
  p.u0 = make_initial("gauss:0.2");
  p.sigma = const_sigma(0.0);
  p.f = make_rhs("heat:0.1", 1);
  p.driver = rp;
  RpdeOptions o;
  o.margin = 2.0;
  const auto rep = rpde_roundtrip(p, o);
  double err = 0.0, direct = 0.0;
  const Lattice pde = Lattice::padded(o.x_lo - o.margin, o.x_hi + o.margin, o.dx);
  const auto v = solve_transformed_pde(p.f, p.u0, br, pde, {});
  for (std::size_t q = 0; q < rep.nodes.size(); ++q) {
    const std::size_t k = rep.nodes[q];
    for (std::size_t j = 0; j < rep.x.n; ++j) {
      const double x = rep.x.at(j), u = rep.u[q * rep.x.n + j];
      err = std::max(err, std::abs(u - smoothed_gauss(0.2, 0.2 * br.at(k)[0], x)));
      direct = std::max(direct, std::abs(u - v.at(k, x)));
    }
  }
  CHECK(err < 1e-3);
  CHECK(direct < 1e-12);
}

TEST_CASE("RPDE round trip: smooth driver with f = 0 follows the characteristics") {
  const auto gen = smooth_test_generator(1, 97);
  const auto rp = share(lift_smooth(gen, Grid::dyadic(0, 1, 12)));
  RpdeProblem p;
  p.u0 = make_initial("tanh:0.5");
  p.sigma = make_bundle("trig:0.5,0.3", {1, 1, 1, 1});
  p.f = make_rhs("zero", 1);
  p.driver = rp;
  RpdeOptions o;
  o.track_halving = false;
  const auto rep = rpde_roundtrip(p, o);
  auto sig = [](double y) { return 0.5 * std::sin(y) + 0.3 * std::cos(y); };
  double err = 0.0;
  for (std::size_t q = 0; q < rep.nodes.size(); q += 4) {
    const double t = rp->grid().time(rep.nodes[q]);
    for (std::size_t j = 0; j < rep.x.n; j += 8) {
      const double x = rep.x.at(j);
      err = std::max(err, std::abs(rep.u[q * rep.x.n + j] - p.u0(rk4_phi(sig, gen, t, x, 4096))));
    }
  }
  CHECK(err < 1e-4);

  // with g = (a + b sin x) u and constant sigma: u = u0(x + c w) exp(a w + (b / c)(cos x - cos(x + c w)))
  const double c = 0.6, a = 0.3, b = 0.5;
  RpdeProblem pg = p;
  pg.sigma = const_sigma(c);
  pg.g = make_xy_bundle("xlinear:0.3,0.5", 1);
  RpdeOptions og = o;
  og.map_dx = 1.0 / 16;
  og.map_dy = 1.0 / 8;
  og.y_lo = -1.5;
  og.y_hi = 1.5;
  const auto rg = rpde_roundtrip(pg, og);
  double gerr = 0.0;
  for (std::size_t q = 0; q < rg.nodes.size(); ++q) {
    const double w = w0(*rp, rg.nodes[q]);
    for (std::size_t j = 0; j < rg.x.n; j += 8) {
      const double x = rg.x.at(j);
      const double ex = pg.u0(x + c * w) * std::exp(a * w + (b / c) * (std::cos(x) - std::cos(x + c * w)));
      gerr = std::max(gerr, std::abs(rg.u[q * rg.x.n + j] - ex));
    }
  }
  CHECK(gerr < 1e-4);
  CHECK(rg.pair_gap < 1e-4);
}

TEST_CASE("RPDE residual decays under joint refinement") {
  std::vector<double> res;
  for (int level : {8, 10, 12}) {
    RpdeProblem p;
    p.u0 = make_initial("gauss:0.25");
    p.sigma = make_bundle("trig:0.3,0.2", {1, 1, 1, 1});
    p.f = make_rhs("heat:0.1", 1);
    p.driver = sde_driver(4, 1, Grid::dyadic(0, 1, level));
    RpdeOptions o;
    o.dx = std::ldexp(1.0, -(level - 4));
    o.track_halving = false;
    o.t0_count = 9;
    res.push_back(rpde_roundtrip(p, o).residual);
  }
  MESSAGE("residuals " << res[0] << " " << res[1] << " " << res[2]);
  CHECK(res[1] < res[0]);
  CHECK(res[2] < res[1]);
}

TEST_CASE("spec parsing for g, f and u0") {
  CHECK(make_xy_bundle("zero", 1) == nullptr);
  CHECK(make_xy_bundle("affine:1,2,3", 2)->cols == 2);
  CHECK_THROWS_AS(make_xy_bundle("affine:1,2", 1), Error);
  CHECK_THROWS_AS(make_xy_bundle("cubic:1", 1), Error);
  CHECK_THROWS_AS(make_rhs("heat", 1), Error);
  CHECK_THROWS_AS(make_rhs("heat:x", 1), Error);
  CHECK_THROWS_AS(make_initial("gauss:-1"), Error);
  CHECK(make_initial("sin:2")(0.25) == doctest::Approx(std::sin(0.5)));
  double out[4];
  make_rhs("source:2", 2)(PdePoint{}, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);
  CHECK(out[3] == 1.0);
}
