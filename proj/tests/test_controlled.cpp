#include <doctest.h>

#include <cmath>
#include <numbers>

#include "roughcalc/controlled.hpp"
#include "roughcalc/convergence.hpp"
#include "roughcalc/pairing.hpp"

using namespace roughcalc;

namespace {

RoughPathPtr share(RoughPath rp) { return std::make_shared<const RoughPath>(std::move(rp)); }

// Integrand whose rough integral is the matrix int w dw^*: component ((i,j), l) = w^i delta_{jl}.
ControlledPath outer_integrand(const RoughPathPtr& base) {
  const std::size_t d = base->dim();
  return ControlledPath::of_function(base, d * d, d, [d](double, std::span<const double> w, std::span<double> v,
                                                          std::span<double> jac) {
    std::fill(v.begin(), v.end(), 0.0);
    std::fill(jac.begin(), jac.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        v[(i * d + j) * d + j] = w[i];
        jac[((i * d + j) * d + j) * d + i] = 1.0;
      }
  });
}

// theta(w) = (w1 w2, w1^2) on a 2-d driver.
ControlledPath nonlinear_integrand(const RoughPathPtr& base) {
  return ControlledPath::of_function(base, 1, 2, [](double, std::span<const double> w, std::span<double> v,
                                                    std::span<double> jac) {
    v[0] = w[0] * w[1];
    v[1] = w[0] * w[0];
    jac[0] = w[1];
    jac[1] = w[0];
    jac[2] = 2 * w[0];
    jac[3] = 0.0;
  });
}

// Composite Simpson on [0, t] for the circle of int theta(w_r) . w'_r dr.
double circle_oracle(double t) {
  const double tw = 2 * std::numbers::pi;
  auto f = [&](double r) {
    const double c = std::cos(tw * r), s = std::sin(tw * r);
    return c * s * (-tw * s) + c * c * (tw * c);
  };
  const int n = 1 << 16;
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double r = t * k / n;
    acc += ((k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0)) * f(r);
  }
  return acc * t / (3.0 * n);
}

// theta = (sin w1, cos w2) with its Jacobian on a 2-d driver.
ControlledPath trig_integrand(const RoughPathPtr& base) {
  return ControlledPath::of_function(base, 1, 2, [](double, std::span<const double> w, std::span<double> v,
                                                    std::span<double> jac) {
    v[0] = std::sin(w[0]);
    v[1] = std::cos(w[1]);
    jac[0] = std::cos(w[0]);
    jac[1] = 0.0;
    jac[2] = 0.0;
    jac[3] = -std::sin(w[1]);
  });
}

}  // namespace

TEST_CASE("pairings on hand-computed 2x2 cases") {
  // x in (R^2)^2 with rows (1,2), (3,4); y = (5,6)
  const std::vector<double> x{1, 2, 3, 4}, y{5, 6};
  const auto xy = pairing::dot(x, y, 2);
  CHECK(xy[0] == 17.0);
  CHECK(xy[1] == 39.0);
  // A : B = Trace(A B^*)
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  CHECK(pairing::trace(a, b, 1)[0] == 70.0);
  // area pairing sum_{l,k} D[l][k] W[k][l] = Trace(D W)
  CHECK(pairing::area(a, b, 1, 2)[0] == 1 * 5 + 2 * 7 + 3 * 6 + 4 * 8);
  // A (x) x: (i,j) = sum_k a_ik x_jk
  const auto cv = pairing::convolve(a, b, 2, 2);
  CHECK(cv == std::vector<double>{17, 23, 39, 53});
  // A (x)_2 [x, y]: (i,j) = sum_kl a_kl x_ik y_jl with x = I, y = I gives A
  const std::vector<double> id{1, 0, 0, 1};
  CHECK(pairing::convolve2(a, id, id, 2, 2) == a);
  const auto c2 = pairing::convolve2(a, b, id, 2, 2);
  // row i of x times A: (5,6) A = (23, 34); (7,8) A = (31, 46)
  CHECK(c2 == std::vector<double>{23, 34, 31, 46});
}

TEST_CASE("constant integrand integrates to c . w") {
  const auto base = share(lift_brownian_ito(4, 2, Grid::dyadic(0.0, 1.0, 8), 1));
  const auto c = ControlledPath::constant(base, 1, 2, {0.5, -2.0});
  const auto I = rough_integral(c);
  for (std::size_t i : {0u, 17u, 256u}) {
    const double want = 0.5 * (base->omega()(i, 0) - base->omega()(0, 0)) - 2.0 * (base->omega()(i, 1) - base->omega()(0, 1));
    CHECK(I.theta()(i, 0) == doctest::Approx(want).epsilon(1e-13).scale(1.0));
  }
}

TEST_CASE("self integral telescopes to w_0 w_{0,t}^* + second_{0,t}") {
  for (const bool smooth : {false, true}) {
    const Grid g = Grid::dyadic(0.0, 1.0, 9);
    const auto base = share(smooth ? lift_smooth(smooth_test_generator(3, 5), g) : lift_brownian_ito(8, 3, g, 2));
    const auto I = rough_integral(outer_integrand(base));
    const std::vector<double> prefix = chen_prefix(base->second(), base->omega());
    double worst = 0.0;
    for (std::size_t t = 0; t < g.nodes(); ++t)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double want =
              base->omega()(0, i) * (base->omega()(t, j) - base->omega()(0, j)) + prefix[t * 9 + i * 3 + j];
          worst = std::max(worst, std::abs(I.theta()(t, i * 3 + j) - want));
        }
    CHECK(worst < 1e-12);
    // d = 1 form: (w_T^2 - w_0^2 - <w>_T) / 2
    const auto b1 = share(lift_brownian_ito(3, 1, g, 2));
    const auto J = rough_integral(ControlledPath::of_driver(b1));
    const double wT = b1->omega()(g.steps(), 0), w0 = b1->omega()(0, 0);
    const double br = bracket(*b1).at(g.steps())[0];
    CHECK(std::abs(J.theta()(g.steps(), 0) - 0.5 * (wT * wT - w0 * w0 - br)) < 1e-12);
  }
}

TEST_CASE("output derivative equals the integrand") {
  const auto base = share(lift_brownian_ito(2, 2, Grid::dyadic(0.0, 1.0, 7), 1));
  const auto th = trig_integrand(base);
  const auto I = rough_integral(th);
  CHECK(I.gubinelli().data() == th.theta().data());
  CHECK(I.rows() == 1);
  CHECK_THROWS_AS(rough_integral(ControlledPath::constant(base, 1, 3, {1, 2, 3})), Error);
}

TEST_CASE("rough integral is linear") {
  const auto base = share(lift_brownian_ito(6, 2, Grid::dyadic(0.0, 1.0, 10), 2));
  const auto a = trig_integrand(base);
  const auto b = nonlinear_integrand(base);
  const auto lhs = rough_integral(a.scaled(2.5).plus(b.scaled(-0.75)));
  const auto ia = rough_integral(a);
  const auto ib = rough_integral(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < base->grid().nodes(); ++i)
    worst = std::max(worst, std::abs(lhs.theta()(i, 0) - 2.5 * ia.theta()(i, 0) + 0.75 * ib.theta()(i, 0)));
  CHECK(worst < 1e-12);
}

TEST_CASE("circle integrals match quadrature") {
  const auto base = share(lift_smooth(circle_generator(), Grid::dyadic(0.0, 1.0, 12)));
  // theta = w: int w . dw = (|w_t|^2 - |w_0|^2)/2 = 0 on the unit circle
  const auto self = rough_integral(ControlledPath::of_driver(base));
  CHECK(std::abs(self.theta()(4096, 0)) < 1e-8);
  // matrix form int w dw^* against Simpson at 2^16 panels
  const auto M = rough_integral(outer_integrand(base));
  const double tw = 2 * std::numbers::pi;
  auto w = [&](double t, int a) { return a == 0 ? std::cos(tw * t) : std::sin(tw * t); };
  auto dw = [&](double t, int b) { return b == 0 ? -tw * std::sin(tw * t) : tw * std::cos(tw * t); };
  for (std::size_t node : {1365u, 4096u}) {
    const double T = base->grid().time(node);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const int n = 1 << 16;
        double acc = 0.0;
        for (int k = 0; k <= n; ++k) {
          const double r = T * k / n;
          acc += ((k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0)) * w(r, a) * dw(r, b);
        }
        CHECK(std::abs(M.theta()(node, a * 2 + b) - acc * T / (3.0 * n)) < 1e-8);
      }
  }
  // nonlinear integrand: compensated sums carry an O(h^2) global error
  const auto I = rough_integral(nonlinear_integrand(base));
  const double h2 = base->grid().h() * base->grid().h();
  for (std::size_t i : {1024u, 2731u, 4096u})
    CHECK(std::abs(I.theta()(i, 0) - circle_oracle(base->grid().time(i))) < 20.0 * h2);
}

TEST_CASE("integral refinement on the circle converges at order near 2") {
  std::vector<double> h, err;
  const double oracle = circle_oracle(0.75);
  for (int level = 6; level <= 12; ++level) {
    // coarse lifts carry exact per-step areas, so coarsen a deep lift
    const auto fine = lift_smooth(circle_generator(), Grid::dyadic(0.0, 1.0, 14));
    const auto base = share(refine(fine, level));
    const auto I = rough_integral(nonlinear_integrand(base));
    h.push_back(base->grid().h());
    err.push_back(std::abs(I.theta()(*base->grid().node_of(0.75), 0) - oracle));
  }
  CHECK(fit_order(h, err).order >= 1.8);
}

TEST_CASE("controlled norms and distances") {
  const auto base = share(lift_brownian_ito(9, 2, Grid::dyadic(0.0, 1.0, 9), 1));
  const auto self = ControlledPath::of_driver(base);
  const auto n = controlled_norms(self);
  CHECK(n.gub_norm_beta == 0.0);
  CHECK(n.remainder_norm == 0.0);
  CHECK(n.full == doctest::Approx(std::sqrt(2.0)));

  const auto a = trig_integrand(base);
  const auto z = controlled_distance(a, a);
  CHECK(z.d == 0.0);
  CHECK(z.full == 0.0);
  // constant shift of the derivative: beta part vanishes, remainder changes by c w_{s,t}
  std::vector<double> g = a.gubinelli().data();
  const double c[4] = {0.3, -0.4, 0.0, 1.2};
  for (std::size_t i = 0; i < base->grid().nodes(); ++i)
    for (std::size_t k = 0; k < 4; ++k) g[i * 4 + k] += c[k];
  const ControlledPath b(base, 1, 2, a.theta().data(), g);
  const auto ab = controlled_distance(a, b);
  const double cn = std::sqrt(0.09 + 0.16 + 1.44);
  CHECK(ab.full - ab.d == doctest::Approx(cn).epsilon(1e-12));
  const auto ba = controlled_distance(b, a);
  CHECK(ba.d == doctest::Approx(ab.d).epsilon(1e-12));
  // remainder difference is exactly c w_{s,t}; its norm is the Hoelder norm of c w
  std::vector<double> cw(base->grid().nodes() * 2);
  for (std::size_t i = 0; i < base->grid().nodes(); ++i) {
    cw[2 * i] = c[0] * base->omega()(i, 0) + c[1] * base->omega()(i, 1);
    cw[2 * i + 1] = c[2] * base->omega()(i, 0) + c[3] * base->omega()(i, 1);
  }
  const double oracle = holder_norm(SampledPath(base->grid(), 2, cw), 0.898);
  CHECK(ab.d == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("Young integral against the bracket") {
  const Grid g = Grid::dyadic(0.0, 2.0, 10);
  const BracketPath ideal = BracketPath::identity_rate(g, 1);
  std::vector<double> t(g.nodes());
  for (std::size_t i = 0; i < g.nodes(); ++i) t[i] = g.time(i);
  const auto Y = young_integral(SampledPath(g, 1, t), ideal, 1);
  // left sums of t dt: T^2/2 - T h/2
  CHECK(Y(g.steps(), 0) == doctest::Approx(2.0 - g.h()).epsilon(1e-12));
  CHECK(std::abs(Y(g.steps(), 0) - 2.0) <= g.h());

  const auto ito = lift_brownian_ito(1, 2, g, 2);
  const BracketPath br = bracket(ito);
  const std::vector<double> C{1.0, 2.0, 3.0, 4.0};
  std::vector<double> cs;
  for (std::size_t i = 0; i < g.nodes(); ++i) cs.insert(cs.end(), C.begin(), C.end());
  const auto Yc = young_integral(SampledPath(g, 4, cs), br, 1);
  const auto bt = br.at(g.steps());
  CHECK(Yc(g.steps(), 0) == doctest::Approx(bt[0] + 2 * bt[1] + 3 * bt[2] + 4 * bt[3]).epsilon(1e-12));
  // additivity: increments over [0,s] and [s,T] add up
  const std::size_t s = 333;
  CHECK(Yc(g.steps(), 0) == doctest::Approx(Yc(s, 0) + (Yc(g.steps(), 0) - Yc(s, 0))));

  const auto geo = lift_smooth(smooth_test_generator(2, 3), g);
  const auto Yg = young_integral(SampledPath(g, 4, cs), bracket(geo), 1);
  CHECK(sup_norm(Yg) < 1e-10);
  CHECK_THROWS_AS(young_integral(SampledPath(g, 3, std::vector<double>(3 * g.nodes())), br, 1), Error);
}

TEST_CASE("local errors: exact on one step, bounded on longer spans") {
  const auto base = share(lift_brownian_ito(12, 2, Grid::dyadic(0.0, 1.0, 10), 2));
  const auto th = trig_integrand(base);
  const auto one = local_errors(th, 1);
  CHECK(one.max_measured < 1e-14);
  const auto four = local_errors(th, 8);
  CHECK(four.max_measured > 0.0);
  CHECK(four.max_measured <= four.bound);
}

TEST_CASE("backward integral identity") {
  const Grid g = Grid::dyadic(0.0, 1.0, 12);
  const auto bb = share(lift_brownian_ito(21, 2, g, 2));
  CHECK(backward_integral_check(ControlledPath::constant(bb, 1, 2, {1.5, -0.5}), 3000).max_discrepancy < 1e-13);
  // theta = w reflects exactly step by step
  CHECK(backward_integral_check(ControlledPath::of_driver(bb), 4096).max_discrepancy < 1e-12);
  CHECK(backward_integral_check(ControlledPath::of_driver(bb), 0).max_discrepancy == 0.0);

  const auto sm = share(lift_smooth(smooth_test_generator(2, 4), g));
  const auto rep = backward_integral_check(trig_integrand(sm), 3072);
  CHECK(rep.max_discrepancy < 1e-6);
  const auto fine = trig_integrand(share(lift_smooth(smooth_test_generator(2, 4), Grid::dyadic(0.0, 1.0, 12))));
  const auto sdecay = backward_integral_decay(fine, 0.75, {8, 10, 12});
  CHECK(sdecay.discrepancies[2] < sdecay.discrepancies[0]);

  const auto bdecay = backward_integral_decay(trig_integrand(bb), 0.75, {8, 9, 10, 11, 12});
  const double alpha = 0.449;
  CHECK(bdecay.order >= 2 * alpha + alpha - 1 - 0.1);
}

TEST_CASE("stability metrics") {
  const auto base = share(lift_brownian_ito(30, 2, Grid::dyadic(0.0, 1.0, 9), 1));
  const auto a = trig_integrand(base);
  const auto ia = rough_integral(a);
  CHECK(stability_metrics(a, a, ia, ia).lhs == 0.0);
  const auto a2 = a.scaled(2.0);
  const auto a3 = a.scaled(3.0);
  const double l2 = stability_metrics(a, a2, ia, rough_integral(a2)).lhs;
  const double l3 = stability_metrics(a, a3, ia, rough_integral(a3)).lhs;
  CHECK(l3 == doctest::Approx(2.0 * l2).epsilon(1e-9));
  // perturbed driver
  const auto other = share(dilate(*base, 1.01));
  const auto b = trig_integrand(other);
  const auto rep = stability_metrics(a, b, ia, rough_integral(b));
  CHECK(std::isfinite(rep.ratio));
  CHECK(rep.lhs > 0.0);
}

TEST_CASE("order fit") {
  const std::vector<double> h{0.1, 0.05, 0.025};
  CHECK(fit_order(h, {0.01, 0.0025, 0.000625}).order == doctest::Approx(2.0));
  CHECK(fit_order(h, {0.0, 0.0, 0.0}).exact);
  ConvergenceReport r;
  r.levels = {3, 4};
  r.scales = {0.1, 0.05};
  r.errors = {1, 1};
  CHECK_THROWS_AS(finalize_report(r), Error);
}
