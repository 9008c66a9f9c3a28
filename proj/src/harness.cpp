#include "roughcalc/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <unsupported/Eigen/MatrixFunctions>

#include "roughcalc/controlled.hpp"
#include "roughcalc/errors.hpp"
#include "roughcalc/pathwise.hpp"
#include "roughcalc/rde.hpp"
#include "roughcalc/rpde.hpp"
#include "roughcalc/sde.hpp"

namespace roughcalc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

RoughPathPtr share(RoughPath rp) { return std::make_shared<const RoughPath>(std::move(rp)); }

const BundleShape kScalar{1, 1, 1, 1};

double consistency_order(const HolderPair& pair) { return pair.young_exponent() - 1.0 - 0.1; }

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

// theta = (sin w1, cos w2).
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

// Component ((i,j), l) = w^i delta_{jl}, so the integral is int w dw^*.
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

// Simpson on [0, t] of theta(w_r) . w'_r for the nonlinear integrand on the circle.
double circle_oracle(double t) {
  const double tw = 2 * std::numbers::pi;
  auto f = [&](double r) {
    const double c = std::cos(tw * r), s = std::sin(tw * r);
    return c * s * (-tw * s) + c * c * (tw * c);
  };
  const int n = 1 << 16;
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) acc += ((k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0)) * f(t * k / n);
  return acc * t / (3.0 * n);
}

std::vector<double> rk4_oracle(const CoefficientBundle& g, const SmoothGenerator& gen, std::vector<double> y, double t1,
                               int level) {
  const std::size_t n = y.size(), d = gen.dim;
  const std::size_t steps = std::size_t{1} << level;
  const double h = t1 / static_cast<double>(steps);
  std::vector<double> dw(d);
  auto rhs = [&](double t, const std::vector<double>& z) {
    gen.derivative(t, dw);
    const auto gv = g.eval_value(TimePoint{t, 0, nullptr}, z);
    std::vector<double> out(n, 0.0);
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t k = 0; k < d; ++k) out[c] += gv[c * d + k] * dw[k];
    return out;
  };
  auto axpy = [](const std::vector<double>& a, const std::vector<double>& b, double s) {
    std::vector<double> out(a);
    for (std::size_t k = 0; k < a.size(); ++k) out[k] += s * b[k];
    return out;
  };
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    const auto k1 = rhs(t, y);
    const auto k2 = rhs(t + h / 2, axpy(y, k1, h / 2));
    const auto k3 = rhs(t + h / 2, axpy(y, k2, h / 2));
    const auto k4 = rhs(t + h, axpy(y, k3, h));
    for (std::size_t c = 0; c < n; ++c) y[c] += h / 6 * (k1[c] + 2 * k2[c] + 2 * k3[c] + k4[c]);
  }
  return y;
}

double sup_gap(const RdeSolution& a, const RdeSolution& b) {
  const auto& x = a.theta.first().theta().data();
  const auto& y = b.theta.first().theta().data();
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
  return worst;
}

// a = 0.6 + 0.3 sin w, b = 0.2 cos w, lambda = 0.1 t, l = 0.05.
LinearRdeProblem varying_scalar(const RoughPathPtr& driver) {
  const Grid& grid = driver->grid();
  ControlledPath a = ControlledPath::of_function(driver, 1, 1, [](double, std::span<const double> w,
                                                                  std::span<double> v, std::span<double> j) {
    v[0] = 0.6 + 0.3 * std::sin(w[0]);
    j[0] = 0.3 * std::cos(w[0]);
  });
  ControlledPath b = ControlledPath::of_function(driver, 1, 1, [](double, std::span<const double> w,
                                                                  std::span<double> v, std::span<double> j) {
    v[0] = 0.2 * std::cos(w[0]);
    j[0] = -0.2 * std::sin(w[0]);
  });
  std::vector<double> lam(grid.nodes()), l(grid.nodes(), 0.05);
  for (std::size_t i = 0; i < grid.nodes(); ++i) lam[i] = 0.1 * grid.time(i);
  LinearRdeProblem p{driver, 1, a, b, SampledPath(grid, 1, lam), SampledPath(grid, 1, l), {0.8}};
  p.validate();
  return p;
}

LinearRdeProblem random_system(const RoughPathPtr& driver, std::size_t n, std::uint64_t seed, double scale) {
  const std::size_t d = driver->dim(), dd = d * d;
  auto coef = [&](std::size_t k) {
    return scale * std::sin(1.7 * static_cast<double>(k + 1) + 0.37 * static_cast<double>(seed));
  };
  std::vector<double> a(n * n * d), b(n * d), lam(n * n * dd), l(n * dd), y0(n);
  for (std::size_t k = 0; k < a.size(); ++k) a[k] = coef(k);
  for (std::size_t k = 0; k < b.size(); ++k) b[k] = 0.5 * coef(100 + k);
  for (std::size_t k = 0; k < lam.size(); ++k) lam[k] = 0.5 * coef(200 + k);
  for (std::size_t k = 0; k < l.size(); ++k) l[k] = 0.5 * coef(300 + k);
  for (std::size_t k = 0; k < n; ++k) y0[k] = 1.0 - 0.3 * static_cast<double>(k);
  return LinearRdeProblem::constant(driver, n, a, b, lam, l, y0);
}

SecondOrderControlled power_of_driver(const RoughPathPtr& base, int p) {
  return SecondOrderControlled::of_function(base, 1, 1,
                                            [p](std::span<const double> w, std::span<double> v, std::span<double> j,
                                                std::span<double> h) {
                                              v[0] = std::pow(w[0], p);
                                              j[0] = p * std::pow(w[0], p - 1);
                                              h[0] = p > 1 ? p * (p - 1) * std::pow(w[0], p - 2) : 0.0;
                                            });
}

BundlePtr const_sigma(double c) { return affine_bundle(kScalar, {0.0}, {c}); }

double smoothed_gauss(double s0, double var, double x) {
  const double s = s0 + var;
  return std::sqrt(s0 / s) * std::exp(-x * x / (2 * s));
}

double bracket_deviation_from_identity(const BracketPath& br) {
  double worst = 0.0;
  const std::size_t d = br.dim();
  for (std::size_t i = 0; i < br.grid().nodes(); ++i) {
    const double t = br.grid().time(i) - br.grid().t0();
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        worst = std::max(worst, std::abs(br.at(i)[a * d + b] - (a == b ? t : 0.0)));
  }
  return worst;
}

// ---- studies ----

bool brownian_driver(const StudyConfig& c, bool default_brownian) {
  if (c.driver.empty()) return default_brownian;
  require(c.driver == "smooth" || c.driver == "brownian", ErrorKind::kParameter,
          "driver must be smooth or brownian, got '" + c.driver + "'");
  return c.driver == "brownian";
}

double grid_h(int level) { return std::ldexp(1.0, -level); }

ConvergenceReport integral_refinement(const StudyConfig& c) {
  ConvergenceReport r;
  const int top = c.levels.back();
  if (!brownian_driver(c, false)) {
    // coarse lifts carry exact per-step areas, so every level is a coarsening of one deep lift
    const RoughPath fine = lift_smooth(circle_generator(), Grid::dyadic(0.0, 1.0, std::max(top + 2, 14)));
    const double oracle = circle_oracle(0.75);
    for (int level : c.levels) {
      const auto base = share(refine(fine, level));
      const auto I = rough_integral(nonlinear_integrand(base));
      r.errors.push_back(std::abs(I.theta()(*base->grid().node_of(0.75), 0) - oracle));
    }
    r.threshold = 1.8;
    r.note = "circle driver, theta = (w1 w2, w1^2), error at t = 0.75 against Simpson quadrature";
  } else {
    const int ref = top + 4;
    const RoughPath fine = lift_brownian_ito(c.seed, 2, Grid::dyadic(0.0, 1.0, ref), 2, c.pair);
    const auto I_ref = rough_integral(nonlinear_integrand(share(fine)));
    for (int level : c.levels) {
      const auto base = share(refine(fine, level));
      const auto I = rough_integral(nonlinear_integrand(base));
      const std::size_t stride = std::size_t{1} << (ref - level);
      double worst = 0.0;
      for (std::size_t i = 0; i < base->grid().nodes(); ++i)
        worst = std::max(worst, std::abs(I.theta()(i, 0) - I_ref.theta()(i * stride, 0)));
      r.errors.push_back(worst);
    }
    r.threshold = consistency_order(c.pair);
    r.note = "Ito lift, theta = (w1 w2, w1^2), sup gap on coarse nodes against level " + std::to_string(ref);
  }
  return r;
}

ConvergenceReport rde_vs_oracle(const StudyConfig& c) {
  ConvergenceReport r;
  const BundlePtr g = rotation_bundle(2);
  const std::vector<double> y0{1.0, 0.2};
  if (!brownian_driver(c, false)) {
    const SmoothGenerator gen = smooth_test_generator(2, c.seed);
    const auto oracle = rk4_oracle(*g, gen, y0, 1.0, 18);
    for (int level : c.levels) {
      RdeProblem p;
      p.driver = share(lift_smooth(gen, Grid::dyadic(0.0, 1.0, level)));
      p.g = g;
      p.y0 = y0;
      const auto last = solve_rde_step(p).theta.first().value(p.driver->grid().steps());
      r.errors.push_back(std::hypot(last[0] - oracle[0], last[1] - oracle[1]));
    }
    r.threshold = 1.8;
    r.note = "rotation field on a smooth 2-d driver, error at T against RK4 at level 18";
  } else {
    const int ref = c.levels.back() + 4;
    const RoughPath fine = lift_brownian_ito(c.seed, 2, Grid::dyadic(0.0, 1.0, ref), 2, c.pair);
    RdeProblem p;
    p.g = g;
    p.y0 = y0;
    p.driver = share(fine);
    const auto want = solve_rde_step(p).theta.first().value(fine.grid().steps());
    const std::vector<double> target(want.begin(), want.end());
    for (int level : c.levels) {
      p.driver = share(refine(fine, level));
      const auto last = solve_rde_step(p).theta.first().value(p.driver->grid().steps());
      r.errors.push_back(std::hypot(last[0] - target[0], last[1] - target[1]));
    }
    r.threshold = consistency_order(c.pair);
    r.note = "rotation field on the Ito lift, error at T against the step scheme at level " + std::to_string(ref);
  }
  return r;
}

ConvergenceReport backward_identity(const StudyConfig& c) {
  ConvergenceReport r;
  const bool brownian = brownian_driver(c, true);
  const Grid fine_grid = Grid::dyadic(0.0, 1.0, c.levels.back());
  const auto base = brownian ? share(lift_brownian_ito(c.seed, 2, fine_grid, 2, c.pair))
                             : share(lift_smooth(smooth_test_generator(2, c.seed), fine_grid));
  const BackwardDecayReport d = backward_integral_decay(trig_integrand(base), 0.75, c.levels);
  r.errors = d.discrepancies;
  r.threshold = brownian ? consistency_order(c.pair) : 1.8;
  r.note = std::string(brownian ? "Ito" : "smooth") +
           " lift, theta = (sin w1, cos w2), forward/backward mismatch on [0, 0.75]";
  return r;
}

ConvergenceReport taylor_order(const StudyConfig& c) {
  require(c.power >= 1 && c.power <= 6, ErrorKind::kParameter, "taylor-order power must be in 1..6");
  ConvergenceReport r;
  const bool brownian = brownian_driver(c, true);
  const Grid fine_grid = Grid::dyadic(0.0, 1.0, c.levels.back());
  const RoughPath fine = brownian ? lift_brownian_ito(c.seed, 1, fine_grid, 2, c.pair)
                                  : lift_smooth(smooth_test_generator(1, c.seed), fine_grid);
  for (int level : c.levels) {
    const auto base = share(level == c.levels.back() ? fine : refine(fine, level));
    const TaylorReport rep = taylor_residual(power_of_driver(base, c.power), 1);
    r.errors.push_back(rep.profile.rms.front());
  }
  r.threshold = c.pair.young_exponent() - 0.1;
  r.note = std::string(brownian ? "Ito" : "smooth") + " driver, theta = w^" + std::to_string(c.power) +
           ", one-step Taylor residual (RMS over steps)";
  return r;
}

ConvergenceReport rpde_refinement(const StudyConfig& c) {
  ConvergenceReport r;
  const bool brownian = brownian_driver(c, true);
  for (int level : c.levels) {
    require(level >= 6, ErrorKind::kParameter, "rpde-roundtrip levels must be at least 6");
    RpdeProblem p;
    p.u0 = make_initial("gauss:0.25");
    p.sigma = make_bundle("trig:0.3,0.2", kScalar);
    p.f = make_rhs("heat:0.1", 1);
    const Grid grid = Grid::dyadic(0.0, 1.0, level);
    p.driver = brownian ? sde_driver(c.seed, 1, grid) : share(lift_smooth(smooth_test_generator(1, c.seed), grid));
    RpdeOptions o;
    o.dx = std::ldexp(1.0, -(level - 4));
    o.track_halving = false;
    o.t0_count = 9;
    r.errors.push_back(rpde_roundtrip(p, o).residual);
  }
  r.threshold = consistency_order(c.pair);
  r.note = "sigma = 0.3 sin x + 0.2 cos x, f = 0.1 u_xx, dx = 16 h; one-step residual of the integral form";
  return r;
}

// ---- acceptance ----

Check below(std::string name, double value, double bound) {
  return {std::move(name), value, bound, false, value < bound};
}

Check at_least(std::string name, double value, double bound) {
  return {std::move(name), value, bound, true, value >= bound};
}

std::vector<Check> exact_identities() {
  std::vector<Check> out;
  const Grid g12 = Grid::dyadic(0.0, 1.0, 12), g10 = Grid::dyadic(0.0, 1.0, 10);
  const RoughPath ito = lift_brownian_ito(1, 3, g12, 2);
  const RoughPath ito2 = lift_brownian_ito(5, 2, g10, 2);
  const RoughPath str2 = lift_brownian_stratonovich(5, 2, g10, 2);
  double chen = 0.0;
  for (const RoughPath* rp : {&ito, &ito2, &str2}) chen = std::max(chen, chen_defect(*rp));
  chen = std::max(chen, chen_defect(lift_smooth(circle_generator(), g10)));
  chen = std::max(chen, chen_defect(lift_smooth(smooth_test_generator(3, 5), g10)));
  chen = std::max(chen, chen_defect(lift_smooth(linear_generator({1.0, -2.0}), g10)));
  chen = std::max(chen, chen_defect(refine(ito, 9)));
  chen = std::max(chen, chen_defect(backward_lift(ito, 3000)));
  out.push_back(below("Chen defect of every lift", chen, 1e-12));

  double tele = 0.0;
  for (const bool smooth : {false, true}) {
    const Grid g = Grid::dyadic(0.0, 1.0, 9);
    const auto base = share(smooth ? lift_smooth(smooth_test_generator(3, 5), g) : lift_brownian_ito(8, 3, g, 2));
    const auto I = rough_integral(outer_integrand(base));
    const std::vector<double> prefix = chen_prefix(base->second(), base->omega());
    for (std::size_t t = 0; t < g.nodes(); ++t)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double want =
              base->omega()(0, i) * (base->omega()(t, j) - base->omega()(0, j)) + prefix[t * 9 + i * 3 + j];
          tele = std::max(tele, std::abs(I.theta()(t, i * 3 + j) - want));
        }
  }
  out.push_back(below("self integral = w_0 w_{0,t}^* + second_{0,t}", tele, 1e-12));

  double diff = 0.0;
  for (std::size_t i = 0; i < g10.steps(); ++i)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b)
        diff = std::max(diff, std::abs(str2.second().step(i)[a * 2 + b] - ito2.second().step(i)[a * 2 + b] -
                                       (a == b ? g10.h() / 2 : 0.0)));
  out.push_back(below("Stratonovich - Ito second level - h/2 I", diff, 1e-12));

  double asym = 0.0;
  for (const RoughPath* rp : {&ito, &ito2, &str2}) {
    const BracketPath br = bracket(*rp);
    const std::size_t d = rp->dim();
    for (std::size_t i = 0; i < br.grid().nodes(); ++i)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < a; ++b) asym = std::max(asym, std::abs(br.at(i)[a * d + b] - br.at(i)[b * d + a]));
  }
  out.push_back(below("bracket asymmetry", asym, 1e-12));
  return out;
}

std::vector<Check> ito_bracket() {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RoughPath rp = lift_brownian_ito(seed, 2, Grid::dyadic(0.0, 1.0, 16), 0);
    if (bracket_deviation_from_identity(bracket(rp)) < 0.05) ++good;
  }
  return {at_least("seeds with sup |<w> - t I| < 0.05 T (of 100)", good, 95)};
}

std::vector<Check> integral_orders(const HolderPair& pair) {
  StudyConfig smooth;
  smooth.pair = pair;
  smooth.levels = {6, 7, 8, 9, 10, 11, 12};
  smooth.driver = "smooth";
  const ConvergenceReport a = run_convergence("integral-refinement", smooth);
  StudyConfig rough;
  rough.pair = pair;
  rough.levels = {8, 9, 10, 11, 12, 13, 14};
  rough.driver = "brownian";
  rough.seed = 3;
  const ConvergenceReport b = run_convergence("integral-refinement", rough);
  return {at_least("circle order, levels 6-12", a.fit.order, 1.8),
          at_least("Brownian order, levels 8-14", b.fit.order, consistency_order(pair))};
}

std::vector<Check> backward_checks(const HolderPair& pair) {
  const auto sm = share(lift_smooth(smooth_test_generator(2, 4), Grid::dyadic(0.0, 1.0, 12)));
  const double smooth = backward_integral_check(trig_integrand(sm), 3072).max_discrepancy;
  StudyConfig c;
  c.pair = pair;
  c.levels = {8, 9, 10, 11, 12, 13, 14};
  c.driver = "brownian";
  c.seed = 21;
  const ConvergenceReport d = run_convergence("backward-identity", c);
  return {below("smooth discrepancy, level 12", smooth, 1e-6),
          at_least("Brownian decay order, levels 8-14", d.fit.order, consistency_order(pair))};
}

std::vector<Check> rde_checks() {
  std::vector<Check> out;
  {
    const SmoothGenerator gen = smooth_test_generator(2, 8);
    const BundlePtr g = rotation_bundle(2);
    RdeProblem p;
    p.driver = share(lift_smooth(gen, Grid::dyadic(0.0, 1.0, 12)));
    p.g = g;
    p.y0 = {1.0, 0.2};
    const auto last = solve_rde_step(p).theta.first().value(p.driver->grid().steps());
    const auto oracle = rk4_oracle(*g, gen, p.y0, 1.0, 18);
    out.push_back(below("nonlinear RDE vs RK4 level 18, level 12", std::hypot(last[0] - oracle[0], last[1] - oracle[1]),
                        1e-5));
  }
  {
    RdeProblem p;
    p.driver = share(lift_brownian_ito(5, 1, Grid::dyadic(0.0, 1.0, 12), 2));
    p.g = affine_bundle(kScalar, {0.8}, {0.2});
    p.f = constant_bundle(kScalar, {0.1});
    p.y0 = {1.0};
    out.push_back(below("step vs Picard, linear scalar", sup_gap(solve_rde_step(p), solve_rde_picard(p)), 1e-8));
  }
  {
    RdeProblem p;
    p.driver = share(lift_brownian_ito(7, 2, Grid::dyadic(0.0, 1.0, 10), 2));
    p.g = rotation_bundle(2);
    p.f = make_bundle("const:0.1,0,0,0.1,0.2,0,0,-0.1", {2, 2, 4, 2});
    p.y0 = {0.5, 0.1};
    const RdeSolution full = solve_rde_step(p);
    RdeProblem left = p, right = p;
    left.end_node = 512;
    right.start_node = 512;
    const RdeSolution l = solve_rde_step(left);
    const auto mid = l.theta.first().value(512);
    right.y0 = {mid[0], mid[1]};
    const RdeSolution r = solve_rde_step(right);
    double gap = 0.0;
    for (std::size_t i = 0; i <= 512; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        gap = std::max(gap, std::abs(full.theta.first().value(i)[c] - l.theta.first().value(i)[c]));
        gap = std::max(gap, std::abs(full.theta.first().value(512 + i)[c] - r.theta.first().value(i)[c]));
      }
    out.push_back(below("flow-property stitching", gap, 1e-10));
  }
  return out;
}

std::vector<Check> linear_rde_checks() {
  std::vector<Check> out;
  {
    const auto smooth = share(lift_smooth(smooth_test_generator(1, 97), Grid::dyadic(0.0, 1.0, 12)));
    const LinearRdeProblem p = varying_scalar(smooth);
    out.push_back(
        below("explicit 1-d vs Picard, smooth level 12", sup_gap(solve_linear_1d(p), solve_rde_picard(p.as_rde())), 1e-8));
    const auto rough = share(lift_brownian_ito(1, 1, Grid::dyadic(0.0, 1.0, 14), 2));
    const LinearRdeProblem q = varying_scalar(rough);
    out.push_back(below("explicit 1-d vs Picard, Brownian level 14",
                        sup_gap(solve_linear_1d(q), solve_rde_picard(q.as_rde())), 1e-5));
  }
  const auto base = share(lift_brownian_ito(14, 2, Grid::dyadic(0.0, 1.0, 12), 2));
  for (std::size_t n : {2u, 3u}) {
    const LinearRdeProblem p = random_system(base, n, 5, 0.4);
    out.push_back(below("Riccati vs Picard, n = " + std::to_string(n),
                        sup_gap(solve_linear_riccati(p), solve_rde_picard(p.as_rde())), 1e-5));
  }
  {
    const auto sm = share(lift_smooth(smooth_test_generator(2, 6), Grid::dyadic(0.0, 1.0, 12)));
    Eigen::Matrix2d a1, a2;
    a1 << 0.3, 0.8, -0.8, 0.3;
    a2 << -0.2, -0.5, 0.5, -0.2;
    std::vector<double> a(8);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        a[(i * 2 + j) * 2 + 0] = a1(i, j);
        a[(i * 2 + j) * 2 + 1] = a2(i, j);
      }
    const auto p = LinearRdeProblem::constant(sm, 2, a, {}, {}, {}, {1.0, -0.5});
    const RdeSolution r = solve_linear_riccati(p);
    const Eigen::Vector2d y0(1.0, -0.5);
    double worst = 0.0;
    for (std::size_t i = 0; i < sm->grid().nodes(); ++i) {
      const Eigen::Matrix2d m =
          a1 * (sm->omega()(i, 0) - sm->omega()(0, 0)) + a2 * (sm->omega()(i, 1) - sm->omega()(0, 1));
      const Eigen::Vector2d y = m.exp() * y0;
      worst = std::max(worst, std::hypot(r.theta.first().value(i)[0] - y[0], r.theta.first().value(i)[1] - y[1]));
    }
    out.push_back(below("commuting constant matrices vs matrix exponential", worst, 1e-6));
  }
  return out;
}

std::vector<Check> sde_checks() {
  std::vector<Check> out;
  int good = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SdeProblem p{affine_bundle(kScalar, {1.0}, {}), nullptr, {1.0}};
    const SdeResult r = solve_sde_pathwise(seed, p, Grid::dyadic(0.0, 1.0, 14));
    const auto& w = r.driver->omega();
    std::vector<double> exact(w.nodes());
    for (std::size_t i = 0; i < w.nodes(); ++i) exact[i] = std::exp(w(i, 0) - 0.5 * w.grid().time(i));
    if (relative_sup_gap(r.solution.theta.first().theta(), SampledPath(w.grid(), 1, exact)) < 0.02) ++good;
  }
  out.push_back(at_least("GBM seeds within 2% at level 14 (of 100)", good, 95));

  double worst = 0.0;
  const SdeProblem pd{adapted_lipschitz_bundle(kScalar, 0.5, 2.0), nullptr, {0.0}};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SdeResult r = solve_sde_pathwise(seed, pd, Grid::dyadic(0.0, 1.0, 14));
    const SampledPath em = euler_maruyama(seed, pd, Grid::dyadic(0.0, 1.0, 20));
    worst = std::max(worst, relative_sup_gap(r.solution.theta.first().theta(), em));
  }
  out.push_back(below("path-dependent sigma vs Euler-Maruyama level 20", worst, 0.05));

  const SdeProblem gbm{affine_bundle(kScalar, {1.0}, {}), nullptr, {1.0}};
  const ContinuityReport c = omega_continuity_probe(gbm, 3, Grid::dyadic(0.0, 1.0, 11), 0.2, 4);
  out.push_back(at_least("continuity probe monotone over 4 scales", c.monotone && c.pass ? 1.0 : 0.0, 1.0));
  return out;
}

std::vector<Check> calculus_checks(const HolderPair& pair) {
  std::vector<Check> out;
  {
    const auto base = share(lift_brownian_ito(11, 1, Grid::dyadic(0.0, 1.0, 14), 2, pair));
    const ControlledPath eta = compose(*poly_bundle(kScalar, {0, 0, 1}), ControlledPath::of_driver(base));
    out.push_back(at_least("chain-rule remainder order", remainder_order(eta).profile.fit.order,
                           pair.alpha + pair.beta - 0.05));
  }
  {
    const auto base = share(lift_brownian_ito(9, 1, Grid::dyadic(0.0, 1.0, 14), 2, pair));
    out.push_back(at_least("Taylor residual order (w^3)", taylor_residual(power_of_driver(base, 3)).profile.fit.order,
                           pair.young_exponent() - 0.1));
  }
  double comm = 0.0;
  for (const BundlePtr& g : {poly_bundle(kScalar, {1, 2, 3}), omega_linear_bundle(kScalar, 0.9),
                             omega_quadratic_bundle(kScalar, 0.9)}) {
    const CommutationReport r = commutation_check(*g);
    comm = std::max({comm, r.path_gap, r.time_gap});
  }
  out.push_back(below("commutation gap", comm, 1e-5));
  {
    const Grid grid = Grid::dyadic(0.0, 1.0, 14);
    const auto base = share(lift_brownian_ito(21, 1, grid, 2, pair));
    const ControlledPath eta =
        ito_ventzell_apply(*poly_bundle(kScalar, {0, 0, 1}), SecondOrderControlled::of_driver(base));
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
      const double w = base->omega()(i, 0);
      worst = std::max(worst, std::abs(eta.value(i)[0] - w * w));
    }
    out.push_back(below("Ito-Ventzell reconstruction of w^2 / T", worst / grid.span(), 2e-2));
  }
  return out;
}

std::vector<Check> rpde_checks(const HolderPair& pair) {
  std::vector<Check> out;
  {
    const auto rp = share(lift_smooth(smooth_test_generator(1, 97), Grid::dyadic(0.0, 1.0, 12)));
    CharacteristicOptions o;
    o.x = Lattice::padded(-3, 3, 1.0 / 32);
    o.y = Lattice::padded(-2, 2, 1.0 / 8);
    const auto ch = build_characteristics(make_bundle("trig:0.5,0.3", kScalar), nullptr, rp, o);
    out.push_back(below("|phi(t, theta^x_t) - x|, smooth level 12", ch.maps->roundtrip_gap(), 1e-6));
  }
  {
    CharacteristicOptions o;
    o.x = Lattice::padded(-2, 2, 1.0 / 16);
    o.y = Lattice::padded(-1.5, 1.5, 1.0 / 8);
    o.t0_count = 9;
    const auto st = flow_rde_refinement(
        make_bundle("trig:0.5,0.3", kScalar), make_xy_bundle("sin:0.4", 1),
        [&](int level) { return share(lift_brownian_ito(7, 1, Grid::dyadic(0, 1, level), 4, pair)); }, {7, 8, 9, 10},
        o, pair);
    out.push_back(at_least("flow-RDE residual order (min of phi, psi)", std::min(st.phi_fit.order, st.psi_fit.order),
                           pair.young_exponent() - 0.15));
  }
  {
    const auto rp = sde_driver(3, 1, Grid::dyadic(0, 1, 12));
    const auto br = bracket(*rp);
    const double sigma = 0.7, kappa = sigma * sigma / 2, s0 = 0.25;
    RpdeProblem p;
    p.u0 = make_initial("gauss:0.25");
    p.sigma = const_sigma(sigma);
    p.f = make_rhs("heat:0.245", 1);
    p.driver = rp;
    const RpdeReport rep = rpde_roundtrip(p);
    double err = 0.0;
    for (std::size_t q = 0; q < rep.nodes.size(); ++q) {
      const std::size_t k = rep.nodes[q];
      const double var = 2 * (kappa - sigma * sigma / 2) * br.at(k)[0];
      const double shift = sigma * (rp->omega()(k, 0) - rp->omega()(0, 0));
      for (std::size_t j = 0; j < rep.x.n; ++j)
        err = std::max(err, std::abs(rep.u[q * rep.x.n + j] - smoothed_gauss(s0, var, rep.x.at(j) + shift)));
    }
    out.push_back(below("transport vs composed oracle, level 12, dx = 1/256", err, 5e-3));
  }
  {
    const auto rp = sde_driver(8, 1, Grid::dyadic(0, 1, 12));
    const auto br = bracket(*rp);
    RpdeProblem p;
    p.u0 = make_initial("gauss:0.2");
    p.sigma = const_sigma(0.0);
    p.f = make_rhs("heat:0.1", 1);
    p.driver = rp;
    RpdeOptions o;
    o.margin = 2.0;
    const RpdeReport rep = rpde_roundtrip(p, o);
    double err = 0.0;
    for (std::size_t q = 0; q < rep.nodes.size(); ++q)
      for (std::size_t j = 0; j < rep.x.n; ++j)
        err = std::max(err, std::abs(rep.u[q * rep.x.n + j] -
                                     smoothed_gauss(0.2, 0.2 * br.at(rep.nodes[q])[0], rep.x.at(j))));
    out.push_back(below("sigma = 0 vs heat kernel", err, 1e-3));
  }
  return out;
}

struct Criterion {
  int id;
  const char* tag;
  const char* title;
  double time_limit;  // seconds, 0 for none
  std::function<std::vector<Check>()> run;
};

std::vector<Criterion> criteria(const HolderPair& pair) {
  return {
      {1, "exact-identities", "exact grid identities", 60.0, exact_identities},
      {2, "bracket", "bracket of the Ito Brownian lift", 120.0, ito_bracket},
      {3, "integral-refinement", "rough-integral refinement", 0.0, [pair] { return integral_orders(pair); }},
      {4, "backward-identity", "backward-integral identity", 0.0, [pair] { return backward_checks(pair); }},
      {5, "rde-oracle", "RDE vs oracle", 0.0, rde_checks},
      {6, "riccati", "linear RDE", 0.0, linear_rde_checks},
      {7, "sde", "SDE pathwise", 0.0, sde_checks},
      {8, "calculus", "calculus orders and reconstruction", 0.0, [pair] { return calculus_checks(pair); }},
      {9, "rpde", "characteristics and RPDE", 0.0, [pair] { return rpde_checks(pair); }},
  };
}

}  // namespace

std::vector<std::string> study_names() {
  return {"integral-refinement", "rde-vs-oracle", "backward-identity", "taylor-order", "rpde-roundtrip"};
}

std::vector<int> default_levels(const std::string& study) {
  if (study == "integral-refinement" || study == "rde-vs-oracle") return {6, 7, 8, 9, 10, 11, 12};
  if (study == "backward-identity" || study == "taylor-order") return {8, 9, 10, 11, 12, 13, 14};
  if (study == "rpde-roundtrip") return {8, 9, 10, 11, 12};
  throw Error(ErrorKind::kParameter, "unknown study '" + study + "'");
}

ConvergenceReport run_convergence(const std::string& study, const StudyConfig& config) {
  config.pair.validate();
  const auto names = study_names();
  require(std::find(names.begin(), names.end(), study) != names.end(), ErrorKind::kParameter,
          "unknown study '" + study + "'");
  require(!config.levels.empty(), ErrorKind::kParameter, "levels list is empty");
  require(config.levels.size() >= 3, ErrorKind::kParameter, "an order needs at least three levels");
  for (std::size_t k = 0; k < config.levels.size(); ++k) {
    require(config.levels[k] >= 1 && config.levels[k] <= 22, ErrorKind::kParameter, "levels must lie in 1..22");
    require(k == 0 || config.levels[k] > config.levels[k - 1], ErrorKind::kOrdering,
            "levels must be strictly increasing");
  }
  ConvergenceReport r;
  if (study == "integral-refinement") r = integral_refinement(config);
  else if (study == "rde-vs-oracle") r = rde_vs_oracle(config);
  else if (study == "backward-identity") r = backward_identity(config);
  else if (study == "taylor-order") r = taylor_order(config);
  else r = rpde_refinement(config);
  r.study = study;
  r.levels = config.levels;
  r.scales.clear();
  for (int level : config.levels) r.scales.push_back(grid_h(level));
  if (config.threshold) r.threshold = *config.threshold;
  finalize_report(r);
  return r;
}

std::vector<std::string> acceptance_tags() {
  std::vector<std::string> tags;
  for (const auto& c : criteria(HolderPair{})) tags.push_back(c.tag);
  tags.push_back("runtime");
  return tags;
}

AcceptanceSummary run_acceptance(const std::string& selector) {
  const HolderPair pair{};
  const auto all = criteria(pair);
  const bool everything = selector == "all" || selector == "runtime" || selector == "10";
  bool known = everything;
  for (const auto& c : all) known = known || selector == c.tag || selector == std::to_string(c.id);
  require(known, ErrorKind::kParameter, "unknown acceptance selector '" + selector + "'");

  AcceptanceSummary s;
  const auto t_all = Clock::now();
  for (const auto& c : all) {
    if (!everything && selector != c.tag && selector != std::to_string(c.id)) continue;
    CriterionResult r{c.id, c.tag, c.title, {}, false, 0.0, {}};
    const auto t0 = Clock::now();
    try {
      r.checks = c.run();
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = seconds_since(t0);
    if (c.time_limit > 0.0) r.checks.push_back(below("runtime seconds", r.seconds, c.time_limit));
    r.pass = r.error.empty() && std::all_of(r.checks.begin(), r.checks.end(), [](const Check& k) { return k.pass; });
    s.criteria.push_back(std::move(r));
  }
  s.seconds = seconds_since(t_all);
  if (everything) {
    CriterionResult r{10, "runtime", "full suite single-threaded", {}, false, s.seconds, {}};
    r.checks.push_back(below("suite seconds", s.seconds, 1200.0));
    r.pass = r.checks.back().pass;
    s.criteria.push_back(std::move(r));
  }
  for (const auto& r : s.criteria) (r.pass ? s.passed : s.failed) += 1;
  return s;
}

}  // namespace roughcalc
