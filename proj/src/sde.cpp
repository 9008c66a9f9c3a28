#include "roughcalc/sde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace roughcalc {

void SdeProblem::validate() const {
  require(sigma != nullptr, ErrorKind::kInput, "SDE needs sigma");
  const std::size_t n = x0.size();
  require(n > 0, ErrorKind::kDimension, "empty initial value");
  require(sigma->in_dim == n && sigma->rows == n && sigma->cols == sigma->driver_dim, ErrorKind::kDimension,
          "sigma must map R^n to R^{n x d}");
  if (b)
    require(b->in_dim == n && b->rows == n && b->cols == 1 && b->driver_dim == sigma->driver_dim,
            ErrorKind::kDimension, "b must map R^n to R^n");
}

SamplePathDiagnostics sample_path_diagnostics(const RoughPath& rp) {
  SamplePathDiagnostics out;
  out.rough_norm = rough_path_norm(rp);
  const BracketPath br = bracket(rp);
  const Grid& grid = rp.grid();
  const std::size_t d = rp.dim();
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const auto v = br.at(i);
    const double t = grid.time(i) - grid.t0();
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t c = 0; c < d; ++c)
        out.bracket_gap = std::max(out.bracket_gap, std::abs(v[a * d + c] - (a == c ? t : 0.0)));
  }
  out.flagged = !std::isfinite(out.rough_norm) || out.bracket_gap > 0.05 * grid.span();
  return out;
}

RoughPathPtr sde_driver(std::uint64_t seed, std::size_t d, const Grid& grid, const SdeOptions& opt) {
  const int level = grid.level_or_throw();
  const int depth = std::max(0, opt.fine_level - level);
  return std::make_shared<const RoughPath>(lift_brownian_ito(seed, d, grid, depth, opt.pair));
}

RdeProblem sde_as_rde(const SdeProblem& p, RoughPathPtr driver) {
  p.validate();
  require(driver->dim() == p.driver_dim(), ErrorKind::kDimension, "driver dimension differs from sigma");
  RdeProblem r;
  r.driver = std::move(driver);
  r.g = p.sigma;
  if (p.b) r.f = drift_as_bracket(p.b, p.driver_dim());
  r.y0 = p.x0;
  return r;
}

RdeSolution solve_sde_on(const SdeProblem& p, RoughPathPtr driver, bool picard) {
  const RdeProblem r = sde_as_rde(p, std::move(driver));
  return picard ? solve_rde_picard(r) : solve_rde_step(r);
}

SdeResult solve_sde_pathwise(std::uint64_t seed, const SdeProblem& p, const Grid& grid, const SdeOptions& opt) {
  p.validate();
  RoughPathPtr driver = sde_driver(seed, p.driver_dim(), grid, opt);
  RdeSolution sol = solve_sde_on(p, driver, opt.picard);
  const SamplePathDiagnostics diag = sample_path_diagnostics(*driver);
  return SdeResult{std::move(driver), std::move(sol), diag};
}

SampledPath euler_maruyama(std::uint64_t seed, const SdeProblem& p, const Grid& grid) {
  p.validate();
  const std::size_t n = p.state_dim(), d = p.driver_dim();
  const SampledPath w = brownian_path(seed, d, grid);
  const PathContext ctx(w);
  std::vector<double> values(grid.nodes() * n);
  std::vector<double> x = p.x0;
  std::copy(x.begin(), x.end(), values.begin());
  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const TimePoint tp{grid.time(j), j, &ctx};
    const auto s = p.sigma->eval_value(tp, x);
    std::vector<double> drift;
    if (p.b) drift = p.b->eval_value(tp, x);
    const double dt = grid.time(j + 1) - grid.time(j);
    for (std::size_t c = 0; c < n; ++c) {
      double inc = 0.0;
      for (std::size_t k = 0; k < d; ++k) inc += s[c * d + k] * (w(j + 1, k) - w(j, k));
      if (p.b) inc += drift[c] * dt;
      x[c] += inc;
    }
    std::copy(x.begin(), x.end(), values.begin() + (j + 1) * n);
  }
  return SampledPath(grid, n, std::move(values));
}

double relative_sup_gap(const SampledPath& coarse, const SampledPath& fine) {
  require(coarse.dim() == fine.dim(), ErrorKind::kDimension, "paths have different dimensions");
  const std::size_t cs = coarse.grid().steps(), fs = fine.grid().steps();
  require(cs > 0 && fs % cs == 0, ErrorKind::kAlignment, "fine grid does not refine the coarse grid");
  const std::size_t r = fs / cs;
  double gap = 0.0, scale = 0.0;
  for (double v : fine.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i <= cs; ++i)
    for (std::size_t c = 0; c < coarse.dim(); ++c) gap = std::max(gap, std::abs(coarse(i, c) - fine(i * r, c)));
  return scale > 0.0 ? gap / scale : gap;
}

ItoForm stratonovich_to_ito(const BundlePtr& sigma_ptr, const BundlePtr& b_ptr) {
  require(sigma_ptr != nullptr, ErrorKind::kInput, "missing sigma");
  const CoefficientBundle& sigma = *sigma_ptr;
  const std::size_t n = sigma.in_dim, d = sigma.driver_dim;
  require(sigma.rows == n && sigma.cols == d, ErrorKind::kDimension, "sigma must map R^n to R^{n x d}");
  require(static_cast<bool>(sigma.dy), ErrorKind::kCapability, "the correction needs d_y sigma");
  require(sigma.path_free || static_cast<bool>(sigma.path), ErrorKind::kCapability, "the correction needs d_w sigma");
  if (b_ptr)
    require(b_ptr->in_dim == n && b_ptr->rows == n && b_ptr->cols == 1, ErrorKind::kDimension,
            "b must map R^n to R^n");

  CoefficientBundle out;
  out.name = "ito(" + sigma.name + (b_ptr ? "," + b_ptr->name : "") + ")";
  out.in_dim = n;
  out.rows = n;
  out.cols = 1;
  out.driver_dim = d;
  out.regularity = Regularity::kC2Beta;
  out.path_free = sigma.path_free && (!b_ptr || b_ptr->path_free);
  out.uses_path = sigma.uses_path || (b_ptr && b_ptr->uses_path);
  // correction_c = 1/2 sum_k (path[(c,k)][k] + sum_j dy[(c,k)][j] sigma[(j,k)])
  out.value = [sigma_ptr, b_ptr, n, d](const TimePoint& tp, std::span<const double> y, std::span<double> o) {
    const auto s = sigma_ptr->eval_value(tp, y);
    const auto sy = sigma_ptr->eval_dy(tp, y);
    const auto sp = sigma_ptr->eval_path(tp, y);
    std::vector<double> base(n, 0.0);
    if (b_ptr) base = b_ptr->eval_value(tp, y);
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t v = c * d + k;
        acc += sp[v * d + k];
        for (std::size_t j = 0; j < n; ++j) acc += sy[v * n + j] * s[j * d + k];
      }
      o[c] = base[c] + 0.5 * acc;
    }
  };
  out.dy = [sigma_ptr, b_ptr, n, d](const TimePoint& tp, std::span<const double> y, std::span<double> o) {
    const auto s = sigma_ptr->eval_value(tp, y);
    const auto sy = sigma_ptr->eval_dy(tp, y);
    const auto syy = sigma_ptr->eval_dyy(tp, y);
    const auto spy = sigma_ptr->eval_path_dy(tp, y);
    std::vector<double> base(n * n, 0.0);
    if (b_ptr) base = b_ptr->eval_dy(tp, y);
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t v = c * d + k;
          acc += spy[(v * d + k) * n + i];
          for (std::size_t j = 0; j < n; ++j)
            acc += syy[(v * n + j) * n + i] * s[j * d + k] + sy[v * n + j] * sy[(j * d + k) * n + i];
        }
        o[c * n + i] = base[c * n + i] + 0.5 * acc;
      }
  };
  return {sigma_ptr, std::make_shared<const CoefficientBundle>(std::move(out))};
}

namespace {

// Smooth bump vanishing at both ends of the grid, a different amplitude per component.
SampledPath bump(const Grid& grid, std::size_t d, double scale) {
  std::vector<double> v(grid.nodes() * d);
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const double s = std::sin(std::numbers::pi * (grid.time(i) - grid.t0()) / grid.span());
    for (std::size_t c = 0; c < d; ++c) v[i * d + c] = scale * (1.0 + 0.5 * static_cast<double>(c)) * s * s;
  }
  return SampledPath(grid, d, std::move(v));
}

double sup_diff(const SampledPath& a, const SampledPath& b) {
  double out = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k) out = std::max(out, std::abs(a.data()[k] - b.data()[k]));
  return out;
}

}  // namespace

ContinuityReport omega_continuity_probe(const SdeProblem& p, std::uint64_t seed, const Grid& grid, double eps,
                                        std::size_t scales, const SdeOptions& opt) {
  require(scales >= 2, ErrorKind::kParameter, "need at least two perturbation scales");
  require(eps >= 0.0, ErrorKind::kParameter, "perturbation size must be non-negative");
  const RoughPathPtr base = sde_driver(seed, p.driver_dim(), grid, opt);
  const RdeSolution x = solve_sde_on(p, base, opt.picard);
  ContinuityReport rep;
  for (std::size_t k = 0; k < scales; ++k) {
    ContinuityRow row;
    row.scale = eps * std::ldexp(1.0, -static_cast<int>(k));
    const auto pert = std::make_shared<const RoughPath>(translate(*base, bump(grid, p.driver_dim(), row.scale)));
    const RdeSolution xk = solve_sde_on(p, pert, opt.picard);
    row.driver_distance = rough_path_distance(*pert, *base);
    row.solution_distance = controlled_distance(xk.theta.first(), x.theta.first()).full +
                            sup_diff(xk.theta.first().theta(), x.theta.first().theta());
    row.ratio = row.driver_distance > 0.0 ? row.solution_distance / row.driver_distance : 0.0;
    rep.observed_c = std::max(rep.observed_c, row.ratio);
    rep.rows.push_back(row);
  }
  bool mono = true;
  for (std::size_t k = 1; k < rep.rows.size(); ++k) {
    mono = mono && rep.rows[k].driver_distance <= rep.rows[k - 1].driver_distance;
    mono = mono && rep.rows[k].solution_distance <= 1.05 * rep.rows[k - 1].solution_distance;
  }
  rep.monotone = mono;
  const bool vanishing = rep.rows.back().solution_distance <= rep.rows.front().solution_distance;
  rep.pass = mono && vanishing;
  return rep;
}

IntegralComparisonReport pathwise_vs_ito_integral(std::uint64_t seed, std::size_t d, std::size_t rows,
                                                  const ControlledPath::PointFn& theta, const std::vector<int>& levels,
                                                  int depth) {
  require(!levels.empty(), ErrorKind::kParameter, "empty level list");
  require(depth >= 0, ErrorKind::kParameter, "depth must be non-negative");
  const std::size_t m = rows * d;
  IntegralComparisonReport rep;
  std::vector<double> h;
  for (int level : levels) {
    require(level >= 1, ErrorKind::kParameter, "levels must be positive");
    const Grid fine_grid = Grid::dyadic(0.0, 1.0, level + depth);
    const SampledPath w = brownian_path(seed, d, fine_grid);
    const std::size_t nodes = fine_grid.nodes();
    // theta along the sub-grid, then left-point and trapezoid sums
    std::vector<double> th(nodes * m), jac(m * d);
    for (std::size_t j = 0; j < nodes; ++j)
      theta(fine_grid.time(j), w.at(j), std::span<double>(th.data() + j * m, m), jac);
    std::vector<double> left(nodes * rows, 0.0), trap(nodes * rows, 0.0);
    for (std::size_t j = 0; j + 1 < nodes; ++j)
      for (std::size_t r = 0; r < rows; ++r) {
        double a = 0.0, b = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double dw = w(j + 1, k) - w(j, k);
          a += th[j * m + r * d + k] * dw;
          b += 0.5 * (th[j * m + r * d + k] + th[(j + 1) * m + r * d + k]) * dw;
        }
        left[(j + 1) * rows + r] = left[j * rows + r] + a;
        trap[(j + 1) * rows + r] = trap[j * rows + r] + b;
      }

    const Grid grid = Grid::dyadic(0.0, 1.0, level);
    const auto ito = std::make_shared<const RoughPath>(foellmer_lift(w, level, HolderPair::default_brownian()));
    const auto strat = std::make_shared<const RoughPath>(stratonovich_of(*ito));
    const ControlledPath ii = rough_integral(ControlledPath::of_function(ito, rows, d, theta));
    const ControlledPath is = rough_integral(ControlledPath::of_function(strat, rows, d, theta));
    const std::size_t ratio = std::size_t{1} << depth;
    double gi = 0.0, gs = 0.0;
    for (std::size_t i = 0; i < grid.nodes(); ++i)
      for (std::size_t r = 0; r < rows; ++r) {
        gi = std::max(gi, std::abs(ii.value(i)[r] - left[i * ratio * rows + r]));
        gs = std::max(gs, std::abs(is.value(i)[r] - trap[i * ratio * rows + r]));
      }
    rep.levels.push_back(level);
    rep.ito_gap.push_back(gi);
    rep.strat_gap.push_back(gs);
    h.push_back(grid.h());
  }
  if (levels.size() >= 2) {
    rep.ito_fit = fit_order(h, rep.ito_gap, 1e-10);
    rep.strat_fit = fit_order(h, rep.strat_gap, 1e-10);
  }
  return rep;
}

AdaptedModulusReport adapted_modulus(const CoefficientBundle& sigma, const RoughPath& a, const RoughPath& b,
                                     const ProbeBox& box) {
  require(a.grid() == b.grid() && a.dim() == b.dim(), ErrorKind::kAlignment, "paths must share grid and dimension");
  require(a.dim() == sigma.driver_dim, ErrorKind::kDimension, "path dimension differs from sigma");
  const Grid& grid = a.grid();
  const std::size_t d = a.dim(), steps = grid.steps();
  const PathContext ca(a.omega()), cb(b.omega());
  const std::size_t lattice = std::min<std::size_t>(16, steps);
  std::vector<std::size_t> nodes;
  for (std::size_t q = 0; q <= lattice; ++q) nodes.push_back(q * steps / lattice);

  auto dist = [d](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    return std::sqrt(s);
  };
  auto gap = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    return std::sqrt(s);
  };
  // running sup of |a_s - b_s| and of |a_s - a_{t_i}| over s in [t_i, t_j]
  std::vector<double> cross(steps + 1, 0.0);
  for (std::size_t i = 0; i <= steps; ++i)
    cross[i] = std::max(i > 0 ? cross[i - 1] : 0.0, dist(a.omega().at(i), b.omega().at(i)));

  AdaptedModulusReport rep;
  for (const auto& y : probe_points(sigma.in_dim, box)) {
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      const std::size_t i = nodes[p];
      const auto si = sigma.eval_value(TimePoint{grid.time(i), i, &ca}, y);
      const auto sb = sigma.eval_value(TimePoint{grid.time(i), i, &cb}, y);
      if (cross[i] > 0.0) {
        rep.constant = std::max(rep.constant, gap(si, sb) / cross[i]);
        ++rep.pairs;
      }
      double osc = 0.0;
      std::size_t next = i;
      for (std::size_t q = p + 1; q < nodes.size(); ++q) {
        const std::size_t j = nodes[q];
        for (; next <= j; ++next) osc = std::max(osc, dist(a.omega().at(next), a.omega().at(i)));
        const auto sj = sigma.eval_value(TimePoint{grid.time(j), j, &ca}, y);
        const double den = std::sqrt(grid.time(j) - grid.time(i)) + osc;
        rep.constant = std::max(rep.constant, gap(si, sj) / den);
        ++rep.pairs;
      }
    }
  }
  return rep;
}

}  // namespace roughcalc
