#include "roughcalc/rde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace roughcalc {

namespace {

constexpr double kBlowUp = 1e12;

bool bounded(std::span<const double> y) {
  for (double v : y)
    if (!std::isfinite(v) || std::abs(v) > kBlowUp) return false;
  return true;
}

// Per-step increments of the driver: w_{i,i+1}, second_{i,i+1}, <w>_{i,i+1}.
struct StepData {
  std::vector<double> dw, sec, dbr;
  StepData(std::size_t d) : dw(d), sec(d * d), dbr(d * d) {}
  void load(const RoughPath& rp, std::size_t i) {
    const std::size_t d = dw.size();
    for (std::size_t k = 0; k < d; ++k) dw[k] = rp.omega()(i + 1, k) - rp.omega()(i, k);
    const auto st = rp.second().step(i);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l) {
        sec[k * d + l] = st[k * d + l];
        dbr[k * d + l] = dw[k] * dw[l] - st[k * d + l] - st[l * d + k];
      }
  }
};

// J[(c,k)][l] = d_w g[(c,k)][l] + sum_j d_y g[(c,k)][j] G[j][l]
std::vector<double> gub_derivative(const CoefficientBundle& g, const TimePoint& tp, std::span<const double> y,
                                   std::span<const double> gub, std::size_t d) {
  const std::size_t n = g.in_dim, m = g.size();
  std::vector<double> j = g.eval_path(tp, y);
  const auto dy = g.eval_dy(tp, y);
  for (std::size_t v = 0; v < m; ++v)
    for (std::size_t q = 0; q < n; ++q) {
      const double a = dy[v * n + q];
      if (a == 0.0) continue;
      for (std::size_t l = 0; l < d; ++l) j[v * d + l] += a * gub[q * d + l];
    }
  return j;
}

// One compensated increment for state component c.
double step_increment(std::span<const double> gv, std::span<const double> jv, std::span<const double> fv, double hv,
                      const StepData& sd, double dt, std::size_t c, std::size_t d) {
  double inc = hv * dt;
  for (std::size_t k = 0; k < d; ++k) {
    inc += gv[c * d + k] * sd.dw[k];
    for (std::size_t l = 0; l < d; ++l) inc += jv[(c * d + k) * d + l] * sd.sec[l * d + k];
  }
  if (!fv.empty())
    for (std::size_t q = 0; q < d * d; ++q) inc += fv[c * d * d + q] * sd.dbr[q];
  return inc;
}

}  // namespace

std::size_t RdeProblem::last() const {
  return std::min(end_node, driver ? driver->grid().steps() : std::size_t{0});
}

void RdeProblem::validate() const {
  require(driver != nullptr && g != nullptr, ErrorKind::kInput, "RDE needs a driver and g");
  const std::size_t n = y0.size(), d = driver->dim();
  require(n > 0, ErrorKind::kDimension, "empty initial value");
  require(g->in_dim == n && g->rows == n && g->cols == d && g->driver_dim == d, ErrorKind::kDimension,
          "g must map R^n to R^{n x d}");
  if (f)
    require(f->in_dim == n && f->rows == n && f->cols == d * d && f->driver_dim == d, ErrorKind::kDimension,
            "f must map R^n to R^{n x d x d}");
  if (h)
    require(h->in_dim == n && h->rows == n && h->cols == 1, ErrorKind::kDimension, "h must map R^n to R^n");
  require(g->path_free || static_cast<bool>(g->path), ErrorKind::kCapability, "g depends on the path without d_w g");
  require(first() < last(), ErrorKind::kParameter, "empty solve range");
}

RdeSolution make_solution(const RdeProblem& p, std::vector<double> values, std::string scheme) {
  const std::size_t n = p.state_dim(), d = p.driver->dim(), dd = d * d;
  const std::size_t s = p.first(), e = p.last(), nodes = e - s + 1;
  require(values.size() == nodes * n, ErrorKind::kDimension, "solution values have the wrong size");
  RoughPathPtr base = (s == 0 && e == p.driver->grid().steps()) ? p.driver
                                                                  : std::make_shared<const RoughPath>(slice(*p.driver, s, e));
  const PathContext ctx(p.driver->omega());
  const Grid& grid = p.driver->grid();
  std::vector<double> gub(nodes * n * d), second(nodes * n * dd), time(nodes * n * dd, 0.0), rate;
  if (p.h) rate.resize(nodes * n);
  for (std::size_t i = 0; i < nodes; ++i) {
    const TimePoint tp{grid.time(s + i), s + i, &ctx};
    const std::span<const double> y(values.data() + i * n, n);
    const auto gv = p.g->eval_value(tp, y);
    std::copy(gv.begin(), gv.end(), gub.begin() + i * n * d);
    const auto j = gub_derivative(*p.g, tp, y, gv, d);
    std::copy(j.begin(), j.end(), second.begin() + i * n * dd);
    if (p.f) {
      const auto fv = p.f->eval_value(tp, y);
      for (std::size_t q = 0; q < n * dd; ++q) time[i * n * dd + q] = fv[q];
    }
    for (std::size_t q = 0; q < n * dd; ++q) time[i * n * dd + q] -= 0.5 * j[q];
    if (p.h) {
      const auto hv = p.h->eval_value(tp, y);
      std::copy(hv.begin(), hv.end(), rate.begin() + i * n);
    }
  }
  ControlledPath first(base, n, 1, std::move(values), std::move(gub));
  RdeSolution sol{SecondOrderControlled(std::move(first), std::move(second), std::move(time), std::move(rate)),
                  std::move(scheme), {}, 0, 0.0};
  return sol;
}

namespace {

// Allocation-free stepping of the one-step scheme; shared by solve_rde_step and solve_rde_flow.
class Stepper {
 public:
  explicit Stepper(const RdeProblem& p)
      : p_(p), n_(p.state_dim()), d_(p.driver->dim()), ctx_(p.driver->omega()), sd_(d_),
        gv_(n_ * d_), jv_(n_ * d_ * d_), dy_(n_ * d_ * n_), fv_(p.f ? n_ * d_ * d_ : 0), hv_(n_, 0.0) {}

  // values holds (last - first + 1) * n entries; the first n are the initial state.
  void run(std::span<double> values) {
    const std::size_t s = p_.first(), e = p_.last();
    const Grid& grid = p_.driver->grid();
    for (std::size_t i = s; i < e; ++i) {
      const TimePoint tp{grid.time(i), i, &ctx_};
      const std::span<const double> y(values.data() + (i - s) * n_, n_);
      eval(*p_.g, p_.g->value, tp, y, gv_, "a value");
      eval(*p_.g, p_.g->path, tp, y, jv_, nullptr);
      eval(*p_.g, p_.g->dy, tp, y, dy_, "d_y");
      for (std::size_t v = 0; v < n_ * d_; ++v)
        for (std::size_t q = 0; q < n_; ++q) {
          const double a = dy_[v * n_ + q];
          if (a == 0.0) continue;
          for (std::size_t l = 0; l < d_; ++l) jv_[v * d_ + l] += a * gv_[q * d_ + l];
        }
      if (p_.f) eval(*p_.f, p_.f->value, tp, y, fv_, "a value");
      if (p_.h) eval(*p_.h, p_.h->value, tp, y, hv_, "a value");
      sd_.load(*p_.driver, i);
      const double dt = grid.time(i + 1) - grid.time(i);
      double* next = values.data() + (i + 1 - s) * n_;
      for (std::size_t c = 0; c < n_; ++c) next[c] = y[c] + step_increment(gv_, jv_, fv_, hv_[c], sd_, dt, c, d_);
      if (!bounded({next, n_})) throw DivergenceError("RDE state left the bounded region", i);
    }
  }

 private:
  static void eval(const CoefficientBundle& b, const CoefficientBundle::Eval& fn, const TimePoint& tp,
                   std::span<const double> y, std::vector<double>& out, const char* what) {
    std::fill(out.begin(), out.end(), 0.0);
    if (fn) {
      fn(tp, y, out);
    } else if (what) {
      throw Error(ErrorKind::kCapability, "bundle '" + b.name + "' does not supply " + what);
    }
  }

  const RdeProblem& p_;
  std::size_t n_, d_;
  PathContext ctx_;
  StepData sd_;
  std::vector<double> gv_, jv_, dy_, fv_, hv_;
};

}  // namespace

RdeSolution solve_rde_step(const RdeProblem& p) {
  p.validate();
  const std::size_t n = p.state_dim();
  std::vector<double> values((p.last() - p.first() + 1) * n);
  std::copy(p.y0.begin(), p.y0.end(), values.begin());
  Stepper(p).run(values);
  return make_solution(p, std::move(values), "step");
}

std::vector<double> solve_rde_values(const RdeProblem& p) {
  p.validate();
  std::vector<double> values((p.last() - p.first() + 1) * p.state_dim());
  std::copy(p.y0.begin(), p.y0.end(), values.begin());
  Stepper(p).run(values);
  return values;
}

std::vector<std::vector<double>> solve_rde_flow(const RdeProblem& p, const std::vector<std::vector<double>>& starts,
                                                bool final_only) {
  p.validate();
  const std::size_t n = p.state_dim(), nodes = p.last() - p.first() + 1;
  Stepper stepper(p);
  std::vector<std::vector<double>> out;
  out.reserve(starts.size());
  for (const auto& y0 : starts) {
    require(y0.size() == n, ErrorKind::kDimension, "flow start has the wrong dimension");
    std::vector<double> values(nodes * n);
    std::copy(y0.begin(), y0.end(), values.begin());
    stepper.run(values);
    if (final_only) values.erase(values.begin(), values.end() - static_cast<std::ptrdiff_t>(n));
    out.push_back(std::move(values));
  }
  return out;
}

std::vector<std::vector<double>> solve_rde_flow_at(const RdeProblem& p, const std::vector<std::vector<double>>& starts,
                                                   const std::vector<std::size_t>& keep) {
  p.validate();
  const std::size_t n = p.state_dim(), nodes = p.last() - p.first() + 1;
  for (std::size_t k : keep)
    require(k >= p.first() && k <= p.last(), ErrorKind::kParameter, "kept node outside the solve range");
  Stepper stepper(p);
  std::vector<double> values(nodes * n);
  std::vector<std::vector<double>> out;
  out.reserve(starts.size());
  for (const auto& y0 : starts) {
    require(y0.size() == n, ErrorKind::kDimension, "flow start has the wrong dimension");
    std::copy(y0.begin(), y0.end(), values.begin());
    stepper.run(values);
    std::vector<double> row(keep.size() * n);
    for (std::size_t q = 0; q < keep.size(); ++q)
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>((keep[q] - p.first()) * n), n, row.begin() + q * n);
    out.push_back(std::move(row));
  }
  return out;
}

namespace {

struct Iterate {
  std::vector<double> v;  // (w+1) * n
  std::vector<double> g;  // (w+1) * n * d
};

// Grid controlled distance on a window: |dv_0| + |dG_0| + sup [ |dG_{s,t}| / |t-s|^b + |dR_{s,t}| / |t-s|^{a+b} ].
double window_distance(const Iterate& x, const Iterate& y, const RoughPath& rp, std::size_t start, std::size_t n,
                       std::size_t d) {
  const std::size_t nodes = x.v.size() / n;
  const Grid& grid = rp.grid();
  const double a = rp.pair().alpha, b = rp.pair().beta;
  const std::size_t stride = std::max<std::size_t>(1, (nodes - 1 + 255) / 256);
  auto norm_at = [&](const std::vector<double>& u, const std::vector<double>& w, std::size_t off, std::size_t len) {
    double s = 0.0;
    for (std::size_t k = 0; k < len; ++k) s += (u[off + k] - w[off + k]) * (u[off + k] - w[off + k]);
    return std::sqrt(s);
  };
  double out = norm_at(x.v, y.v, 0, n) + norm_at(x.g, y.g, 0, n * d);
  const double base = out;
  for (std::size_t s = 0; s + 1 < nodes; s += stride) {
    for (std::size_t t = std::min(s + stride, nodes - 1);; t = std::min(t + stride, nodes - 1)) {
      const double span = grid.time(start + t) - grid.time(start + s);
      double g2 = 0.0, r2 = 0.0;
      for (std::size_t q = 0; q < n * d; ++q) {
        const double u = (x.g[t * n * d + q] - x.g[s * n * d + q]) - (y.g[t * n * d + q] - y.g[s * n * d + q]);
        g2 += u * u;
      }
      for (std::size_t c = 0; c < n; ++c) {
        double u = (x.v[t * n + c] - x.v[s * n + c]) - (y.v[t * n + c] - y.v[s * n + c]);
        for (std::size_t k = 0; k < d; ++k)
          u -= (x.g[s * n * d + c * d + k] - y.g[s * n * d + c * d + k]) *
               (rp.omega()(start + t, k) - rp.omega()(start + s, k));
        r2 += u * u;
      }
      out = std::max(out, base + std::sqrt(g2) / std::pow(span, b) + std::sqrt(r2) / std::pow(span, a + b));
      if (t == nodes - 1) break;
    }
  }
  return out;
}

// Phi on the window [start, start + w] from initial value y_s.
Iterate picard_map(const RdeProblem& p, const PathContext& ctx, std::size_t start, const Iterate& x,
                   std::span<const double> ys) {
  const std::size_t n = p.state_dim(), d = p.driver->dim();
  const std::size_t nodes = x.v.size() / n;
  const Grid& grid = p.driver->grid();
  Iterate out{std::vector<double>(nodes * n), std::vector<double>(nodes * n * d)};
  std::copy(ys.begin(), ys.end(), out.v.begin());
  StepData sd(d);
  std::vector<double> fv, hv(n, 0.0);
  for (std::size_t i = 0; i < nodes; ++i) {
    const TimePoint tp{grid.time(start + i), start + i, &ctx};
    const std::span<const double> y(x.v.data() + i * n, n);
    const auto gv = p.g->eval_value(tp, y);
    std::copy(gv.begin(), gv.end(), out.g.begin() + i * n * d);
    if (i + 1 == nodes) break;
    const auto jv = gub_derivative(*p.g, tp, y, {x.g.data() + i * n * d, n * d}, d);
    if (p.f) fv = p.f->eval_value(tp, y);
    if (p.h) hv = p.h->eval_value(tp, y);
    sd.load(*p.driver, start + i);
    const double dt = grid.time(start + i + 1) - grid.time(start + i);
    for (std::size_t c = 0; c < n; ++c)
      out.v[(i + 1) * n + c] = out.v[i * n + c] + step_increment(gv, jv, fv, hv[c], sd, dt, c, d);
  }
  return out;
}

Iterate picard_start(const RdeProblem& p, const PathContext& ctx, std::size_t start, std::size_t w,
                     std::span<const double> ys) {
  const std::size_t n = p.state_dim(), d = p.driver->dim();
  Iterate x{std::vector<double>((w + 1) * n), std::vector<double>((w + 1) * n * d)};
  for (std::size_t i = 0; i <= w; ++i) {
    std::copy(ys.begin(), ys.end(), x.v.begin() + i * n);
    const TimePoint tp{p.driver->grid().time(start + i), start + i, &ctx};
    const auto gv = p.g->eval_value(tp, ys);
    std::copy(gv.begin(), gv.end(), x.g.begin() + i * n * d);
  }
  return x;
}

double sup_abs(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

bool all_bounded(const Iterate& x) { return bounded(x.v) && bounded(x.g); }

std::size_t floor_pow2(std::size_t x) {
  std::size_t p = 1;
  while (p * 2 <= x) p *= 2;
  return p;
}

}  // namespace

RdeSolution solve_rde_picard(const RdeProblem& p, const PicardOptions& opt) {
  p.validate();
  require(opt.tol > 0.0 && opt.max_iter > 0 && opt.window >= 0.0, ErrorKind::kParameter, "invalid Picard options");
  const std::size_t n = p.state_dim(), d = p.driver->dim();
  const std::size_t s0 = p.first(), e0 = p.last(), total = e0 - s0;
  const Grid& grid = p.driver->grid();
  const double h = grid.h();
  const double alpha = p.driver->pair().alpha;
  const PathContext ctx(p.driver->omega());
  const std::size_t min_steps = std::min<std::size_t>(4, total);

  std::size_t w = 0;
  if (opt.window > 0.0) {
    w = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(opt.window / h + 1e-9)), min_steps, total);
  } else {
    // contraction estimate from the first iteration pair on a trial window
    const std::size_t w0 = std::min<std::size_t>(total, 256);
    const Iterate x0 = picard_start(p, ctx, s0, w0, p.y0);
    const Iterate x1 = picard_map(p, ctx, s0, x0, p.y0);
    const Iterate x2 = picard_map(p, ctx, s0, x1, p.y0);
    const double d1 = window_distance(x1, x0, *p.driver, s0, n, d);
    const double d2 = window_distance(x2, x1, *p.driver, s0, n, d);
    if (!all_bounded(x2) || !std::isfinite(d2)) {
      w = min_steps;
    } else if (d1 <= 0.0 || d2 <= 0.0) {
      w = total;
    } else {
      const double q = d2 / d1;
      const double c = q / std::pow(w0 * h, alpha);
      const double delta = std::pow(1.0 / (2.0 * c), 1.0 / alpha);
      const double steps = delta / h;
      w = steps >= static_cast<double>(total) ? total : std::max(min_steps, floor_pow2(static_cast<std::size_t>(steps)));
    }
  }

  std::vector<double> values((total + 1) * n);
  std::copy(p.y0.begin(), p.y0.end(), values.begin());
  std::vector<PicardWindow> log;
  std::size_t s = s0;
  while (s < e0) {
    const std::size_t ww = std::min(w, e0 - s);
    const std::span<const double> ys(values.data() + (s - s0) * n, n);
    PicardWindow win{s, ww, 0, {}};
    Iterate x = picard_start(p, ctx, s, ww, ys);
    bool ok = false;
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
      Iterate y = picard_map(p, ctx, s, x, ys);
      if (!all_bounded(y)) break;
      const double dist = window_distance(y, x, *p.driver, s, n, d);
      win.distances.push_back(dist);
      x = std::move(y);
      if (dist <= opt.tol * (1.0 + sup_abs(x.v))) {
        ok = true;
        break;
      }
      win.iterations = it + 1;
    }
    if (!ok) {
      if (ww / 2 < min_steps || ww <= min_steps) {
        std::ostringstream os;
        os << "Picard iteration did not contract on the window starting at node " << s << " with " << ww << " steps";
        throw NonContractionError(os.str(), std::max<std::size_t>(ww / 2, 1));
      }
      w = ww / 2;
      continue;
    }
    std::copy(x.v.begin() + n, x.v.end(), values.begin() + (s - s0 + 1) * n);
    log.push_back(std::move(win));
    s += ww;
  }
  RdeSolution sol = make_solution(p, std::move(values), "picard");
  sol.windows = std::move(log);
  sol.window_steps = w;
  return sol;
}

// ---------------------------------------------------------------- linear equations

LinearRdeProblem LinearRdeProblem::constant(RoughPathPtr driver, std::size_t n, const std::vector<double>& a,
                                            const std::vector<double>& b, const std::vector<double>& lambda,
                                            const std::vector<double>& l, std::vector<double> y0) {
  const std::size_t d = driver->dim(), dd = d * d, nodes = driver->grid().nodes();
  auto fill = [&](const std::vector<double>& v, std::size_t size, const char* what) {
    std::vector<double> c = v.empty() ? std::vector<double>(size, 0.0) : v;
    require(c.size() == size, ErrorKind::kDimension, std::string("constant linear coefficient ") + what + " has wrong size");
    std::vector<double> out(nodes * size);
    for (std::size_t i = 0; i < nodes; ++i) std::copy(c.begin(), c.end(), out.begin() + i * size);
    return out;
  };
  const Grid& grid = driver->grid();
  ControlledPath ca(driver, n * n, d, fill(a, n * n * d, "a"), std::vector<double>(nodes * n * n * d * d, 0.0));
  ControlledPath cb(driver, n, d, fill(b, n * d, "b"), std::vector<double>(nodes * n * d * d, 0.0));
  SampledPath lam(grid, n * n * dd, fill(lambda, n * n * dd, "lambda"));
  SampledPath ll(grid, n * dd, fill(l, n * dd, "l"));
  LinearRdeProblem p{std::move(driver), n, std::move(ca), std::move(cb), std::move(lam), std::move(ll), std::move(y0)};
  p.validate();
  return p;
}

void LinearRdeProblem::validate() const {
  require(driver != nullptr, ErrorKind::kInput, "linear RDE needs a driver");
  const std::size_t d = driver->dim(), dd = d * d;
  require(n >= 1 && y0.size() == n, ErrorKind::kDimension, "initial value must have n components");
  require(a.size() == n * n * d && a.grid() == driver->grid(), ErrorKind::kDimension, "a must be n x n x d on the driver grid");
  require(b.size() == n * d && b.grid() == driver->grid(), ErrorKind::kDimension, "b must be n x d on the driver grid");
  require(lambda.dim() == n * n * dd && lambda.grid() == driver->grid(), ErrorKind::kDimension,
          "lambda must be n x n x d x d");
  require(l.dim() == n * dd && l.grid() == driver->grid(), ErrorKind::kDimension, "l must be n x d x d");
}

RdeProblem LinearRdeProblem::as_rde() const {
  validate();
  auto self = std::make_shared<const LinearRdeProblem>(*this);
  const std::size_t n_ = n, d = driver->dim(), dd = d * d;
  CoefficientBundle g;
  g.name = "linear-g";
  g.in_dim = n_;
  g.rows = n_;
  g.cols = d;
  g.driver_dim = d;
  g.regularity = Regularity::kC12;
  g.uses_path = true;
  g.value = [self, n_, d](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto a = self->a.value(tp.node);
    const auto b = self->b.value(tp.node);
    for (std::size_t c = 0; c < n_; ++c)
      for (std::size_t k = 0; k < d; ++k) {
        double acc = b[c * d + k];
        for (std::size_t j = 0; j < n_; ++j) acc += a[(c * n_ + j) * d + k] * y[j];
        out[c * d + k] = acc;
      }
  };
  g.dy = [self, n_, d](const TimePoint& tp, std::span<const double>, std::span<double> out) {
    const auto a = self->a.value(tp.node);
    for (std::size_t c = 0; c < n_; ++c)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t j = 0; j < n_; ++j) out[(c * d + k) * n_ + j] = a[(c * n_ + j) * d + k];
  };
  g.dyy = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  g.path = [self, n_, d](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto da = self->a.derivative(tp.node);
    const auto db = self->b.derivative(tp.node);
    for (std::size_t c = 0; c < n_; ++c)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l) {
          double acc = db[(c * d + k) * d + l];
          for (std::size_t j = 0; j < n_; ++j) acc += da[((c * n_ + j) * d + k) * d + l] * y[j];
          out[(c * d + k) * d + l] = acc;
        }
  };
  g.path_dy = [self, n_, d](const TimePoint& tp, std::span<const double>, std::span<double> out) {
    const auto da = self->a.derivative(tp.node);
    for (std::size_t c = 0; c < n_; ++c)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l)
          for (std::size_t j = 0; j < n_; ++j) out[((c * d + k) * d + l) * n_ + j] = da[((c * n_ + j) * d + k) * d + l];
  };
  CoefficientBundle f;
  f.name = "linear-f";
  f.in_dim = n_;
  f.rows = n_;
  f.cols = dd;
  f.driver_dim = d;
  f.regularity = Regularity::kC2Beta;
  f.uses_path = true;
  f.value = [self, n_, dd](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto lam = self->lambda.at(tp.node);
    const auto l = self->l.at(tp.node);
    for (std::size_t c = 0; c < n_; ++c)
      for (std::size_t q = 0; q < dd; ++q) {
        double acc = l[c * dd + q];
        for (std::size_t j = 0; j < n_; ++j) acc += lam[(c * n_ + j) * dd + q] * y[j];
        out[c * dd + q] = acc;
      }
  };
  f.dy = [self, n_, dd](const TimePoint& tp, std::span<const double>, std::span<double> out) {
    const auto lam = self->lambda.at(tp.node);
    for (std::size_t c = 0; c < n_; ++c)
      for (std::size_t q = 0; q < dd; ++q)
        for (std::size_t j = 0; j < n_; ++j) out[(c * dd + q) * n_ + j] = lam[(c * n_ + j) * dd + q];
  };
  f.dyy = g.dyy;
  RdeProblem p;
  p.driver = driver;
  p.g = std::make_shared<const CoefficientBundle>(std::move(g));
  p.f = std::make_shared<const CoefficientBundle>(std::move(f));
  p.y0 = y0;
  return p;
}

namespace {

// Linear-equation data on a window of `nodes` nodes starting at driver node `start`.
struct LinWindow {
  std::size_t n = 1, d = 1, nodes = 0, start = 0;
  std::vector<double> a, da, b, db, lam, l;

  std::size_t dd() const { return d * d; }
  double* A(std::size_t i, std::size_t r, std::size_t c) { return a.data() + ((i * n + r) * n + c) * d; }
  double* DA(std::size_t i, std::size_t r, std::size_t c) { return da.data() + ((i * n + r) * n + c) * d * d; }
  double* B(std::size_t i, std::size_t r) { return b.data() + (i * n + r) * d; }
  double* DB(std::size_t i, std::size_t r) { return db.data() + (i * n + r) * d * d; }
  double* LAM(std::size_t i, std::size_t r, std::size_t c) { return lam.data() + ((i * n + r) * n + c) * d * d; }
  double* L(std::size_t i, std::size_t r) { return l.data() + (i * n + r) * d * d; }

  static LinWindow make(std::size_t n, std::size_t d, std::size_t nodes, std::size_t start) {
    LinWindow w;
    w.n = n;
    w.d = d;
    w.nodes = nodes;
    w.start = start;
    w.a.assign(nodes * n * n * d, 0.0);
    w.da.assign(nodes * n * n * d * d, 0.0);
    w.b.assign(nodes * n * d, 0.0);
    w.db.assign(nodes * n * d * d, 0.0);
    w.lam.assign(nodes * n * n * d * d, 0.0);
    w.l.assign(nodes * n * d * d, 0.0);
    return w;
  }
};

LinWindow window_of(const LinearRdeProblem& p, std::size_t start, std::size_t steps) {
  const std::size_t n = p.n, d = p.driver->dim(), dd = d * d, nodes = steps + 1;
  LinWindow w = LinWindow::make(n, d, nodes, start);
  auto put = [](std::vector<double>& dst, std::size_t i, std::span<const double> src) {
    std::copy(src.begin(), src.end(), dst.begin() + i * src.size());
  };
  for (std::size_t i = 0; i < nodes; ++i) {
    put(w.a, i, p.a.value(start + i));
    put(w.da, i, p.a.derivative(start + i));
    put(w.b, i, p.b.value(start + i));
    put(w.db, i, p.b.derivative(start + i));
    put(w.lam, i, p.lambda.at(start + i));
    put(w.l, i, p.l.at(start + i));
  }
  (void)dd;
  return w;
}

// Integrating-factor solution of the scalar window problem. Returns false when
// |log Gamma| exceeds 700.
bool explicit_scalar(const RoughPath& rp, LinWindow& L, double theta_s, std::vector<double>& out) {
  const std::size_t d = L.d, dd = d * d, nodes = L.nodes;
  out.assign(nodes, 0.0);
  StepData sd(d);
  double x = 0.0, integral = 0.0;
  out[0] = theta_s;
  for (std::size_t i = 0; i + 1 < nodes; ++i) {
    sd.load(rp, L.start + i);
    const double* a = L.A(i, 0, 0);
    const double* da = L.DA(i, 0, 0);
    const double* b = L.B(i, 0);
    const double* db = L.DB(i, 0);
    const double* lam = L.LAM(i, 0, 0);
    const double* l = L.L(i, 0);
    const double gamma = std::exp(x);
    double dx = 0.0, di = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      dx -= a[k] * sd.dw[k];
      di += gamma * b[k] * sd.dw[k];
      for (std::size_t m = 0; m < d; ++m) {
        // derivative in direction m of component k, paired with second[m][k]
        dx -= da[k * d + m] * sd.sec[m * d + k];
        di += gamma * (db[k * d + m] - a[m] * b[k]) * sd.sec[m * d + k];
        dx += (0.5 * a[k] * a[m] - lam[k * d + m]) * sd.dbr[k * d + m];
        di += gamma * (l[k * d + m] - a[k] * b[m]) * sd.dbr[k * d + m];
      }
    }
    (void)dd;
    x += dx;
    integral += di;
    if (!std::isfinite(x) || std::abs(x) > 700.0) return false;
    out[i + 1] = (theta_s + integral) * std::exp(-x);
  }
  return true;
}

struct RiccatiStats {
  double max_gamma = 0.0;
  double roundtrip = 0.0;
};

bool solve_window(const RoughPath& rp, LinWindow& L, std::span<const double> ys, std::vector<double>& out,
                  RiccatiStats& stats) {
  const std::size_t n = L.n, d = L.d, dd = d * d, nodes = L.nodes;
  out.assign(nodes * n, 0.0);
  if (n == 1) {
    std::vector<double> th;
    if (!explicit_scalar(rp, L, ys[0], th)) return false;
    out = std::move(th);
    return true;
  }
  const std::size_t m = n - 1, last = n - 1;
  // Riccati flow Gamma in R^m with Gamma = 0 at the window start, and its
  // Gubinelli derivative abar (m x d).
  std::vector<double> gam(nodes * m, 0.0), abar(nodes * m * d, 0.0);
  StepData sd(d);
  auto coefficients = [&](std::size_t i, const double* G, double* ab, double* jac, double* lbar) {
    // ab[j][k] = (a^{nn}_k G^j - a^{nj}_k) + sum_r G^r (a^{rn}_k G^j - a^{rj}_k)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        double acc = L.A(i, last, last)[k] * G[j] - L.A(i, last, j)[k];
        for (std::size_t r = 0; r < m; ++r) acc += G[r] * (L.A(i, r, last)[k] * G[j] - L.A(i, r, j)[k]);
        ab[j * d + k] = acc;
      }
    if (jac != nullptr) {
      // jac[j][k][l] = d_w ab (fixed G) + sum_q d ab[j][k] / d G^q ab[q][l]
      std::vector<double> alpha(d);
      for (std::size_t k = 0; k < d; ++k) {
        alpha[k] = L.A(i, last, last)[k];
        for (std::size_t r = 0; r < m; ++r) alpha[k] += G[r] * L.A(i, r, last)[k];
      }
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t l = 0; l < d; ++l) {
            double acc = L.DA(i, last, last)[k * d + l] * G[j] - L.DA(i, last, j)[k * d + l];
            for (std::size_t r = 0; r < m; ++r)
              acc += G[r] * (L.DA(i, r, last)[k * d + l] * G[j] - L.DA(i, r, j)[k * d + l]);
            for (std::size_t q = 0; q < m; ++q) {
              double dq = L.A(i, q, last)[k] * G[j] - L.A(i, q, j)[k];
              if (q == j) dq += alpha[k];
              acc += dq * ab[q * d + l];
            }
            jac[(j * d + k) * d + l] = acc;
          }
    }
    if (lbar != nullptr) {
      // lbar[j] = [G^j lam^{nn} - lam^{nj}] + sum_r G^r [G^j lam^{rn} - lam^{rj}]
      //         + sum_r ab[r]_k [G^j a^{rn}_l - a^{rj}_l]
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t l = 0; l < d; ++l) {
            const std::size_t q = k * d + l;
            double acc = G[j] * L.LAM(i, last, last)[q] - L.LAM(i, last, j)[q];
            for (std::size_t r = 0; r < m; ++r) {
              acc += G[r] * (G[j] * L.LAM(i, r, last)[q] - L.LAM(i, r, j)[q]);
              acc += ab[r * d + k] * (G[j] * L.A(i, r, last)[l] - L.A(i, r, j)[l]);
            }
            lbar[j * dd + q] = acc;
          }
    }
  };
  std::vector<double> jac(m * dd), lbar(m * dd);
  for (std::size_t i = 0; i < nodes; ++i) {
    double* G = gam.data() + i * m;
    double* ab = abar.data() + i * m * d;
    const bool last_node = i + 1 == nodes;
    coefficients(i, G, ab, last_node ? nullptr : jac.data(), last_node ? nullptr : lbar.data());
    if (last_node) break;
    sd.load(rp, L.start + i);
    double* next = gam.data() + (i + 1) * m;
    for (std::size_t j = 0; j < m; ++j) {
      double inc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        inc += ab[j * d + k] * sd.dw[k];
        for (std::size_t l = 0; l < d; ++l) inc += jac[(j * d + k) * d + l] * sd.sec[l * d + k];
      }
      for (std::size_t q = 0; q < dd; ++q) inc += lbar[j * dd + q] * sd.dbr[q];
      next[j] = G[j] + inc;
    }
    if (!bounded({next, m})) return false;
    for (std::size_t j = 0; j < m; ++j) stats.max_gamma = std::max(stats.max_gamma, std::abs(next[j]));
  }

  // scalar equation for theta_bar = theta^n + sum_i Gamma^i theta^i
  LinWindow S = LinWindow::make(1, d, nodes, L.start);
  for (std::size_t i = 0; i < nodes; ++i) {
    const double* G = gam.data() + i * m;
    const double* ab = abar.data() + i * m * d;
    double* a = S.A(i, 0, 0);
    double* da = S.DA(i, 0, 0);
    double* b = S.B(i, 0);
    double* db = S.DB(i, 0);
    double* lam = S.LAM(i, 0, 0);
    double* l = S.L(i, 0);
    for (std::size_t k = 0; k < d; ++k) {
      a[k] = L.A(i, last, last)[k];
      b[k] = L.B(i, last)[k];
      for (std::size_t r = 0; r < m; ++r) {
        a[k] += G[r] * L.A(i, r, last)[k];
        b[k] += G[r] * L.B(i, r)[k];
      }
      for (std::size_t q = 0; q < d; ++q) {
        const std::size_t kq = k * d + q;
        da[kq] = L.DA(i, last, last)[kq];
        db[kq] = L.DB(i, last)[kq];
        lam[kq] = L.LAM(i, last, last)[kq];
        l[kq] = L.L(i, last)[kq];
        for (std::size_t r = 0; r < m; ++r) {
          da[kq] += ab[r * d + q] * L.A(i, r, last)[k] + G[r] * L.DA(i, r, last)[kq];
          db[kq] += ab[r * d + q] * L.B(i, r)[k] + G[r] * L.DB(i, r)[kq];
          lam[kq] += G[r] * L.LAM(i, r, last)[kq] + ab[r * d + k] * L.A(i, r, last)[q];
          l[kq] += G[r] * L.L(i, r)[kq] + ab[r * d + k] * L.B(i, r)[q];
        }
      }
    }
  }
  std::vector<double> bar;
  if (!explicit_scalar(rp, S, ys[last], bar)) return false;

  // subsystem for (theta^1, ..., theta^{n-1})
  LinWindow T = LinWindow::make(m, d, nodes, L.start);
  for (std::size_t i = 0; i < nodes; ++i) {
    const double* G = gam.data() + i * m;
    const double* ab = abar.data() + i * m * d;
    std::vector<double> dbar(d);
    for (std::size_t k = 0; k < d; ++k) dbar[k] = S.A(i, 0, 0)[k] * bar[i] + S.B(i, 0)[k];
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t k = 0; k < d; ++k) {
        const double arn = L.A(i, r, last)[k];
        T.B(i, r)[k] = L.B(i, r)[k] + arn * bar[i];
        for (std::size_t c = 0; c < m; ++c) T.A(i, r, c)[k] = L.A(i, r, c)[k] - arn * G[c];
        for (std::size_t q = 0; q < d; ++q) {
          const std::size_t kq = k * d + q;
          T.DB(i, r)[kq] = L.DB(i, r)[kq] + L.DA(i, r, last)[kq] * bar[i] + arn * dbar[q];
          T.L(i, r)[kq] = L.L(i, r)[kq] + L.LAM(i, r, last)[kq] * bar[i];
          for (std::size_t c = 0; c < m; ++c) {
            T.DA(i, r, c)[kq] = L.DA(i, r, c)[kq] - L.DA(i, r, last)[kq] * G[c] - arn * ab[c * d + q];
            T.LAM(i, r, c)[kq] = L.LAM(i, r, c)[kq] - L.LAM(i, r, last)[kq] * G[c];
          }
        }
      }
    }
  }
  std::vector<double> sub;
  if (!solve_window(rp, T, ys.subspan(0, m), sub, stats)) return false;
  for (std::size_t i = 0; i < nodes; ++i) {
    const double* G = gam.data() + i * m;
    double acc = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      out[i * n + r] = sub[i * m + r];
      acc += G[r] * sub[i * m + r];
    }
    out[i * n + last] = bar[i] - acc;
    stats.roundtrip = std::max(stats.roundtrip, std::abs(bar[i] - (out[i * n + last] + acc)));
  }
  return true;
}

}  // namespace

RdeSolution solve_linear_1d(const LinearRdeProblem& p) {
  p.validate();
  require(p.n == 1, ErrorKind::kDimension, "the explicit formula needs a scalar equation");
  const std::size_t steps = p.driver->grid().steps();
  LinWindow L = window_of(p, 0, steps);
  std::vector<double> values;
  if (!explicit_scalar(*p.driver, L, p.y0[0], values))
    throw Error(ErrorKind::kOverflow, "integrating factor left exp(+-700)");
  return make_solution(p.as_rde(), std::move(values), "explicit-1d");
}

RdeSolution solve_linear_riccati(const LinearRdeProblem& p, const RiccatiOptions& opt, RiccatiDiagnostics* diag) {
  p.validate();
  require(p.n >= 2, ErrorKind::kDimension, "the Riccati reduction needs n >= 2");
  const std::size_t n = p.n, steps = p.driver->grid().steps();
  const std::size_t min_w = std::max<std::size_t>(1, std::min(opt.min_window_steps, steps));
  std::size_t w = opt.initial_window_steps > 0 ? opt.initial_window_steps : std::max(min_w, steps / 8);
  w = std::min(w, steps);
  RiccatiDiagnostics local;
  RiccatiDiagnostics& dg = diag != nullptr ? *diag : local;
  dg = {};
  RiccatiStats stats;
  std::vector<double> values((steps + 1) * n);
  std::copy(p.y0.begin(), p.y0.end(), values.begin());
  std::size_t s = 0;
  std::vector<double> out;
  while (s < steps) {
    const std::size_t ww = std::min(w, steps - s);
    LinWindow L = window_of(p, s, ww);
    const std::span<const double> ys(values.data() + s * n, n);
    if (!solve_window(*p.driver, L, ys, out, stats)) {
      if (ww / 2 < min_w) {
        std::ostringstream os;
        os << "Riccati flow blew up on a window of " << ww << " steps (max |Gamma| " << stats.max_gamma << ")";
        throw DivergenceError(os.str(), s);
      }
      w = ww / 2;
      ++dg.halvings;
      continue;
    }
    std::copy(out.begin() + n, out.end(), values.begin() + (s + 1) * n);
    dg.window_starts.push_back(s);
    dg.window_steps.push_back(ww);
    s += ww;
  }
  dg.max_gamma = stats.max_gamma;
  dg.roundtrip_gap = stats.roundtrip;
  RdeSolution sol = make_solution(p.as_rde(), std::move(values), "riccati");
  sol.window_steps = w;
  return sol;
}

// ---------------------------------------------------------------- stability

RdeStabilityReport rde_stability(const RdeProblem& p, const RdeProblem& q, const RdeSolution& sp,
                                 const RdeSolution& sq) {
  const ControlledPath& a = sp.theta.first();
  const ControlledPath& b = sq.theta.first();
  require(a.grid() == b.grid() && a.size() == b.size(), ErrorKind::kAlignment, "solutions live on different grids");
  RdeStabilityReport rep;
  double dy0 = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) dy0 += std::pow(a.value(0)[c] - b.value(0)[c], 2);
  dy0 = std::sqrt(dy0);
  rep.lhs = controlled_distance(a, b).full + dy0;

  // coefficient distance on the union range of both solutions
  const std::size_t n = a.size();
  double lo = a.value(0)[0], hi = lo;
  for (const auto* sol : {&a, &b})
    for (double x : sol->theta().data()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const ProbeBox box{lo, hi, n == 1 ? std::size_t{9} : std::size_t{5}};
  const PathContext cp(p.driver->omega()), cq(q.driver->omega());
  const Grid& grid = p.driver->grid();
  const std::size_t s0 = p.first(), e0 = p.last();
  const std::size_t stride = std::max<std::size_t>(1, (e0 - s0) / 64);
  auto gap = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    return std::sqrt(s);
  };
  double coef = 0.0;
  for (std::size_t i = s0; i <= e0; i += stride) {
    const TimePoint tp{grid.time(i), i, &cp};
    const TimePoint tq{grid.time(i), i, &cq};
    for (const auto& y : probe_points(n, box)) {
      double c = gap(p.g->eval_value(tp, y), q.g->eval_value(tq, y)) + gap(p.g->eval_dy(tp, y), q.g->eval_dy(tq, y)) +
                 gap(p.g->eval_dyy(tp, y), q.g->eval_dyy(tq, y)) + gap(p.g->eval_path(tp, y), q.g->eval_path(tq, y));
      if (p.f && q.f)
        c += gap(p.f->eval_value(tp, y), q.f->eval_value(tq, y)) + gap(p.f->eval_dy(tp, y), q.f->eval_dy(tq, y));
      coef = std::max(coef, c);
    }
  }
  const double dw = p.driver == q.driver ? 0.0 : rough_path_distance(*p.driver, *q.driver);
  rep.data_term = coef + dw + dy0;
  rep.ratio = rep.data_term > 0.0 ? rep.lhs / rep.data_term : 0.0;
  return rep;
}

HomotopyReport rde_stability_homotopy(const RdeProblem& p, const std::function<RdeProblem(double)>& perturbed,
                                      const std::vector<double>& eps) {
  HomotopyReport rep;
  rep.eps = eps;
  const RdeSolution base = solve_rde_step(p);
  for (double e : eps) {
    const RdeProblem q = perturbed(e);
    rep.points.push_back(rde_stability(p, q, base, solve_rde_step(q)));
  }
  bool ok = rep.points.size() >= 2;
  double rmin = 1e300, rmax = 0.0;
  for (std::size_t k = 0; k < rep.points.size(); ++k) {
    if (k > 0 && !(rep.points[k].lhs < rep.points[k - 1].lhs)) ok = false;
    rmin = std::min(rmin, rep.points[k].ratio);
    rmax = std::max(rmax, rep.points[k].ratio);
  }
  rep.pass = ok && rmin > 0.0 && rmax <= 10.0 * rmin;
  return rep;
}

}  // namespace roughcalc
