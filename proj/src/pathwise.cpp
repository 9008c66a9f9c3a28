#include "roughcalc/pathwise.hpp"

#include <algorithm>
#include <cmath>

namespace roughcalc {

SecondOrderControlled::SecondOrderControlled(ControlledPath first, std::vector<double> second,
                                             std::vector<double> time, std::vector<double> rate)
    : first_(std::move(first)), second_(std::move(second)), time_(std::move(time)), rate_(std::move(rate)) {
  const std::size_t n = first_.grid().nodes(), m = first_.size(), d = first_.driver_dim();
  require(second_.size() == n * m * d * d && time_.size() == n * m * d * d, ErrorKind::kDimension,
          "second-order data must have m*d*d entries per node");
  require(rate_.empty() || rate_.size() == n * m, ErrorKind::kDimension, "rate must have m entries per node");
  // symmetrize D_t
  for (std::size_t b = 0; b < n * m; ++b) {
    double* t = time_.data() + b * d * d;
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = k + 1; l < d; ++l) {
        const double s = 0.5 * (t[k * d + l] + t[l * d + k]);
        t[k * d + l] = s;
        t[l * d + k] = s;
      }
  }
}

SecondOrderControlled SecondOrderControlled::from_ab(ControlledPath first, std::vector<double> second,
                                                     const std::vector<double>& b) {
  require(b.size() == second.size(), ErrorKind::kDimension, "b and D2 theta differ in size");
  std::vector<double> time(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) time[k] = b[k] - 0.5 * second[k];
  return SecondOrderControlled(std::move(first), std::move(second), std::move(time));
}

SecondOrderControlled SecondOrderControlled::of_function(RoughPathPtr base, std::size_t rows, std::size_t cols,
                                                         const PointFn2& fn) {
  const std::size_t m = rows * cols, d = base->dim(), n = base->grid().nodes();
  std::vector<double> values(n * m), gub(n * m * d), hess(n * m * d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    fn(base->omega().at(i), {values.data() + i * m, m}, {gub.data() + i * m * d, m * d},
       {hess.data() + i * m * d * d, m * d * d});
  std::vector<double> time(hess.size(), 0.0);
  ControlledPath first(std::move(base), rows, cols, std::move(values), std::move(gub));
  return SecondOrderControlled(std::move(first), std::move(hess), std::move(time));
}

SecondOrderControlled SecondOrderControlled::of_driver(RoughPathPtr base) {
  const std::size_t d = base->dim();
  return of_function(std::move(base), d, 1,
                     [d](std::span<const double> w, std::span<double> v, std::span<double> j, std::span<double>) {
                       for (std::size_t k = 0; k < d; ++k) {
                         v[k] = w[k];
                         j[k * d + k] = 1.0;
                       }
                     });
}

std::span<const double> SecondOrderControlled::second(std::size_t i) const {
  const std::size_t b = size() * driver_dim() * driver_dim();
  return {second_.data() + i * b, b};
}

std::span<const double> SecondOrderControlled::time_part(std::size_t i) const {
  const std::size_t b = size() * driver_dim() * driver_dim();
  return {time_.data() + i * b, b};
}

std::span<const double> SecondOrderControlled::rate(std::size_t i) const {
  if (rate_.empty()) return {};
  return {rate_.data() + i * size(), size()};
}

std::vector<double> SecondOrderControlled::time_trace(std::size_t i) const {
  const std::size_t m = size(), d = driver_dim();
  const auto t = time_part(i);
  std::vector<double> out(m, 0.0);
  for (std::size_t v = 0; v < m; ++v)
    for (std::size_t k = 0; k < d; ++k) out[v] += t[(v * d + k) * d + k];
  return out;
}

double SecondOrderControlled::max_time_asymmetry() const {
  const std::size_t d = driver_dim();
  double worst = 0.0;
  for (std::size_t b = 0; b < time_.size() / (d * d); ++b)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l)
        worst = std::max(worst, std::abs(time_[b * d * d + k * d + l] - time_[b * d * d + l * d + k]));
  return worst;
}

SecondOrderControlled SecondOrderControlled::plus(const SecondOrderControlled& other) const {
  require(other.size() == size() && other.grid() == grid(), ErrorKind::kDimension, "second-order paths differ in shape");
  std::vector<double> s = second_, t = time_, r;
  for (std::size_t k = 0; k < s.size(); ++k) {
    s[k] += other.second_[k];
    t[k] += other.time_[k];
  }
  if (has_rate() || other.has_rate()) {
    r.assign(grid().nodes() * size(), 0.0);
    for (std::size_t k = 0; k < r.size(); ++k)
      r[k] = (has_rate() ? rate_[k] : 0.0) + (other.has_rate() ? other.rate_[k] : 0.0);
  }
  return SecondOrderControlled(first_.plus(other.first_), std::move(s), std::move(t), std::move(r));
}

SecondOrderControlled SecondOrderControlled::restricted(RoughPathPtr coarse) const {
  const std::size_t factor = grid().steps() / coarse->grid().steps();
  ControlledPath c = first_.restricted(coarse);
  const std::size_t b = size() * driver_dim() * driver_dim(), m = size();
  std::vector<double> s, t, r;
  for (std::size_t i = 0; i < coarse->grid().nodes(); ++i) {
    const auto si = second(i * factor), ti = time_part(i * factor);
    s.insert(s.end(), si.begin(), si.end());
    t.insert(t.end(), ti.begin(), ti.end());
    if (has_rate()) r.insert(r.end(), rate_.begin() + i * factor * m, rate_.begin() + (i * factor + 1) * m);
  }
  (void)b;
  return SecondOrderControlled(std::move(c), std::move(s), std::move(t), std::move(r));
}

namespace {

void check_shapes(const CoefficientBundle& g, std::size_t theta_size, std::size_t d) {
  require(g.in_dim == theta_size, ErrorKind::kDimension, "bundle input dimension differs from the path");
  require(g.driver_dim == d, ErrorKind::kDimension, "bundle driver dimension differs from the path");
  require(g.path_free || static_cast<bool>(g.path), ErrorKind::kCapability,
          "bundle '" + g.name + "' depends on the path but supplies no d_w g");
}

// Per-node chain-rule quantities for eta = g(t, theta).
struct ChainTerms {
  std::vector<double> value, gub, gub2, drift, rate;
};

ChainTerms chain_at(const CoefficientBundle& g, const TimePoint& tp, std::span<const double> y,
                    std::span<const double> a, std::span<const double> da, std::span<const double> b,
                    std::span<const double> rate, std::size_t d, bool second, bool drift) {
  const std::size_t m = g.size(), n = g.in_dim;
  ChainTerms out;
  out.value = g.eval_value(tp, y);
  const auto dy = g.eval_dy(tp, y);
  const auto p = g.eval_path(tp, y);
  out.gub.assign(m * d, 0.0);
  for (std::size_t v = 0; v < m; ++v)
    for (std::size_t k = 0; k < d; ++k) {
      double acc = p[v * d + k];
      for (std::size_t j = 0; j < n; ++j) acc += dy[v * n + j] * a[j * d + k];
      out.gub[v * d + k] = acc;
    }
  if (!second && !drift) return out;
  const auto dyy = g.eval_dyy(tp, y);
  const auto p2 = g.eval_path2(tp, y);
  const auto pdy = g.eval_path_dy(tp, y);
  const auto gt = g.eval_time(tp, y);
  // quadratic form dyy[a, a] per (v, k, l)
  std::vector<double> qa(m * d * d, 0.0);
  for (std::size_t v = 0; v < m; ++v)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) acc += dyy[(v * n + i) * n + j] * a[i * d + k] * a[j * d + l];
        qa[(v * d + k) * d + l] = acc;
      }
  auto pdy_a = [&](std::size_t v, std::size_t k, std::size_t l) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += pdy[(v * d + k) * n + j] * a[j * d + l];
    return acc;
  };
  if (second) {
    out.gub2.assign(m * d * d, 0.0);
    for (std::size_t v = 0; v < m; ++v)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l) {
          double acc = p2[(v * d + k) * d + l] + pdy_a(v, k, l) + pdy_a(v, l, k) + qa[(v * d + k) * d + l];
          for (std::size_t j = 0; j < n; ++j) acc += dy[v * n + j] * da[(j * d + k) * d + l];
          out.gub2[(v * d + k) * d + l] = acc;
        }
  }
  if (drift) {
    // f + d_y g b + 1/2 dyy [a, a] + d_y h a^*, f = D_t g + 1/2 d_ww g
    out.drift.assign(m * d * d, 0.0);
    for (std::size_t v = 0; v < m; ++v)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l) {
          const std::size_t idx = (v * d + k) * d + l;
          double acc = gt[idx] + 0.5 * p2[idx] + 0.5 * qa[idx] + pdy_a(v, k, l);
          for (std::size_t j = 0; j < n; ++j) acc += dy[v * n + j] * b[(j * d + k) * d + l];
          out.drift[idx] = acc;
        }
  }
  if (g.rate || !rate.empty()) {
    out.rate = g.eval_rate(tp, y);
    if (!rate.empty())
      for (std::size_t v = 0; v < m; ++v)
        for (std::size_t j = 0; j < n; ++j) out.rate[v] += dy[v * n + j] * rate[j];
  }
  return out;
}

// start + int I . dw (compensated, derivative Igub) + int F : d<w> + int rate dt.
ControlledPath integrate_dynamics(const RoughPathPtr& base, std::size_t m, const std::vector<double>& start,
                                  std::vector<double> integrand, std::vector<double> integrand_gub,
                                  std::vector<double> drift, const std::vector<double>& rate) {
  const std::size_t d = base->dim();
  const Grid& grid = base->grid();
  const ControlledPath in(base, m, d, std::move(integrand), std::move(integrand_gub));
  const ControlledPath rough = rough_integral(in, start);
  const SampledPath young = young_integral(SampledPath(grid, m * d * d, std::move(drift)), bracket(*base), m);
  std::vector<double> values(grid.nodes() * m);
  std::vector<double> acc(m, 0.0);
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    if (i > 0 && !rate.empty()) {
      const double dt = grid.time(i) - grid.time(i - 1);
      for (std::size_t v = 0; v < m; ++v) acc[v] += rate[(i - 1) * m + v] * dt;
    }
    for (std::size_t v = 0; v < m; ++v) values[i * m + v] = rough.value(i)[v] + young(i, v) + acc[v];
  }
  return ControlledPath(base, m, 1, std::move(values), in.theta().data());
}

}  // namespace

ControlledPath compose(const CoefficientBundle& g, const ControlledPath& theta) {
  require(g.regularity >= Regularity::kC12, ErrorKind::kCapability,
          std::string("composition needs a C12 bundle, got ") + regularity_name(g.regularity));
  const std::size_t d = theta.driver_dim();
  check_shapes(g, theta.size(), d);
  const PathContext ctx(theta.base()->omega());
  const Grid& grid = theta.grid();
  const std::size_t m = g.size();
  std::vector<double> values(grid.nodes() * m), gub(grid.nodes() * m * d);
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const TimePoint tp{grid.time(i), i, &ctx};
    const auto c = chain_at(g, tp, theta.value(i), theta.derivative(i), {}, {}, {}, d, false, false);
    std::copy(c.value.begin(), c.value.end(), values.begin() + i * m);
    std::copy(c.gub.begin(), c.gub.end(), gub.begin() + i * m * d);
  }
  return ControlledPath(theta.base(), g.rows, g.cols, std::move(values), std::move(gub));
}

SecondOrderControlled compose_second_order(const CoefficientBundle& g, const SecondOrderControlled& theta) {
  require(g.has_time(), ErrorKind::kCapability, "bundle '" + g.name + "' supplies no D_t g");
  require(g.has_path2() && g.has_path_dy(), ErrorKind::kCapability,
          "bundle '" + g.name + "' lacks d_ww g or d_y d_w g");
  const ControlledPath first = compose(g, theta.first());
  const std::size_t d = theta.driver_dim(), m = g.size(), n = g.in_dim, dd = d * d;
  const PathContext ctx(theta.base()->omega());
  const Grid& grid = theta.grid();
  std::vector<double> second(grid.nodes() * m * dd), time(grid.nodes() * m * dd), rate;
  const bool with_rate = static_cast<bool>(g.rate) || theta.has_rate();
  if (with_rate) rate.assign(grid.nodes() * m, 0.0);
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const TimePoint tp{grid.time(i), i, &ctx};
    const auto y = theta.first().value(i);
    const auto c = chain_at(g, tp, y, theta.first().derivative(i), theta.second(i), {}, theta.rate(i), d, true, false);
    std::copy(c.gub2.begin(), c.gub2.end(), second.begin() + i * m * dd);
    const auto gt = g.eval_time(tp, y);
    const auto dy = g.eval_dy(tp, y);
    const auto tt = theta.time_part(i);
    for (std::size_t v = 0; v < m; ++v)
      for (std::size_t q = 0; q < dd; ++q) {
        double acc = gt[v * dd + q];
        for (std::size_t j = 0; j < n; ++j) acc += dy[v * n + j] * tt[j * dd + q];
        time[i * m * dd + v * dd + q] = acc;
      }
    if (with_rate) std::copy(c.rate.begin(), c.rate.end(), rate.begin() + i * m);
  }
  return SecondOrderControlled(first, std::move(second), std::move(time), std::move(rate));
}

ControlledPath ito_ventzell_apply(const CoefficientBundle& g, const SecondOrderControlled& theta) {
  require(g.path_free || (g.path && g.time && g.path2 && g.path_dy), ErrorKind::kCapability,
          "bundle '" + g.name + "' must supply h = d_w g, f (D_t g, d_ww g) and d_y h");
  const std::size_t d = theta.driver_dim();
  check_shapes(g, theta.size(), d);
  const std::size_t m = g.size(), n = g.in_dim, dd = d * d;
  const PathContext ctx(theta.base()->omega());
  const Grid& grid = theta.grid();
  std::vector<double> integrand(grid.nodes() * m * d), igub(grid.nodes() * m * dd), drift(grid.nodes() * m * dd),
      rate;
  const bool with_rate = static_cast<bool>(g.rate) || theta.has_rate();
  if (with_rate) rate.assign(grid.nodes() * m, 0.0);
  std::vector<double> start, b(n * dd);
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const TimePoint tp{grid.time(i), i, &ctx};
    const auto da = theta.second(i);
    const auto tt = theta.time_part(i);
    for (std::size_t q = 0; q < n * dd; ++q) b[q] = tt[q] + 0.5 * da[q];
    const auto c = chain_at(g, tp, theta.first().value(i), theta.first().derivative(i), da, b, theta.rate(i), d,
                            true, true);
    if (i == 0) start = c.value;
    std::copy(c.gub.begin(), c.gub.end(), integrand.begin() + i * m * d);
    std::copy(c.gub2.begin(), c.gub2.end(), igub.begin() + i * m * dd);
    std::copy(c.drift.begin(), c.drift.end(), drift.begin() + i * m * dd);
    if (with_rate) std::copy(c.rate.begin(), c.rate.end(), rate.begin() + i * m);
  }
  return integrate_dynamics(theta.base(), m, start, std::move(integrand), std::move(igub), std::move(drift), rate);
}

ControlledPath ito_reconstruction(const SecondOrderControlled& theta) {
  const Grid& grid = theta.grid();
  const std::size_t m = theta.size(), d = theta.driver_dim(), dd = d * d;
  std::vector<double> drift(grid.nodes() * m * dd), rate;
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const auto s = theta.second(i);
    const auto t = theta.time_part(i);
    for (std::size_t q = 0; q < m * dd; ++q) drift[i * m * dd + q] = t[q] + 0.5 * s[q];
    if (theta.has_rate()) {
      const auto r = theta.rate(i);
      rate.insert(rate.end(), r.begin(), r.end());
    }
  }
  std::vector<double> second(grid.nodes() * m * dd);
  for (std::size_t i = 0; i < grid.nodes(); ++i) {
    const auto s = theta.second(i);
    std::copy(s.begin(), s.end(), second.begin() + i * m * dd);
  }
  const auto v0 = theta.first().value(0);
  return integrate_dynamics(theta.base(), m, std::vector<double>(v0.begin(), v0.end()),
                            theta.first().gubinelli().data(), std::move(second), std::move(drift), rate);
}

namespace {

// fn(s, t) returns the Euclidean size of the two-point quantity.
template <class Fn>
LagProfile lag_profile(const Grid& grid, int max_lag_log2, Stride stride, Fn fn) {
  require(max_lag_log2 >= 1, ErrorKind::kParameter, "need at least two lags");
  const std::size_t n = grid.steps();
  const std::size_t step = resolve_stride(grid, stride);
  LagProfile out;
  for (int j = 0; j <= max_lag_log2; ++j) {
    const std::size_t lag = std::size_t{1} << j;
    if (lag > n) break;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s + lag <= n; s += step) {
      const double r = fn(s, s + lag);
      sum += r * r;
      ++count;
    }
    out.lags.push_back(static_cast<double>(lag) * grid.h());
    out.rms.push_back(std::sqrt(sum / static_cast<double>(count)));
  }
  out.fit = fit_order(out.lags, out.rms, 1e-14);
  return out;
}

TaylorReport taylor_impl(const SecondOrderControlled& theta, int max_lag_log2, Stride stride, bool with_area) {
  const RoughPath& rp = *theta.base();
  const std::size_t m = theta.size(), d = theta.driver_dim(), dd = d * d;
  const auto prefix = chen_prefix(rp.second(), rp.omega());
  const BracketPath br = bracket(rp);
  const SampledPath& w = rp.omega();
  const Grid& grid = theta.grid();
  TaylorReport rep;
  std::vector<double> dw(d), q(dd);
  auto residual = [&](std::size_t s, std::size_t t) {
    for (std::size_t k = 0; k < d; ++k) dw[k] = w(t, k) - w(s, k);
    // quadratic kernel [w w^* + second^* - second]_{s,t} in the orientation that
    // pairs with D2[k][l] = d_l (D theta)[k]; second_{s,t} from the Chen prefix.
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l) {
        q[k * d + l] = dw[k] * dw[l];
        if (with_area) {
          auto sec = [&](std::size_t i, std::size_t j) {
            return prefix[t * dd + i * d + j] - prefix[s * dd + i * d + j] - (w(s, i) - w(0, i)) * dw[j];
          };
          q[k * d + l] += sec(l, k) - sec(k, l);
        }
      }
    const auto val_s = theta.first().value(s), val_t = theta.first().value(t);
    const auto g = theta.first().derivative(s);
    const auto d2 = theta.second(s);
    const auto tp = theta.time_part(s);
    const auto b0 = br.at(s), b1 = br.at(t);
    const auto rate = theta.rate(s);
    const double dt = grid.time(t) - grid.time(s);
    double sq = 0.0;
    for (std::size_t v = 0; v < m; ++v) {
      double r = val_t[v] - val_s[v];
      for (std::size_t k = 0; k < d; ++k) r -= g[v * d + k] * dw[k];
      for (std::size_t kl = 0; kl < dd; ++kl) r -= 0.5 * d2[v * dd + kl] * q[kl] + tp[v * dd + kl] * (b1[kl] - b0[kl]);
      if (!rate.empty()) r -= rate[v] * dt;
      sq += r * r;
    }
    const double res = std::sqrt(sq);
    rep.max_abs = std::max(rep.max_abs, res);
    return res;
  };
  rep.profile = lag_profile(grid, max_lag_log2, stride, residual);
  rep.threshold = rp.pair().young_exponent() - 0.1;
  rep.pass = rep.profile.fit.order >= rep.threshold;
  return rep;
}

}  // namespace

TaylorReport taylor_residual(const SecondOrderControlled& theta, int max_lag_log2, Stride stride) {
  return taylor_impl(theta, max_lag_log2, stride, true);
}

TaylorReport taylor_residual_symmetric(const SecondOrderControlled& theta, int max_lag_log2, Stride stride) {
  return taylor_impl(theta, max_lag_log2, stride, false);
}

RemainderReport remainder_order(const ControlledPath& theta, int max_lag_log2, Stride stride) {
  RemainderReport rep;
  rep.profile = lag_profile(theta.grid(), max_lag_log2, stride,
                            [&](std::size_t s, std::size_t t) { return theta.remainder(s, t).norm(); });
  const HolderPair& p = theta.base()->pair();
  rep.threshold = p.alpha + p.beta - 0.05;
  rep.pass = rep.profile.fit.order >= rep.threshold;
  return rep;
}

CommutationReport commutation_check(const CoefficientBundle& g, const RoughPath* driver, const ProbeBox& box,
                                    double tol) {
  CommutationReport rep;
  require(g.path_free || static_cast<bool>(g.path), ErrorKind::kCapability,
          "bundle '" + g.name + "' supplies no d_w g");
  std::unique_ptr<RoughPath> own;
  if (driver == nullptr) {
    own = std::make_unique<RoughPath>(lift_smooth(smooth_test_generator(g.driver_dim, 97), Grid::dyadic(0.0, 1.0, 5)));
    driver = own.get();
  }
  const PathContext ctx(driver->omega());
  const std::size_t n = g.in_dim, m = g.size(), d = g.driver_dim, dd = d * d;
  const std::size_t nodes = driver->grid().nodes();
  const std::size_t probe_nodes[3] = {0, nodes / 2, nodes - 1};
  const double eps = 1e-4;
  rep.used_fd_path = !g.dy_path;
  rep.used_fd_time = !g.dy_time;
  const bool time_known = g.has_time();
  for (std::size_t node : probe_nodes) {
    const TimePoint tp{driver->grid().time(node), node, &ctx};
    for (const auto& y : probe_points(n, box)) {
      ++rep.probes;
      const auto pdy = g.eval_path_dy(tp, y);  // d_y d_w g as [v][k][j]
      std::vector<double> dyp(m * n * d, 0.0), dyt(m * n * dd, 0.0);
      if (g.dy_path) g.dy_path(tp, y, dyp);
      if (g.dy_time) g.dy_time(tp, y, dyt);
      std::vector<double> tdy;
      if (time_known) tdy.assign(m * dd * n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> yp = y, ym = y;
        yp[j] += eps;
        ym[j] -= eps;
        if (!g.dy_path) {
          const auto pp = g.eval_path(tp, yp), pm = g.eval_path(tp, ym);
          for (std::size_t v = 0; v < m; ++v)
            for (std::size_t k = 0; k < d; ++k) dyp[(v * n + j) * d + k] = (pp[v * d + k] - pm[v * d + k]) / (2 * eps);
        }
        if (time_known) {
          const auto tpp = g.eval_time(tp, yp), tpm = g.eval_time(tp, ym);
          for (std::size_t v = 0; v < m; ++v)
            for (std::size_t q = 0; q < dd; ++q) tdy[(v * dd + q) * n + j] = (tpp[v * dd + q] - tpm[v * dd + q]) / (2 * eps);
        }
      }
      for (std::size_t v = 0; v < m; ++v)
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t k = 0; k < d; ++k) {
            const double a = pdy[(v * d + k) * n + j], b = dyp[(v * n + j) * d + k];
            rep.path_gap = std::max(rep.path_gap, std::abs(a - b) / std::max(1.0, std::abs(a)));
          }
          if (time_known && g.dy_time)
            for (std::size_t q = 0; q < dd; ++q) {
              const double a = dyt[(v * n + j) * dd + q], b = tdy[(v * dd + q) * n + j];
              rep.time_gap = std::max(rep.time_gap, std::abs(a - b) / std::max(1.0, std::abs(a)));
            }
        }
    }
  }
  rep.pass = rep.path_gap < tol && rep.time_gap < tol;
  return rep;
}

ChainBoundReport chain_bound_ratio(const CoefficientBundle& g, const ControlledPath& theta, Stride stride) {
  ChainBoundReport rep;
  const ControlledPath eta = compose(g, theta);
  rep.eta_norm = controlled_norms(eta, stride).full;
  double lo = theta.theta().data()[0], hi = lo;
  for (double x : theta.theta().data()) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  rep.g_norm = function_norms(g, theta.base(), ProbeBox{lo, hi, 9}, stride).norm_2;
  rep.ratio = rep.g_norm > 0.0 ? rep.eta_norm / rep.g_norm : 0.0;
  return rep;
}

}  // namespace roughcalc
