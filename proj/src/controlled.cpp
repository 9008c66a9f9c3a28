#include "roughcalc/controlled.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "roughcalc/convergence.hpp"
#include "roughcalc/kernels.hpp"
#include "roughcalc/pairing.hpp"
#include "scan.hpp"

namespace roughcalc {

ControlledPath::ControlledPath(RoughPathPtr base, std::size_t rows, std::size_t cols, std::vector<double> values,
                               std::vector<double> gubinelli)
    : base_(std::move(base)),
      rows_(rows),
      cols_(cols),
      theta_(base_->grid(), rows * cols, std::move(values)),
      gub_(base_->grid(), rows * cols * base_->dim(), std::move(gubinelli)) {
  require(rows * cols > 0, ErrorKind::kDimension, "controlled path needs at least one component");
}

ControlledPath ControlledPath::of_driver(RoughPathPtr base) {
  const std::size_t d = base->dim();
  const std::size_t n = base->grid().nodes();
  std::vector<double> gub(n * d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) gub[i * d * d + k * d + k] = 1.0;
  std::vector<double> values = base->omega().data();
  return ControlledPath(std::move(base), 1, d, std::move(values), std::move(gub));
}

ControlledPath ControlledPath::constant(RoughPathPtr base, std::size_t rows, std::size_t cols,
                                        std::vector<double> value) {
  require(value.size() == rows * cols, ErrorKind::kDimension, "constant value has wrong size");
  const std::size_t n = base->grid().nodes();
  std::vector<double> values;
  values.reserve(n * value.size());
  for (std::size_t i = 0; i < n; ++i) values.insert(values.end(), value.begin(), value.end());
  std::vector<double> gub(n * value.size() * base->dim(), 0.0);
  return ControlledPath(std::move(base), rows, cols, std::move(values), std::move(gub));
}

ControlledPath ControlledPath::of_function(RoughPathPtr base, std::size_t rows, std::size_t cols,
                                           const PointFn& fn) {
  const std::size_t m = rows * cols;
  const std::size_t d = base->dim();
  const std::size_t n = base->grid().nodes();
  std::vector<double> values(n * m), gub(n * m * d);
  for (std::size_t i = 0; i < n; ++i)
    fn(base->grid().time(i), base->omega().at(i), {values.data() + i * m, m}, {gub.data() + i * m * d, m * d});
  return ControlledPath(std::move(base), rows, cols, std::move(values), std::move(gub));
}

Vector ControlledPath::remainder(std::size_t s, std::size_t t) const {
  const std::size_t m = size();
  const std::size_t d = driver_dim();
  Vector r = theta_.increment(s, t);
  const Vector dw = base_->omega().increment(s, t);
  const auto g = gub_.at(s);
  for (std::size_t v = 0; v < m; ++v)
    for (std::size_t k = 0; k < d; ++k) r[v] -= g[v * d + k] * dw[k];
  return r;
}

ControlledPath ControlledPath::restricted(RoughPathPtr coarse) const {
  const Grid& fg = grid();
  const Grid& cg = coarse->grid();
  require(cg.t0() == fg.t0() && cg.t1() == fg.t1() && cg.steps() > 0 && fg.steps() % cg.steps() == 0,
          ErrorKind::kAlignment, "coarse base is not a sub-lattice of the fine grid");
  require(coarse->dim() == driver_dim(), ErrorKind::kDimension, "coarse base has a different dimension");
  const std::size_t factor = fg.steps() / cg.steps();
  const std::size_t m = size();
  const std::size_t md = m * driver_dim();
  std::vector<double> values, gub;
  values.reserve(cg.nodes() * m);
  gub.reserve(cg.nodes() * md);
  for (std::size_t i = 0; i < cg.nodes(); ++i) {
    const auto v = theta_.at(i * factor);
    const auto g = gub_.at(i * factor);
    values.insert(values.end(), v.begin(), v.end());
    gub.insert(gub.end(), g.begin(), g.end());
  }
  return ControlledPath(std::move(coarse), rows_, cols_, std::move(values), std::move(gub));
}

ControlledPath ControlledPath::with_base(RoughPathPtr base) const {
  require(base->grid() == grid() && base->dim() == driver_dim(), ErrorKind::kAlignment,
          "replacement base must share grid and dimension");
  return ControlledPath(std::move(base), rows_, cols_, theta_.data(), gub_.data());
}

ControlledPath ControlledPath::scaled(double factor) const {
  return ControlledPath(base_, rows_, cols_, theta_.scaled(factor).data(), gub_.scaled(factor).data());
}

ControlledPath ControlledPath::plus(const ControlledPath& other) const {
  require(other.grid() == grid() && other.rows_ == rows_ && other.cols_ == cols_ &&
              other.driver_dim() == driver_dim(),
          ErrorKind::kDimension, "controlled paths are not compatible");
  std::vector<double> v = theta_.data(), g = gub_.data();
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += other.theta_.data()[k];
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += other.gub_.data()[k];
  return ControlledPath(base_, rows_, cols_, std::move(v), std::move(g));
}

ControlledNorms controlled_norms(const ControlledPath& p, Stride stride) {
  const HolderPair& hp = p.base()->pair();
  const std::size_t m = p.size();
  const std::size_t d = p.driver_dim();
  ControlledNorms n;
  n.gub_norm_beta = holder_norm(p.gubinelli(), hp.beta, stride);
  auto fill = [&](std::size_t s, double* g) {
    const auto src = p.derivative(s);
    std::copy(src.begin(), src.end(), g);
  };
  n.remainder_norm = detail::anchored_sup(p.grid(), p.theta().data(), m, p.base()->omega().data(), d, fill,
                                          hp.alpha + hp.beta, stride)
                         .value;
  n.seminorm = n.gub_norm_beta + n.remainder_norm;
  double g0 = 0.0;
  for (double x : p.derivative(0)) g0 += x * x;
  n.full = n.seminorm + std::sqrt(g0);
  return n;
}

ControlledDistance controlled_distance(const ControlledPath& a, const ControlledPath& b, Stride stride) {
  require(a.grid() == b.grid(), ErrorKind::kAlignment, "controlled paths live on different grids");
  require(a.size() == b.size() && a.driver_dim() == b.driver_dim(), ErrorKind::kDimension,
          "controlled paths have different shapes");
  const HolderPair& hp = a.base()->pair();
  const std::size_t m = a.size();
  const std::size_t d = a.driver_dim();
  const std::size_t n = a.grid().nodes();
  const auto& ga = a.gubinelli().data();
  const auto& gb = b.gubinelli().data();
  std::vector<double> dg(ga.size());
  for (std::size_t k = 0; k < dg.size(); ++k) dg[k] = ga[k] - gb[k];
  ControlledDistance out;
  const double gub_part = holder_norm(SampledPath(a.grid(), m * d, dg), hp.beta, stride);
  // R^a - R^b = (a - b)_{s,t} - (Da - Db)_s w_{s,t} - Db_s (w - w~)_{s,t}
  std::vector<double> x(n * m);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = a.theta().data()[k] - b.theta().data()[k];
  const auto& wa = a.base()->omega().data();
  const auto& wb = b.base()->omega().data();
  std::vector<double> w(n * 2 * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      w[i * 2 * d + k] = wa[i * d + k];
      w[i * 2 * d + d + k] = wa[i * d + k] - wb[i * d + k];
    }
  auto fill = [&](std::size_t s, double* g) {
    for (std::size_t v = 0; v < m; ++v)
      for (std::size_t k = 0; k < d; ++k) {
        g[v * 2 * d + k] = dg[(s * m + v) * d + k];
        g[v * 2 * d + d + k] = gb[(s * m + v) * d + k];
      }
  };
  const double rem_part = detail::anchored_sup(a.grid(), x, m, w, 2 * d, fill, hp.alpha + hp.beta, stride).value;
  out.d = gub_part + rem_part;
  double g0 = 0.0;
  for (std::size_t k = 0; k < m * d; ++k) g0 += dg[k] * dg[k];
  out.full = out.d + std::sqrt(g0);
  return out;
}

ControlledPath rough_integral(const ControlledPath& integrand, std::vector<double> start) {
  const RoughPath& rp = *integrand.base();
  const std::size_t d = rp.dim();
  require(integrand.cols() == d, ErrorKind::kDimension, "integrand must be E^d-valued against a d-dim driver");
  const std::size_t e = integrand.rows();
  if (start.empty()) start.assign(e, 0.0);
  require(start.size() == e, ErrorKind::kDimension, "start value has wrong size");
  const std::size_t steps = rp.grid().steps();
  const std::size_t nodes = steps + 1;

  // Component-major blocks over steps, fed to the paired kernel.
  const std::vector<double> th = integrand.theta().soa();
  const std::vector<double> gb = integrand.gubinelli().soa();
  std::vector<double> dw(d * steps), area(d * d * steps);
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t k = 0; k < d; ++k) dw[k * steps + i] = rp.omega()(i + 1, k) - rp.omega()(i, k);
    const auto st = rp.second().step(i);
    for (std::size_t k = 0; k < d * d; ++k) area[k * steps + i] = st[k];
  }
  std::vector<const double*> pa, pb;
  std::vector<double> inc(steps);
  std::vector<double> values(nodes * e);
  for (std::size_t c = 0; c < e; ++c) {
    pa.clear();
    pb.clear();
    for (std::size_t l = 0; l < d; ++l) {
      pa.push_back(th.data() + (c * d + l) * nodes);
      pb.push_back(dw.data() + l * steps);
    }
    for (std::size_t l = 0; l < d; ++l)
      for (std::size_t k = 0; k < d; ++k) {
        pa.push_back(gb.data() + ((c * d + l) * d + k) * nodes);
        pb.push_back(area.data() + (k * d + l) * steps);
      }
    kernels::paired_dot(pa.data(), pb.data(), pa.size(), steps, inc.data());
    double acc = start[c];
    values[c] = acc;
    for (std::size_t i = 0; i < steps; ++i) {
      acc += inc[i];
      values[(i + 1) * e + c] = acc;
    }
  }
  std::vector<double> gub = integrand.theta().data();
  return ControlledPath(integrand.base(), e, 1, std::move(values), std::move(gub));
}

LocalErrorReport local_errors(const ControlledPath& integrand, std::size_t span, Stride stride) {
  require(span >= 1, ErrorKind::kParameter, "span must be at least one step");
  const RoughPath& rp = *integrand.base();
  const std::size_t steps = rp.grid().steps();
  require(span <= steps, ErrorKind::kParameter, "span exceeds the grid");
  const std::size_t d = rp.dim();
  const std::size_t e = integrand.rows();
  const ControlledPath big = rough_integral(integrand);
  LocalErrorReport rep;
  rep.span = span;
  for (std::size_t s = 0; s + span <= steps; ++s) {
    const std::size_t t = s + span;
    const Vector dw = rp.omega().increment(s, t);
    const Matrix w2 = rp.second_level(s, t);
    std::vector<double> a(w2.size());
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t y = 0; y < d; ++y) a[x * d + y] = w2(x, y);
    const auto lin = pairing::dot(integrand.value(s), {dw.data(), d}, e);
    const auto ar = pairing::area(integrand.derivative(s), a, e, d);
    double err2 = 0.0;
    for (std::size_t c = 0; c < e; ++c) {
      const double r = big.theta()(t, c) - big.theta()(s, c) - lin[c] - ar[c];
      err2 += r * r;
    }
    rep.measured.push_back(std::sqrt(err2));
    rep.max_measured = std::max(rep.max_measured, rep.measured.back());
  }
  const HolderPair& hp = rp.pair();
  const double gamma = hp.young_exponent();
  const double sewing = 1.0 / (1.0 - std::pow(2.0, 1.0 - gamma));
  rep.bound = sewing * rough_path_norm(rp, stride) * controlled_norms(integrand, stride).seminorm *
              std::pow(static_cast<double>(span) * rp.grid().h(), gamma);
  return rep;
}

SampledPath young_integral(const SampledPath& theta, const BracketPath& br, std::size_t e) {
  require(theta.grid() == br.grid(), ErrorKind::kAlignment, "integrand and bracket live on different grids");
  const std::size_t dd = br.dim() * br.dim();
  require(theta.dim() == e * dd, ErrorKind::kDimension, "integrand must have e*d*d components");
  const std::size_t steps = theta.grid().steps();
  std::vector<double> out((steps + 1) * e, 0.0);
  std::vector<double> db(dd);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto b0 = br.at(i);
    const auto b1 = br.at(i + 1);
    for (std::size_t k = 0; k < dd; ++k) db[k] = b1[k] - b0[k];
    const auto inc = pairing::trace(theta.at(i), db, e);
    for (std::size_t c = 0; c < e; ++c) out[(i + 1) * e + c] = out[i * e + c] + inc[c];
  }
  return SampledPath(theta.grid(), e, std::move(out));
}

ControlledPath backward_integrand(const ControlledPath& p, std::size_t t0_node) {
  auto back = std::make_shared<const RoughPath>(backward_lift(*p.base(), t0_node));
  const std::size_t m = p.size();
  const std::size_t md = m * p.driver_dim();
  std::vector<double> values((t0_node + 1) * m), gub((t0_node + 1) * md);
  for (std::size_t j = 0; j <= t0_node; ++j) {
    const auto v = p.value(t0_node - j);
    const auto g = p.derivative(t0_node - j);
    std::copy(v.begin(), v.end(), values.begin() + j * m);
    for (std::size_t k = 0; k < md; ++k) gub[j * md + k] = -g[k];
  }
  return ControlledPath(std::move(back), p.rows(), p.cols(), std::move(values), std::move(gub));
}

BackwardCheckReport backward_integral_check(const ControlledPath& integrand, std::size_t t0_node) {
  require(t0_node < integrand.grid().nodes(), ErrorKind::kAlignment, "t0 is not a grid node");
  BackwardCheckReport rep;
  rep.t0_node = t0_node;
  if (t0_node == 0) return rep;
  const ControlledPath fwd = rough_integral(integrand);
  const ControlledPath bwd = rough_integral(backward_integrand(integrand, t0_node));
  // Forward over [s,t] against backward over [K-t, K-s]: the mismatch is D_t - D_s
  // with D_j = F_j + B_{K-j}, so the max over windows is the range of D.
  const std::size_t e = fwd.rows();
  double worst = 0.0;
  for (std::size_t c = 0; c < e; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t j = 0; j <= t0_node; ++j) {
      const double dj = fwd.theta()(j, c) + bwd.theta()(t0_node - j, c);
      lo = std::min(lo, dj);
      hi = std::max(hi, dj);
    }
    worst = std::max(worst, hi - lo);
  }
  rep.max_discrepancy = worst;
  return rep;
}

BackwardDecayReport backward_integral_decay(const ControlledPath& fine, double t0, const std::vector<int>& levels) {
  require(!levels.empty(), ErrorKind::kParameter, "levels list is empty");
  BackwardDecayReport rep;
  std::vector<double> scales;
  for (int level : levels) {
    auto coarse = std::make_shared<const RoughPath>(refine(*fine.base(), level));
    const ControlledPath c = fine.restricted(coarse);
    const auto node = c.grid().node_of(c.grid().t0() + t0);
    require(node.has_value(), ErrorKind::kAlignment, "t0 is not a node of every level");
    rep.levels.push_back(level);
    rep.discrepancies.push_back(backward_integral_check(c, *node).max_discrepancy);
    scales.push_back(c.grid().h());
  }
  if (levels.size() >= 2) {
    const OrderFit fit = fit_order(scales, rep.discrepancies, 1e-13);
    rep.order = fit.order;
    rep.exact = fit.exact;
  }
  return rep;
}

StabilityReport stability_metrics(const ControlledPath& a, const ControlledPath& b, const ControlledPath& int_a,
                                  const ControlledPath& int_b, double constant, Stride stride) {
  StabilityReport rep;
  rep.lhs = controlled_distance(int_a, int_b, stride).d;
  const HolderPair& hp = a.base()->pair();
  const double T = a.grid().span();
  const double dw = rough_path_distance(*a.base(), *b.base(), stride);
  double gb0 = 0.0, dg0 = 0.0;
  const auto ga = a.derivative(0);
  const auto gb = b.derivative(0);
  for (std::size_t k = 0; k < ga.size(); ++k) {
    gb0 += gb[k] * gb[k];
    dg0 += (ga[k] - gb[k]) * (ga[k] - gb[k]);
  }
  rep.rhs = std::pow(T, hp.alpha - hp.beta) * (std::sqrt(gb0) * dw + rough_path_norm(*a.base(), stride) * std::sqrt(dg0)) +
            constant * std::pow(T, hp.alpha) * (dw + controlled_distance(a, b, stride).d);
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : (rep.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return rep;
}

}  // namespace roughcalc
