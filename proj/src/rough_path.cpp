#include "roughcalc/rough_path.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "roughcalc/counter_rng.hpp"
#include "scan.hpp"

namespace roughcalc {

const char* lift_kind_name(LiftKind kind) {
  switch (kind) {
    case LiftKind::kGeometric: return "geometric";
    case LiftKind::kIto: return "ito";
    case LiftKind::kStratonovich: return "stratonovich";
    case LiftKind::kCustom: return "custom";
  }
  return "custom";
}

RoughPath::RoughPath(SampledPath omega, TwoParamProcess second, HolderPair pair, LiftKind kind)
    : omega_(std::move(omega)), second_(std::move(second)), pair_(pair), kind_(kind) {
  require(omega_.grid() == second_.grid(), ErrorKind::kAlignment, "rough path levels live on different grids");
  require(omega_.dim() == second_.dim(), ErrorKind::kDimension, "rough path levels have different dimensions");
  pair_.validate();
}

BracketPath::BracketPath(Grid grid, std::size_t dim, std::vector<double> values)
    : grid_(grid), dim_(dim), values_(std::move(values)) {
  require(values_.size() == grid_.nodes() * dim_ * dim_, ErrorKind::kDimension, "bracket needs nodes*d*d values");
}

BracketPath BracketPath::identity_rate(const Grid& grid, std::size_t dim) {
  std::vector<double> v(grid.nodes() * dim * dim, 0.0);
  for (std::size_t i = 0; i < grid.nodes(); ++i)
    for (std::size_t a = 0; a < dim; ++a) v[i * dim * dim + a * dim + a] = grid.time(i) - grid.t0();
  return BracketPath(grid, dim, std::move(v));
}

Matrix BracketPath::value(std::size_t i) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  Matrix out(d, d);
  auto v = at(i);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) out(a, b) = v[static_cast<std::size_t>(a * d + b)];
  return out;
}

Matrix BracketPath::increment(std::size_t i, std::size_t k) const { return value(k) - value(i); }

SmoothGenerator circle_generator() {
  SmoothGenerator g;
  g.dim = 2;
  const double w = 2.0 * std::numbers::pi;
  g.value = [w](double t, std::span<double> out) {
    out[0] = std::cos(w * t);
    out[1] = std::sin(w * t);
  };
  g.derivative = [w](double t, std::span<double> out) {
    out[0] = -w * std::sin(w * t);
    out[1] = w * std::cos(w * t);
  };
  return g;
}

SmoothGenerator linear_generator(std::vector<double> v) {
  SmoothGenerator g;
  g.dim = v.size();
  g.value = [v](double t, std::span<double> out) {
    for (std::size_t c = 0; c < v.size(); ++c) out[c] = v[c] * t;
  };
  g.derivative = [v](double, std::span<double> out) {
    for (std::size_t c = 0; c < v.size(); ++c) out[c] = v[c];
  };
  return g;
}

SmoothGenerator smooth_test_generator(std::size_t dim, std::uint64_t seed) {
  constexpr std::size_t kModes = 3;
  std::vector<double> amp(dim * kModes), phase(dim * kModes);
  for (std::size_t c = 0; c < dim; ++c)
    for (std::size_t m = 0; m < kModes; ++m) {
      amp[c * kModes + m] = 0.8 * counter_uniform(counter_hash(seed, 17, c, m)) / static_cast<double>(m + 1);
      phase[c * kModes + m] = 2.0 * std::numbers::pi * counter_uniform(counter_hash(seed, 18, c, m));
    }
  SmoothGenerator g;
  g.dim = dim;
  g.value = [=](double t, std::span<double> out) {
    for (std::size_t c = 0; c < dim; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < kModes; ++m) {
        const double k = 2.0 * std::numbers::pi * static_cast<double>(m + 1);
        acc += amp[c * kModes + m] * (std::sin(k * t + phase[c * kModes + m]) - std::sin(phase[c * kModes + m]));
      }
      out[c] = acc;
    }
  };
  g.derivative = [=](double t, std::span<double> out) {
    for (std::size_t c = 0; c < dim; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < kModes; ++m) {
        const double k = 2.0 * std::numbers::pi * static_cast<double>(m + 1);
        acc += amp[c * kModes + m] * k * std::cos(k * t + phase[c * kModes + m]);
      }
      out[c] = acc;
    }
  };
  return g;
}

SmoothGenerator scalar_generator(std::function<double(double)> f, std::function<double(double)> df) {
  SmoothGenerator g;
  g.dim = 1;
  g.value = [f](double t, std::span<double> out) { out[0] = f(t); };
  g.derivative = [df](double t, std::span<double> out) { out[0] = df(t); };
  return g;
}

SampledPath sample_generator(const SmoothGenerator& gen, const Grid& grid) {
  std::vector<double> v(grid.nodes() * gen.dim);
  for (std::size_t i = 0; i < grid.nodes(); ++i) gen.value(grid.time(i), {v.data() + i * gen.dim, gen.dim});
  return SampledPath(grid, gen.dim, std::move(v));
}

namespace {

// Gauss-Legendre nodes and weights on [0, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(static_cast<std::size_t>(n), 0.0);
  w.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[static_cast<std::size_t>(i)] = 0.5 * (1.0 - z);
    w[static_cast<std::size_t>(i)] = 1.0 / ((1.0 - z * z) * dp * dp);
  }
}

}  // namespace

RoughPath lift_smooth(const SmoothGenerator& gen, const Grid& grid, int quad_order, HolderPair pair) {
  require(quad_order >= 4, ErrorKind::kParameter, "quad_order must be >= 4");
  require(gen.dim >= 1 && gen.value && gen.derivative, ErrorKind::kParameter, "generator needs value and derivative");
  const std::size_t d = gen.dim;
  const SampledPath omega = sample_generator(gen, grid);
  std::vector<double> qx, qw;
  gauss_legendre(quad_order, qx, qw);
  std::vector<double> second(grid.steps() * d * d, 0.0);
  std::vector<double> val(d), der(d);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double s = grid.time(i);
    const double h = grid.time(i + 1) - s;
    double* out = second.data() + i * d * d;
    for (std::size_t q = 0; q < qx.size(); ++q) {
      const double r = s + h * qx[q];
      gen.value(r, val);
      gen.derivative(r, der);
      for (std::size_t a = 0; a < d; ++a) {
        const double left = val[a] - omega(i, a);
        for (std::size_t b = 0; b < d; ++b) out[a * d + b] += h * qw[q] * left * der[b];
      }
    }
    for (std::size_t k = 0; k < d * d; ++k)
      require(std::isfinite(out[k]), ErrorKind::kInput, "generator produced non-finite output");
  }
  return RoughPath(omega, TwoParamProcess(grid, d, std::move(second)), pair, LiftKind::kGeometric);
}

RoughPath lift_piecewise_linear(const SampledPath& omega, HolderPair pair) {
  const std::size_t d = omega.dim();
  std::vector<double> second(omega.grid().steps() * d * d);
  for (std::size_t i = 0; i < omega.grid().steps(); ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        second[i * d * d + a * d + b] = 0.5 * (omega(i + 1, a) - omega(i, a)) * (omega(i + 1, b) - omega(i, b));
  return RoughPath(omega, TwoParamProcess(omega.grid(), d, std::move(second)), pair, LiftKind::kGeometric);
}

SampledPath brownian_path(std::uint64_t seed, std::size_t dim, const Grid& grid) {
  const int level = grid.level_or_throw();
  require(dim >= 1, ErrorKind::kParameter, "dimension must be >= 1");
  const std::size_t n = grid.steps();
  const double T = grid.span();
  std::vector<double> w(grid.nodes() * dim, 0.0);
  for (std::size_t c = 0; c < dim; ++c) w[n * dim + c] = std::sqrt(T) * counter_normal(seed, 0, 0, c);
  for (int l = 1; l <= level; ++l) {
    const std::size_t half = n >> l;
    const double sd = std::sqrt(T / static_cast<double>(std::size_t{1} << (l + 1)));
    for (std::size_t j = half; j < n; j += 2 * half) {
      const std::uint64_t key = (j >> (level - l));  // index of the new node at level l
      for (std::size_t c = 0; c < dim; ++c) {
        w[j * dim + c] = 0.5 * (w[(j - half) * dim + c] + w[(j + half) * dim + c]) +
                         sd * counter_normal(seed, static_cast<std::uint64_t>(l), key, c);
      }
    }
  }
  return SampledPath(grid, dim, std::move(w));
}

RoughPath foellmer_lift(const SampledPath& fine, int storage_level, HolderPair pair) {
  const int fine_level = fine.grid().level_or_throw();
  require(storage_level >= 0 && storage_level <= fine_level, ErrorKind::kParameter,
          "storage level must not exceed the fine level");
  const std::size_t d = fine.dim();
  const std::size_t r = std::size_t{1} << (fine_level - storage_level);
  const SampledPath omega = refine(fine, storage_level);
  const Grid& grid = omega.grid();
  std::vector<double> second(grid.steps() * d * d, 0.0);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    double* out = second.data() + i * d * d;
    const std::size_t j0 = i * r;
    for (std::size_t j = j0; j < j0 + r; ++j)
      for (std::size_t a = 0; a < d; ++a) {
        const double left = fine(j, a) - fine(j0, a);
        if (left == 0.0) continue;
        for (std::size_t b = 0; b < d; ++b) out[a * d + b] += left * (fine(j + 1, b) - fine(j, b));
      }
  }
  return RoughPath(omega, TwoParamProcess(grid, d, std::move(second)), pair, LiftKind::kIto);
}

RoughPath lift_brownian_ito(std::uint64_t seed, std::size_t dim, const Grid& grid, int subdyadic_depth,
                            HolderPair pair) {
  require(subdyadic_depth >= 0, ErrorKind::kParameter, "subdyadic_depth must be >= 0");
  const int level = grid.level_or_throw();
  const Grid fine = Grid::dyadic(grid.t0(), grid.t1(), level + subdyadic_depth);
  return foellmer_lift(brownian_path(seed, dim, fine), level, pair);
}

RoughPath stratonovich_of(const RoughPath& ito) {
  const std::size_t d = ito.dim();
  std::vector<double> second = ito.second().data();
  const Grid& grid = ito.grid();
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double h = grid.time(i + 1) - grid.time(i);
    for (std::size_t a = 0; a < d; ++a) second[i * d * d + a * d + a] += 0.5 * h;
  }
  return RoughPath(ito.omega(), TwoParamProcess(grid, d, std::move(second)), ito.pair(), LiftKind::kStratonovich);
}

RoughPath lift_brownian_stratonovich(std::uint64_t seed, std::size_t dim, const Grid& grid, int subdyadic_depth,
                                     HolderPair pair) {
  return stratonovich_of(lift_brownian_ito(seed, dim, grid, subdyadic_depth, pair));
}

RoughPath refine(const RoughPath& rp, int target_level) {
  return RoughPath(refine(rp.omega(), target_level), refine(rp.second(), rp.omega(), target_level), rp.pair(),
                   rp.kind());
}

RoughPath dilate(const RoughPath& rp, double lambda) {
  std::vector<double> second = rp.second().data();
  for (double& v : second) v *= lambda * lambda;
  return RoughPath(rp.omega().scaled(lambda), TwoParamProcess(rp.grid(), rp.dim(), std::move(second)), rp.pair(),
                   rp.kind());
}

RoughPath translate(const RoughPath& rp, const SampledPath& phi) {
  require(phi.grid() == rp.grid(), ErrorKind::kAlignment, "translation path lives on another grid");
  require(phi.dim() == rp.dim(), ErrorKind::kDimension, "translation path dimension differs");
  const std::size_t d = rp.dim();
  const Grid& grid = rp.grid();
  std::vector<double> omega(rp.omega().data());
  for (std::size_t k = 0; k < omega.size(); ++k) omega[k] += phi.data()[k];
  std::vector<double> second = rp.second().data();
  for (std::size_t i = 0; i < grid.steps(); ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double wa = rp.omega()(i + 1, a) - rp.omega()(i, a);
      const double pa = phi(i + 1, a) - phi(i, a);
      for (std::size_t b = 0; b < d; ++b) {
        const double wb = rp.omega()(i + 1, b) - rp.omega()(i, b);
        const double pb = phi(i + 1, b) - phi(i, b);
        second[i * d * d + a * d + b] += 0.5 * (wa * pb + pa * wb) + 0.5 * pa * pb;
      }
    }
  return RoughPath(SampledPath(grid, d, std::move(omega)), TwoParamProcess(grid, d, std::move(second)), rp.pair(),
                   rp.kind() == LiftKind::kGeometric ? LiftKind::kGeometric : LiftKind::kCustom);
}

BracketPath bracket(const RoughPath& rp) {
  const std::size_t d = rp.dim();
  const Grid& grid = rp.grid();
  std::vector<double> v(grid.nodes() * d * d, 0.0);
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    auto st = rp.second().step(i);
    const double* prev = v.data() + i * d * d;
    double* next = v.data() + (i + 1) * d * d;
    for (std::size_t a = 0; a < d; ++a) {
      const double wa = rp.omega()(i + 1, a) - rp.omega()(i, a);
      for (std::size_t b = 0; b < d; ++b) {
        const double wb = rp.omega()(i + 1, b) - rp.omega()(i, b);
        next[a * d + b] = prev[a * d + b] + (wa * wb - (st[a * d + b] + st[b * d + a]));
      }
    }
  }
  return BracketPath(grid, d, std::move(v));
}

RoughPath backward_lift(const RoughPath& rp, std::size_t t0_node) {
  const Grid& grid = rp.grid();
  require(t0_node < grid.nodes(), ErrorKind::kAlignment, "backward lift time is not a grid node");
  const std::size_t K = t0_node;
  const std::size_t d = rp.dim();
  const Grid out_grid = Grid::uniform(0.0, grid.time(K) - grid.t0(), K);
  std::vector<double> omega(out_grid.nodes() * d);
  for (std::size_t j = 0; j <= K; ++j)
    for (std::size_t a = 0; a < d; ++a) omega[j * d + a] = rp.omega()(K, a) - rp.omega()(K - j, a);
  std::vector<double> second(K * d * d);
  for (std::size_t j = 0; j < K; ++j) {
    const std::size_t src = K - j - 1;
    auto st = rp.second().step(src);
    for (std::size_t a = 0; a < d; ++a) {
      const double wa = rp.omega()(src + 1, a) - rp.omega()(src, a);
      for (std::size_t b = 0; b < d; ++b) {
        const double wb = rp.omega()(src + 1, b) - rp.omega()(src, b);
        second[j * d * d + a * d + b] = wa * wb - st[a * d + b];
      }
    }
  }
  return RoughPath(SampledPath(out_grid, d, std::move(omega)), TwoParamProcess(out_grid, d, std::move(second)),
                   rp.pair(), LiftKind::kCustom);
}

RoughPath slice(const RoughPath& rp, std::size_t i0, std::size_t i1) {
  const Grid& grid = rp.grid();
  require(i0 < i1 && i1 < grid.nodes(), ErrorKind::kAlignment, "slice needs i0 < i1 inside the grid");
  const std::size_t d = rp.dim();
  const Grid out = (i0 == 0 && i1 == grid.steps()) ? grid : Grid::uniform(grid.time(i0), grid.time(i1), i1 - i0);
  std::vector<double> omega(rp.omega().data().begin() + i0 * d, rp.omega().data().begin() + (i1 + 1) * d);
  std::vector<double> second(rp.second().data().begin() + i0 * d * d, rp.second().data().begin() + i1 * d * d);
  return RoughPath(SampledPath(out, d, std::move(omega)), TwoParamProcess(out, d, std::move(second)), rp.pair(),
                   rp.kind());
}

RoughPath backward_lift_at(const RoughPath& rp, double t0) {
  const auto node = rp.grid().node_of(rp.grid().t0() + t0);
  require(node.has_value(), ErrorKind::kAlignment, "backward lift time is not a grid node");
  return backward_lift(rp, *node);
}

double chen_defect(const RoughPath& rp, std::size_t samples) {
  const std::size_t n = rp.grid().nodes();
  if (n < 3) return 0.0;
  std::vector<std::size_t> idx;
  const std::size_t count = std::min(samples, n);
  for (std::size_t k = 0; k < count; ++k) idx.push_back(k * (n - 1) / (count - 1));
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  const std::size_t m = idx.size();
  std::vector<Matrix> ext(m * m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) ext[a * m + b] = rp.second_level(idx[a], idx[b]);
  double worst = 0.0;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b)
      for (std::size_t c = b + 1; c < m; ++c) {
        const Vector wab = rp.omega().increment(idx[a], idx[b]);
        const Vector wbc = rp.omega().increment(idx[b], idx[c]);
        const Matrix defect = ext[a * m + c] - ext[a * m + b] - ext[b * m + c] - wab * wbc.transpose();
        worst = std::max(worst, defect.cwiseAbs().maxCoeff());
      }
  return worst;
}

double rough_path_norm(const RoughPath& rp, Stride stride) {
  return holder_norm(rp.omega(), rp.pair().alpha, stride) +
         two_param_holder_norm(rp.second(), rp.omega(), 2.0 * rp.pair().alpha, stride).value;
}

double rough_path_distance(const RoughPath& a, const RoughPath& b, Stride stride) {
  require(a.grid() == b.grid(), ErrorKind::kAlignment, "rough paths live on different grids");
  require(a.dim() == b.dim(), ErrorKind::kDimension, "rough path dimensions differ");
  const std::size_t d = a.dim();
  const double alpha = a.pair().alpha;
  std::vector<double> dw(a.omega().data());
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] -= b.omega().data()[k];
  const double first = holder_norm(SampledPath(a.grid(), d, dw), alpha, stride);
  // second_{s,t} - second~_{s,t} = dA_{s,t} - (b_s - b~_s) w_{s,t}^* - b~_s (w - w~)_{s,t}^*, with b = w_{0,s}.
  std::vector<double> da = chen_prefix(a.second(), a.omega());
  const std::vector<double> pb = chen_prefix(b.second(), b.omega());
  for (std::size_t k = 0; k < da.size(); ++k) da[k] -= pb[k];
  const std::size_t n = a.grid().nodes();
  std::vector<double> w(n * 2 * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      w[i * 2 * d + c] = a.omega()(i, c);
      w[i * 2 * d + d + c] = a.omega()(i, c) - b.omega()(i, c);
    }
  auto fill = [&](std::size_t s, double* g) {
    for (std::size_t x = 0; x < d; ++x) {
      const double ba = a.omega()(s, x) - a.omega()(0, x);
      const double bb = b.omega()(s, x) - b.omega()(0, x);
      for (std::size_t y = 0; y < d; ++y) {
        g[(x * d + y) * 2 * d + y] = ba - bb;
        g[(x * d + y) * 2 * d + d + y] = bb;
      }
    }
  };
  const double second = detail::anchored_sup(a.grid(), da, d * d, w, 2 * d, fill, 2.0 * alpha, stride).value;
  return first + second;
}

BracketBoundReport bracket_bound(const RoughPath& rp, Stride stride) {
  BracketBoundReport r;
  r.bracket_norm = holder_norm(bracket(rp).as_path(), 2.0 * rp.pair().alpha, stride);
  const double n = rough_path_norm(rp, stride);
  r.bound = n * (2.0 + n);
  r.holds = r.bracket_norm <= r.bound * (1.0 + 1e-12);
  return r;
}

BracketBoundReport bracket_difference_bound(const RoughPath& a, const RoughPath& b, Stride stride) {
  BracketBoundReport r;
  const BracketPath ba = bracket(a), bb = bracket(b);
  std::vector<double> diff(ba.data());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= bb.data()[k];
  const double alpha = a.pair().alpha;
  r.bracket_norm = holder_norm(SampledPath(a.grid(), a.dim() * a.dim(), std::move(diff)), 2.0 * alpha, stride);
  r.bound = (holder_norm(a.omega(), alpha, stride) + holder_norm(b.omega(), alpha, stride) + 2.0) *
            rough_path_distance(a, b, stride);
  r.holds = r.bracket_norm <= r.bound * (1.0 + 1e-12);
  return r;
}

TrulyRoughReport truly_rough_diagnostic(const RoughPath& rp, const std::vector<std::vector<double>>& directions,
                                        std::size_t anchors, int min_level) {
  require(!directions.empty(), ErrorKind::kParameter, "at least one direction is required");
  const int level = rp.grid().level_or_throw();
  const std::size_t d = rp.dim();
  for (const auto& v : directions) require(v.size() == d, ErrorKind::kDimension, "direction has wrong dimension");
  TrulyRoughReport rep;
  rep.directions = directions.size();
  const int lo = std::clamp(min_level, 1, level);
  for (int l = lo; l <= level; ++l) rep.levels.push_back(l);
  const std::size_t n = rp.grid().steps();
  for (std::size_t a = 0; a < anchors; ++a) rep.anchors.push_back(a * (n / 2) / std::max<std::size_t>(anchors, 1));
  const double two_alpha = 2.0 * rp.pair().alpha;
  const double T = rp.grid().span();
  std::size_t growing = 0, total = 0;
  for (std::size_t s : rep.anchors)
    for (const auto& v : directions) {
      std::vector<double> ratios;
      for (int l : rep.levels) {
        const std::size_t lag = n >> l;
        double proj = 0.0;
        for (std::size_t c = 0; c < d; ++c) proj += v[c] * (rp.omega()(s + lag, c) - rp.omega()(s, c));
        const double dt = T / static_cast<double>(std::size_t{1} << l);
        ratios.push_back(std::abs(proj) / std::pow(dt, two_alpha));
      }
      rep.ratios.insert(rep.ratios.end(), ratios.begin(), ratios.end());
      const std::size_t half = ratios.size() / 2;
      if (half == 0) continue;
      const double coarse = *std::max_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(half));
      const double fine = *std::max_element(ratios.begin() + static_cast<std::ptrdiff_t>(half), ratios.end());
      ++total;
      if (fine > coarse) ++growing;
    }
  rep.growing_fraction = total == 0 ? 0.0 : static_cast<double>(growing) / static_cast<double>(total);
  rep.plausibly_truly_rough = rep.growing_fraction >= 0.9;
  return rep;
}

}  // namespace roughcalc
