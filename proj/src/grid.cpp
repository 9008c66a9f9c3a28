#include "roughcalc/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "scan.hpp"

namespace roughcalc {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDegenerateInput: return "degenerate input";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kOrdering: return "ordering error";
    case ErrorKind::kAlignment: return "alignment error";
    case ErrorKind::kDimension: return "dimension mismatch";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kCapability: return "capability error";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kNonContraction: return "non-contraction";
    case ErrorKind::kOverflow: return "overflow";
    case ErrorKind::kAdaptedness: return "adaptedness violation";
    case ErrorKind::kExtrapolation: return "extrapolation error";
    case ErrorKind::kCfl: return "CFL violation";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

Grid Grid::dyadic(double t0, double t1, int level) {
  require(level >= 0 && level <= 30, ErrorKind::kParameter, "grid level must lie in [0, 30]");
  require(std::isfinite(t0) && std::isfinite(t1) && t0 < t1, ErrorKind::kParameter, "grid needs t0 < t1");
  return Grid(t0, t1, std::size_t{1} << level, level);
}

Grid Grid::uniform(double t0, double t1, std::size_t steps) {
  require(std::isfinite(t0) && std::isfinite(t1) && t0 <= t1, ErrorKind::kParameter, "grid needs t0 <= t1");
  require((steps == 0) == (t0 == t1), ErrorKind::kParameter, "zero steps only on an empty interval");
  std::optional<int> level;
  if (steps > 0 && (steps & (steps - 1)) == 0) level = std::countr_zero(steps);
  return Grid(t0, t1, steps, level);
}

double Grid::time(std::size_t i) const {
  if (i == steps_) return t1_;
  return t0_ + (t1_ - t0_) * (static_cast<double>(i) / static_cast<double>(steps_));
}

int Grid::level_or_throw() const {
  require(level_.has_value(), ErrorKind::kUnsupported, "operation needs a dyadic grid");
  return *level_;
}

std::optional<std::size_t> Grid::node_of(double t) const {
  if (steps_ == 0) return t == t0_ ? std::optional<std::size_t>(0) : std::nullopt;
  const double x = (t - t0_) / h();
  const double r = std::round(x);
  if (r < 0 || r > static_cast<double>(steps_) || std::abs(x - r) > 1e-9) return std::nullopt;
  return static_cast<std::size_t>(r);
}

HolderPair HolderPair::make(double alpha, double beta) {
  HolderPair p{alpha, beta};
  p.validate();
  return p;
}

void HolderPair::validate() const {
  require(alpha > 1.0 / 3.0 && alpha < 0.5, ErrorKind::kParameter, "alpha must lie in (1/3, 1/2)");
  require(beta > 1.0 - 2.0 * alpha && beta <= alpha, ErrorKind::kParameter, "beta must lie in (1-2alpha, alpha]");
}

SampledPath::SampledPath(Grid grid, std::size_t dim, std::vector<double> values)
    : grid_(grid), dim_(dim), values_(std::move(values)) {
  require(values_.size() == grid_.nodes() * dim_, ErrorKind::kDimension,
          "sampled path needs nodes*dim values, got " + std::to_string(values_.size()));
  for (double v : values_) require(std::isfinite(v), ErrorKind::kInput, "sampled path entries must be finite");
}

SampledPath SampledPath::zeros(const Grid& grid, std::size_t dim) {
  return SampledPath(grid, dim, std::vector<double>(grid.nodes() * dim, 0.0));
}

Vector SampledPath::increment(std::size_t i, std::size_t k) const {
  Vector out(static_cast<Eigen::Index>(dim_));
  for (std::size_t c = 0; c < dim_; ++c) out[static_cast<Eigen::Index>(c)] = (*this)(k, c) - (*this)(i, c);
  return out;
}

Vector SampledPath::value(std::size_t i) const {
  Vector out(static_cast<Eigen::Index>(dim_));
  for (std::size_t c = 0; c < dim_; ++c) out[static_cast<Eigen::Index>(c)] = (*this)(i, c);
  return out;
}

std::vector<double> SampledPath::soa() const {
  const std::size_t n = nodes();
  std::vector<double> out(n * dim_);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim_; ++c) out[c * n + i] = values_[i * dim_ + c];
  return out;
}

SampledPath SampledPath::scaled(double factor) const {
  std::vector<double> v = values_;
  for (double& x : v) x *= factor;
  return SampledPath(grid_, dim_, std::move(v));
}

TwoParamProcess::TwoParamProcess(Grid grid, std::size_t dim, std::vector<double> per_step)
    : grid_(grid), dim_(dim), per_step_(std::move(per_step)) {
  require(per_step_.size() == grid_.steps() * dim_ * dim_, ErrorKind::kDimension,
          "two-parameter process needs steps*m*m entries");
  for (double v : per_step_) require(std::isfinite(v), ErrorKind::kInput, "per-step entries must be finite");
}

TwoParamProcess TwoParamProcess::zeros(const Grid& grid, std::size_t dim) {
  return TwoParamProcess(grid, dim, std::vector<double>(grid.steps() * dim * dim, 0.0));
}

Matrix TwoParamProcess::step_matrix(std::size_t i) const {
  const auto m = static_cast<Eigen::Index>(dim_);
  Matrix out(m, m);
  auto s = step(i);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) out(a, b) = s[static_cast<std::size_t>(a * m + b)];
  return out;
}

namespace {

void check_companion(const TwoParamProcess& p, const SampledPath& companion) {
  require(p.grid() == companion.grid(), ErrorKind::kAlignment, "process and companion path live on different grids");
  require(p.dim() == companion.dim(), ErrorKind::kDimension, "process and companion dimensions differ");
}

}  // namespace

Matrix chen_extend(const TwoParamProcess& p, const SampledPath& companion, std::size_t i, std::size_t k) {
  check_companion(p, companion);
  require(i < k, ErrorKind::kOrdering, "chen_extend needs i < k");
  require(k < companion.nodes(), ErrorKind::kParameter, "node index out of range");
  const std::size_t m = p.dim();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t j = i; j < k; ++j) {
    auto st = p.step(j);
    for (std::size_t a = 0; a < m; ++a) {
      const double left = companion(j, a) - companion(i, a);
      for (std::size_t b = 0; b < m; ++b) {
        const double inc = companion(j + 1, b) - companion(j, b);
        out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += st[a * m + b] + left * inc;
      }
    }
  }
  return out;
}

std::vector<double> chen_prefix(const TwoParamProcess& p, const SampledPath& companion) {
  check_companion(p, companion);
  const std::size_t m = p.dim();
  const std::size_t n = companion.nodes();
  std::vector<double> out(n * m * m, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    auto st = p.step(j);
    const double* prev = out.data() + j * m * m;
    double* next = out.data() + (j + 1) * m * m;
    for (std::size_t a = 0; a < m; ++a) {
      const double left = companion(j, a) - companion(0, a);
      for (std::size_t b = 0; b < m; ++b) {
        const double inc = companion(j + 1, b) - companion(j, b);
        next[a * m + b] = prev[a * m + b] + st[a * m + b] + left * inc;
      }
    }
  }
  return out;
}

SampledPath refine(const SampledPath& path, int target_level) {
  const int level = path.grid().level_or_throw();
  require(target_level >= 0, ErrorKind::kParameter, "target level must be >= 0");
  require(target_level <= level, ErrorKind::kUnsupported,
          "upward refinement of sampled data needs a generator");
  const std::size_t r = std::size_t{1} << (level - target_level);
  const Grid coarse = Grid::dyadic(path.grid().t0(), path.grid().t1(), target_level);
  std::vector<double> v;
  v.reserve(coarse.nodes() * path.dim());
  for (std::size_t i = 0; i < coarse.nodes(); ++i) {
    auto x = path.at(i * r);
    v.insert(v.end(), x.begin(), x.end());
  }
  return SampledPath(coarse, path.dim(), std::move(v));
}

TwoParamProcess refine(const TwoParamProcess& p, const SampledPath& companion, int target_level) {
  check_companion(p, companion);
  const int level = p.grid().level_or_throw();
  require(target_level >= 0, ErrorKind::kParameter, "target level must be >= 0");
  require(target_level <= level, ErrorKind::kUnsupported,
          "upward refinement of sampled data needs a generator");
  const std::size_t r = std::size_t{1} << (level - target_level);
  const Grid coarse = Grid::dyadic(p.grid().t0(), p.grid().t1(), target_level);
  const std::size_t m = p.dim();
  std::vector<double> v(coarse.steps() * m * m);
  for (std::size_t i = 0; i < coarse.steps(); ++i) {
    if (r == 1) {
      auto st = p.step(i);
      std::copy(st.begin(), st.end(), v.begin() + static_cast<std::ptrdiff_t>(i * m * m));
      continue;
    }
    const Matrix a = chen_extend(p, companion, i * r, (i + 1) * r);
    for (std::size_t x = 0; x < m; ++x)
      for (std::size_t y = 0; y < m; ++y)
        v[i * m * m + x * m + y] = a(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
  }
  return TwoParamProcess(coarse, m, std::move(v));
}

std::size_t default_stride(const Grid& grid) {
  const std::size_t s = grid.steps();
  if (s <= 1024) return 1;
  return (s + 1023) / 1024;
}

std::size_t resolve_stride(const Grid& grid, Stride stride) {
  if (!stride) return default_stride(grid);
  require(*stride >= 1, ErrorKind::kParameter, "stride must be >= 1");
  return *stride;
}

NormResult holder_norm_located(const SampledPath& path, double exponent, Stride stride) {
  return detail::anchored_sup(path.grid(), path.data(), path.dim(), {}, 0, {}, exponent, stride);
}

double holder_norm(const SampledPath& path, double exponent, Stride stride) {
  return holder_norm_located(path, exponent, stride).value;
}

NormResult two_param_holder_norm(const TwoParamProcess& p, const SampledPath& companion, double exponent,
                                 Stride stride) {
  check_companion(p, companion);
  const std::size_t m = p.dim();
  // second_{s,t} = A_t - A_s - w_{0,s} (w_t - w_s)^*, linear in (A_t, w_t) for fixed s.
  const std::vector<double> prefix = chen_prefix(p, companion);
  auto fill = [&](std::size_t s, double* g) {
    for (std::size_t x = 0; x < m; ++x) {
      const double base = companion(s, x) - companion(0, x);
      for (std::size_t y = 0; y < m; ++y) g[(x * m + y) * m + y] = base;
    }
  };
  return detail::anchored_sup(p.grid(), prefix, m * m, companion.data(), m, fill, exponent, stride);
}

double sup_norm(const SampledPath& path) {
  double best = 0.0;
  for (std::size_t i = 0; i < path.nodes(); ++i) {
    double acc = 0.0;
    for (double v : path.at(i)) acc += v * v;
    best = std::max(best, std::sqrt(acc));
  }
  return best;
}

}  // namespace roughcalc
