#include "roughcalc/rpde.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "roughcalc/parallel.hpp"

namespace roughcalc {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kMaxDim = 8;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Stencil start and 4-point Lagrange weights for x on the lattice.
std::size_t stencil(const Lattice& L, double x, double w[4]) {
  if (!L.contains(x))
    throw Error(ErrorKind::kExtrapolation,
                "point " + fmt(x) + " outside the tabulated box [" + fmt(L.lo) + ", " + fmt(L.hi()) + "]");
  const double s = (x - L.lo) / L.step;
  long i = static_cast<long>(std::floor(s));
  i = std::clamp<long>(i, 1, static_cast<long>(L.n) - 3);
  const double u = s - static_cast<double>(i);
  w[0] = -u * (u - 1) * (u - 2) / 6;
  w[1] = (u + 1) * (u - 1) * (u - 2) / 2;
  w[2] = -(u + 1) * u * (u - 2) / 2;
  w[3] = (u + 1) * u * (u - 1) / 6;
  return static_cast<std::size_t>(i - 1);
}

// Evaluates a path-free bundle at y into `out` (pre-zeroed), no allocation.
void eval_into(const CoefficientBundle& b, const CoefficientBundle::Eval& fn, std::span<const double> y,
               std::span<double> out, const char* what) {
  std::fill(out.begin(), out.end(), 0.0);
  if (fn) {
    fn(TimePoint{}, y, out);
  } else if (what) {
    throw Error(ErrorKind::kCapability, "bundle '" + b.name + "' does not supply " + what);
  }
}

// sigma_k(x) and d_x sigma_k(x).
struct SigmaAt {
  std::array<double, kMaxDim> v{}, dx{};
};
SigmaAt sigma_at(const CoefficientBundle& s, double x) {
  SigmaAt r;
  const double y[1] = {x};
  eval_into(s, s.value, y, {r.v.data(), s.cols}, "a value");
  eval_into(s, s.dy, y, {r.dx.data(), s.cols}, "d_y");
  return r;
}

// g_k(x, y), d_x g_k, d_y g_k.
struct GAt {
  std::array<double, kMaxDim> v{}, dx{}, dy{};
};
GAt g_at(const CoefficientBundle& g, double x, double yv) {
  GAt r;
  const double y[2] = {x, yv};
  std::array<double, 2 * kMaxDim> d{};
  eval_into(g, g.value, y, {r.v.data(), g.cols}, "a value");
  eval_into(g, g.dy, y, {d.data(), 2 * g.cols}, "d_y");
  for (std::size_t k = 0; k < g.cols; ++k) {
    r.dx[k] = d[2 * k];
    r.dy[k] = d[2 * k + 1];
  }
  return r;
}

void check_sigma(const BundlePtr& sigma, std::size_t d) {
  require(sigma != nullptr, ErrorKind::kParameter, "sigma is required");
  require(sigma->in_dim == 1 && sigma->rows == 1 && sigma->cols == d && sigma->driver_dim == d,
          ErrorKind::kDimension, "sigma must map x to 1 x d");
  require(sigma->path_free, ErrorKind::kCapability, "sigma must be a function of x alone");
  require(d <= kMaxDim, ErrorKind::kUnsupported, "driver dimension above 8");
}

void check_g(const BundlePtr& g, std::size_t d) {
  if (!g) return;
  require(g->in_dim == 2 && g->rows == 1 && g->cols == d && g->driver_dim == d, ErrorKind::kDimension,
          "g must map (x, y) to 1 x d");
  require(g->path_free, ErrorKind::kCapability, "g must be a function of (x, y) alone");
}

// The (theta, eta) system: theta' = s_sigma sigma(theta), eta' = s_g g(theta, eta).
BundlePtr pair_system(const BundlePtr& sigma, const BundlePtr& g, double s_sigma, double s_g) {
  const std::size_t d = sigma->cols;
  CoefficientBundle b;
  b.name = "pair(" + sigma->name + ", " + g->name + ")";
  b.in_dim = 2;
  b.rows = 2;
  b.cols = d;
  b.driver_dim = d;
  b.regularity = std::min(sigma->regularity, g->regularity);
  b.path_free = true;
  b.value = [sigma, g, s_sigma, s_g, d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    const SigmaAt s = sigma_at(*sigma, y[0]);
    const GAt q = g_at(*g, y[0], y[1]);
    for (std::size_t k = 0; k < d; ++k) {
      out[k] = s_sigma * s.v[k];
      out[d + k] = s_g * q.v[k];
    }
  };
  b.dy = [sigma, g, s_sigma, s_g, d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    const SigmaAt s = sigma_at(*sigma, y[0]);
    const GAt q = g_at(*g, y[0], y[1]);
    for (std::size_t k = 0; k < d; ++k) {
      out[k * 2] = s_sigma * s.dx[k];
      out[k * 2 + 1] = 0.0;
      out[(d + k) * 2] = s_g * q.dx[k];
      out[(d + k) * 2 + 1] = s_g * q.dy[k];
    }
  };
  return std::make_shared<const CoefficientBundle>(std::move(b));
}

// Node values at `keep` (every node when empty) for many starts, falling back to one solve per
// start so one failure does not poison the rest. Failed rows are NaN.
std::vector<std::vector<double>> robust_flow(const RdeProblem& p, const std::vector<std::vector<double>>& starts,
                                             std::vector<std::size_t> keep, std::size_t& failures) {
  if (keep.empty())
    for (std::size_t k = p.first(); k <= p.last(); ++k) keep.push_back(k);
  try {
    return solve_rde_flow_at(p, starts, keep);
  } catch (const Error&) {
  }
  std::vector<std::vector<double>> out;
  out.reserve(starts.size());
  for (const auto& y0 : starts) {
    try {
      out.push_back(std::move(solve_rde_flow_at(p, {y0}, keep).front()));
    } catch (const Error&) {
      ++failures;
      out.emplace_back(keep.size() * p.state_dim(), kNan);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

Lattice Lattice::span(double a, double b, std::size_t cells) {
  require(cells >= 1 && b > a, ErrorKind::kParameter, "lattice needs b > a and at least one cell");
  return {a, (b - a) / static_cast<double>(cells), cells + 1};
}

Lattice Lattice::padded(double a, double b, double step, std::size_t pad) {
  require(step > 0 && b >= a, ErrorKind::kParameter, "lattice needs step > 0 and b >= a");
  const auto cells = static_cast<std::size_t>(std::ceil((b - a) / step - 1e-9));
  return {a - static_cast<double>(pad) * step, step, cells + 1 + 2 * pad};
}

bool Lattice::contains(double x) const {
  return n > 0 && x >= lo - 1e-9 * step && x <= hi() + 1e-9 * step;
}

std::vector<double> Lattice::points() const {
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = at(i);
  return p;
}

double interpolate(const Lattice& x, std::span<const double> values, double at) {
  require(values.size() == x.n && x.n >= 4, ErrorKind::kDimension, "interpolation needs 4 lattice values");
  double w[4];
  const std::size_t i0 = stencil(x, at, w);
  return w[0] * values[i0] + w[1] * values[i0 + 1] + w[2] * values[i0 + 2] + w[3] * values[i0 + 3];
}

std::vector<double> differentiate(const Lattice& x, std::span<const double> f, int order) {
  const std::size_t n = x.n;
  require(f.size() == n && n >= 5, ErrorKind::kDimension, "differences need 5 lattice values");
  require(order == 1 || order == 2, ErrorKind::kParameter, "difference order must be 1 or 2");
  std::vector<double> out(n);
  const double h = x.step;
  if (order == 1) {
    const double c = 1.0 / (12 * h);
    for (std::size_t i = 2; i + 2 < n; ++i) out[i] = (-f[i + 2] + 8 * f[i + 1] - 8 * f[i - 1] + f[i - 2]) * c;
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) * c;
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) * c;
    out[n - 1] = (25 * f[n - 1] - 48 * f[n - 2] + 36 * f[n - 3] - 16 * f[n - 4] + 3 * f[n - 5]) * c;
    out[n - 2] = (3 * f[n - 1] + 10 * f[n - 2] - 18 * f[n - 3] + 6 * f[n - 4] - f[n - 5]) * c;
  } else {
    const double c = 1.0 / (12 * h * h);
    for (std::size_t i = 2; i + 2 < n; ++i)
      out[i] = (-f[i + 2] + 16 * f[i + 1] - 30 * f[i] + 16 * f[i - 1] - f[i - 2]) * c;
    out[0] = (35 * f[0] - 104 * f[1] + 114 * f[2] - 56 * f[3] + 11 * f[4]) * c;
    out[1] = (11 * f[0] - 20 * f[1] + 6 * f[2] + 4 * f[3] - f[4]) * c;
    out[n - 1] = (35 * f[n - 1] - 104 * f[n - 2] + 114 * f[n - 3] - 56 * f[n - 4] + 11 * f[n - 5]) * c;
    out[n - 2] = (11 * f[n - 1] - 20 * f[n - 2] + 6 * f[n - 3] + 4 * f[n - 4] - f[n - 5]) * c;
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

RdeProblem variational_system(const ParameterizedRde& p, double x) {
  require(p.driver && p.g && p.initial, ErrorKind::kParameter, "parameterized RDE needs driver, g and u0");
  const std::size_t n = p.n, in = 1 + n, N = 1 + 2 * n, d = p.driver->dim();
  require(p.g->in_dim == in && p.g->rows == n && p.g->cols == d, ErrorKind::kDimension,
          "g must map (x, u) to n x d");
  require(p.g->path_free || p.g->has_path_dy(), ErrorKind::kCapability,
          "g needs d_y d_w for the variational equation");
  const BundlePtr g = p.g;

  CoefficientBundle b;
  b.name = "variational(" + g->name + ")";
  b.in_dim = N;
  b.rows = N;
  b.cols = d;
  b.driver_dim = d;
  b.regularity = g->regularity;
  b.path_free = g->path_free;
  b.uses_path = g->uses_path;
  b.value = [g, n, in, d](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto gv = g->eval_value(tp, y.subspan(0, in));
    const auto gd = g->eval_dy(tp, y.subspan(0, in));
    for (std::size_t v = 0; v < n * d; ++v) {
      out[d + v] = gv[v];
      double acc = gd[v * in];
      for (std::size_t j = 0; j < n; ++j) acc += gd[v * in + 1 + j] * y[in + j];
      out[d + n * d + v] = acc;
    }
  };
  b.dy = [g, n, in, N, d](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto gd = g->eval_dy(tp, y.subspan(0, in));
    const auto gdd = g->eval_dyy(tp, y.subspan(0, in));
    for (std::size_t v = 0; v < n * d; ++v) {
      double* row_u = out.data() + (d + v) * N;
      double* row_v = out.data() + (d + n * d + v) * N;
      for (std::size_t q = 0; q < in; ++q) {
        row_u[q] = gd[v * in + q];
        double acc = gdd[(v * in + q) * in];
        for (std::size_t j = 0; j < n; ++j) acc += gdd[(v * in + q) * in + 1 + j] * y[in + j];
        row_v[q] = acc;
      }
      for (std::size_t j = 0; j < n; ++j) row_v[in + j] = gd[v * in + 1 + j];
    }
  };
  if (!g->path_free) {
    b.path = [g, n, in, d](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      const auto gp = g->eval_path(tp, y.subspan(0, in));
      const auto gpd = g->eval_path_dy(tp, y.subspan(0, in));
      for (std::size_t v = 0; v < n * d; ++v)
        for (std::size_t l = 0; l < d; ++l) {
          out[(d + v) * d + l] = gp[v * d + l];
          double acc = gpd[(v * d + l) * in];
          for (std::size_t j = 0; j < n; ++j) acc += gpd[(v * d + l) * in + 1 + j] * y[in + j];
          out[(d + n * d + v) * d + l] = acc;
        }
    };
  }

  RdeProblem q;
  q.driver = p.driver;
  q.g = std::make_shared<const CoefficientBundle>(std::move(b));
  if (p.f) {
    const BundlePtr f = p.f;
    const std::size_t dd = d * d;
    require(f->in_dim == in && f->rows == n && f->cols == dd, ErrorKind::kDimension, "f must map (x, u) to n x d*d");
    CoefficientBundle c;
    c.name = "variational(" + f->name + ")";
    c.in_dim = N;
    c.rows = N;
    c.cols = dd;
    c.driver_dim = d;
    c.regularity = f->regularity;
    c.path_free = f->path_free;
    c.uses_path = f->uses_path;
    c.value = [f, n, in, dd](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      const auto fv = f->eval_value(tp, y.subspan(0, in));
      const auto fd = f->eval_dy(tp, y.subspan(0, in));
      for (std::size_t v = 0; v < n * dd; ++v) {
        out[dd + v] = fv[v];
        double acc = fd[v * in];
        for (std::size_t j = 0; j < n; ++j) acc += fd[v * in + 1 + j] * y[in + j];
        out[dd + n * dd + v] = acc;
      }
    };
    q.f = std::make_shared<const CoefficientBundle>(std::move(c));
  }
  q.y0.assign(N, 0.0);
  q.y0[0] = x;
  p.initial(x, {q.y0.data() + 1, n}, {q.y0.data() + 1 + n, n});
  return q;
}

ParameterizedSolution solve_parameterized_rde(const ParameterizedRde& p, const std::vector<double>& x_grid,
                                              double fd_step) {
  require(fd_step >= 0, ErrorKind::kParameter, "finite-difference step must be >= 0");
  const std::size_t n = p.n, N = 1 + 2 * n;
  ParameterizedSolution out;
  out.anchors.resize(x_grid.size());
  parallel_for(x_grid.size(), [&](std::size_t a) {
    AnchorSolution& s = out.anchors[a];
    s.x = x_grid[a];
    try {
      const auto vals = solve_rde_values(variational_system(p, s.x));
      const std::size_t nodes = vals.size() / N;
      s.u.resize(nodes * n);
      s.v.resize(nodes * n);
      for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t c = 0; c < n; ++c) {
          s.u[i * n + c] = vals[i * N + 1 + c];
          s.v[i * n + c] = vals[i * N + 1 + n + c];
        }
      if (fd_step > 0) {
        const auto up = solve_rde_values(variational_system(p, s.x + fd_step));
        const auto dn = solve_rde_values(variational_system(p, s.x - fd_step));
        for (std::size_t i = 0; i < nodes; ++i)
          for (std::size_t c = 0; c < n; ++c) {
            const double fd = (up[i * N + 1 + c] - dn[i * N + 1 + c]) / (2 * fd_step);
            s.fd_gap = std::max(s.fd_gap, std::abs(fd - s.v[i * n + c]));
          }
      }
      s.ok = true;
    } catch (const Error& e) {
      s.ok = false;
      s.error = e.what();
    }
  });
  for (const auto& s : out.anchors) {
    if (!s.ok) ++out.failures;
    else out.max_fd_gap = std::max(out.max_fd_gap, s.fd_gap);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

BundlePtr xy_bundle(std::string name, std::size_t d, std::function<XyPartials(double x, double y, std::size_t k)> fn) {
  CoefficientBundle b;
  b.name = std::move(name);
  b.in_dim = 2;
  b.rows = 1;
  b.cols = d;
  b.driver_dim = d;
  b.regularity = Regularity::kC33;
  b.path_free = true;
  b.value = [fn, d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    for (std::size_t k = 0; k < d; ++k) out[k] = fn(y[0], y[1], k).v;
  };
  b.dy = [fn, d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    for (std::size_t k = 0; k < d; ++k) {
      const XyPartials q = fn(y[0], y[1], k);
      out[2 * k] = q.x;
      out[2 * k + 1] = q.y;
    }
  };
  b.dyy = [fn, d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    for (std::size_t k = 0; k < d; ++k) {
      const XyPartials q = fn(y[0], y[1], k);
      out[4 * k] = q.xx;
      out[4 * k + 1] = q.xy;
      out[4 * k + 2] = q.xy;
      out[4 * k + 3] = q.yy;
    }
  };
  return register_bundle(std::move(b));
}

namespace {

std::vector<double> spec_numbers(const std::string& spec, std::string& head) {
  const auto colon = spec.find(':');
  head = spec.substr(0, colon);
  std::vector<double> out;
  if (colon == std::string::npos) return out;
  std::stringstream ss(spec.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(used == item.size(), ErrorKind::kInput, "bad number '" + item + "' in '" + spec + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kInput, "bad number '" + item + "' in '" + spec + "'");
    }
  }
  return out;
}

void want_args(const std::vector<double>& a, std::size_t n, const std::string& spec) {
  require(a.size() == n, ErrorKind::kInput, "'" + spec + "' expects " + std::to_string(n) + " numbers");
}

}  // namespace

BundlePtr make_xy_bundle(const std::string& spec, std::size_t d) {
  std::string head;
  const auto a = spec_numbers(spec, head);
  if (head == "zero") return nullptr;
  if (head == "affine") {
    want_args(a, 3, spec);
    return xy_bundle(spec, d, [a](double x, double y, std::size_t) {
      return XyPartials{a[0] * x + a[1] * y + a[2], a[0], a[1], 0, 0, 0};
    });
  }
  if (head == "linear") {
    want_args(a, 1, spec);
    return xy_bundle(spec, d, [a](double, double y, std::size_t) { return XyPartials{a[0] * y, 0, a[0], 0, 0, 0}; });
  }
  if (head == "xlinear") {
    want_args(a, 2, spec);
    return xy_bundle(spec, d, [a](double x, double y, std::size_t) {
      const double c = a[0] + a[1] * std::sin(x), cx = a[1] * std::cos(x), cxx = -a[1] * std::sin(x);
      return XyPartials{c * y, cx * y, c, cxx * y, cx, 0};
    });
  }
  if (head == "sin") {
    want_args(a, 1, spec);
    return xy_bundle(spec, d, [a](double x, double y, std::size_t) {
      const double s = a[0] * std::sin(x + y), c = a[0] * std::cos(x + y);
      return XyPartials{s, c, c, -s, -s, -s};
    });
  }
  throw Error(ErrorKind::kInput, "unknown g family '" + spec + "'");
}

// ---------------------------------------------------------------------------------------------

double CharacteristicFlow::theta_at(std::size_t node, double x0) const {
  require(node < driver->grid().nodes(), ErrorKind::kParameter, "node outside the driver grid");
  return interpolate(x, {theta.data() + node * x.n, x.n}, x0);
}

struct TransformMaps::Data {
  std::shared_ptr<const CharacteristicFlow> flow;
  std::vector<std::size_t> nodes, anchors;
  std::vector<double> times;
  Lattice x, y;
  bool has_g = false;
  std::array<std::vector<double>, 3> phi;  // value, d_x, d_xx; [k][i]
  std::array<std::vector<double>, 6> zeta, psi;  // by MapPart; [k][i][j]
  double roundtrip = 0.0, pair = 0.0, time_interp = 0.0;

  // Index k and weight w of time t between nodes k and k+1.
  std::size_t locate(double t, double& w) const {
    const double eps = 1e-12 * std::max(1.0, std::abs(times.back()));
    if (!(t >= times.front() - eps && t <= times.back() + eps))
      throw Error(ErrorKind::kExtrapolation, "time " + fmt(t) + " outside the tabulated range");
    if (times.size() == 1) {
      w = 0.0;
      return 0;
    }
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t k = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
    k = std::min(k, times.size() - 2);
    w = std::clamp((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0);
    return k;
  }

  double phi1(std::size_t k, std::size_t part, double xv) const {
    return interpolate(x, {phi[part].data() + k * x.n, x.n}, xv);
  }

  double table2(const std::vector<double>& t, std::size_t k, double xv, double yv) const {
    double wx[4], wy[4];
    const std::size_t i0 = stencil(x, xv, wx), j0 = stencil(y, yv, wy);
    const double* base = t.data() + k * x.n * y.n;
    double acc = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
      double r = 0.0;
      for (std::size_t b = 0; b < 4; ++b) r += wy[b] * base[(i0 + a) * y.n + j0 + b];
      acc += wx[a] * r;
    }
    return acc;
  }
};

const std::vector<std::size_t>& TransformMaps::nodes() const { return data_->nodes; }
const std::vector<std::size_t>& TransformMaps::anchors() const { return data_->anchors; }
const Lattice& TransformMaps::x() const { return data_->x; }
const Lattice& TransformMaps::y() const { return data_->y; }
bool TransformMaps::has_g() const { return data_->has_g; }
const CharacteristicFlow& TransformMaps::flow() const { return *data_->flow; }
const RoughPath& TransformMaps::driver() const { return *data_->flow->driver; }
double TransformMaps::roundtrip_gap() const { return data_->roundtrip; }
double TransformMaps::pair_gap() const { return data_->pair; }
double TransformMaps::time_interp_gap() const { return data_->time_interp; }

double TransformMaps::phi(double t, double xv, MapPart part) const {
  std::size_t p = 0;
  switch (part) {
    case MapPart::kValue: p = 0; break;
    case MapPart::kX: p = 1; break;
    case MapPart::kXX: p = 2; break;
    default: throw Error(ErrorKind::kParameter, "phi has no y derivatives");
  }
  double w = 0.0;
  const std::size_t k = data_->locate(t, w);
  const double a = data_->phi1(k, p, xv);
  return w == 0.0 ? a : (1 - w) * a + w * data_->phi1(k + 1, p, xv);
}

namespace {

double identity_in_y(double y, MapPart part) {
  switch (part) {
    case MapPart::kValue: return y;
    case MapPart::kY: return 1.0;
    default: return 0.0;
  }
}

}  // namespace

double TransformMaps::zeta(double t, double xv, double yv, MapPart part) const {
  if (!data_->has_g) return identity_in_y(yv, part);
  double w = 0.0;
  const std::size_t k = data_->locate(t, w);
  const auto& tab = data_->zeta[static_cast<std::size_t>(part)];
  const double a = data_->table2(tab, k, xv, yv);
  return w == 0.0 ? a : (1 - w) * a + w * data_->table2(tab, k + 1, xv, yv);
}

double TransformMaps::psi(double t, double xv, double yv, MapPart part) const {
  if (!data_->has_g) return identity_in_y(yv, part);
  double w = 0.0;
  const std::size_t k = data_->locate(t, w);
  const auto& tab = data_->psi[static_cast<std::size_t>(part)];
  const double a = data_->table2(tab, k, xv, yv);
  return w == 0.0 ? a : (1 - w) * a + w * data_->table2(tab, k + 1, xv, yv);
}

double TransformMaps::phi_at(std::size_t k, std::size_t i) const { return data_->phi[0][k * data_->x.n + i]; }
double TransformMaps::zeta_at(std::size_t k, std::size_t i, std::size_t j) const {
  if (!data_->has_g) return data_->y.at(j);
  return data_->zeta[0][(k * data_->x.n + i) * data_->y.n + j];
}
double TransformMaps::psi_at(std::size_t k, std::size_t i, std::size_t j) const {
  if (!data_->has_g) return data_->y.at(j);
  return data_->psi[0][(k * data_->x.n + i) * data_->y.n + j];
}

namespace {

// Value and difference tables of a [k][i][j] table along x and y.
void derive_2d(const Lattice& x, const Lattice& y, std::size_t K, std::array<std::vector<double>, 6>& t) {
  const std::size_t nx = x.n, ny = y.n, sz = K * nx * ny;
  for (std::size_t p = 1; p < 6; ++p) t[p].assign(sz, 0.0);
  std::vector<double> line(std::max(nx, ny));
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t base = k * nx * ny;
    // along x
    for (std::size_t j = 0; j < ny; ++j) {
      std::vector<double> col(nx);
      for (std::size_t i = 0; i < nx; ++i) col[i] = t[0][base + i * ny + j];
      const auto d1 = differentiate(x, col, 1), d2 = differentiate(x, col, 2);
      for (std::size_t i = 0; i < nx; ++i) {
        t[static_cast<std::size_t>(MapPart::kX)][base + i * ny + j] = d1[i];
        t[static_cast<std::size_t>(MapPart::kXX)][base + i * ny + j] = d2[i];
      }
    }
    // along y, and the mixed derivative from the x table
    for (std::size_t i = 0; i < nx; ++i) {
      const std::span<const double> row(t[0].data() + base + i * ny, ny);
      const auto d1 = differentiate(y, row, 1), d2 = differentiate(y, row, 2);
      const std::span<const double> xrow(t[static_cast<std::size_t>(MapPart::kX)].data() + base + i * ny, ny);
      const auto dxy = differentiate(y, xrow, 1);
      for (std::size_t j = 0; j < ny; ++j) {
        t[static_cast<std::size_t>(MapPart::kY)][base + i * ny + j] = d1[j];
        t[static_cast<std::size_t>(MapPart::kYY)][base + i * ny + j] = d2[j];
        t[static_cast<std::size_t>(MapPart::kXY)][base + i * ny + j] = dxy[j];
      }
    }
  }
}

std::vector<std::size_t> sub_lattice(std::size_t steps, std::size_t count) {
  require(count >= 2, ErrorKind::kParameter, "t0 sub-lattice needs at least 2 nodes");
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < count; ++k)
    out.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(k) * static_cast<double>(steps) /
                                                        static_cast<double>(count - 1))));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

Characteristics build_characteristics(const BundlePtr& sigma, const BundlePtr& g, const RoughPathPtr& driver,
                                      const CharacteristicOptions& opt) {
  require(driver != nullptr, ErrorKind::kParameter, "driver is required");
  const std::size_t d = driver->dim();
  check_sigma(sigma, d);
  check_g(g, d);
  require(opt.x.n >= 5, ErrorKind::kParameter, "x lattice needs at least 5 points");
  if (g) require(opt.y.n >= 5, ErrorKind::kParameter, "y lattice needs at least 5 points");
  const Grid& grid = driver->grid();
  const std::size_t N = grid.steps(), nodes_n = grid.nodes(), nx = opt.x.n;

  // Forward flow and its x-derivative: (x, theta, v) per anchor.
  auto flow = std::make_shared<CharacteristicFlow>();
  flow->driver = driver;
  flow->x = opt.x;
  flow->theta.assign(nodes_n * nx, kNan);
  flow->dtheta.assign(nodes_n * nx, kNan);
  {
    ParameterizedRde pr;
    pr.driver = driver;
    pr.n = 1;
    pr.g = xy_bundle("-" + sigma->name, d, [sigma](double, double y, std::size_t k) {
      const double yy[1] = {y};
      std::array<double, kMaxDim> v{}, dv{}, ddv{};
      const std::size_t c = sigma->cols;
      eval_into(*sigma, sigma->value, yy, {v.data(), c}, "a value");
      eval_into(*sigma, sigma->dy, yy, {dv.data(), c}, "d_y");
      eval_into(*sigma, sigma->dyy, yy, {ddv.data(), c}, "d_yy");
      return XyPartials{-v[k], 0, -dv[k], 0, 0, -ddv[k]};
    });
    pr.initial = [](double x, std::span<double> u0, std::span<double> du0) {
      u0[0] = x;
      du0[0] = 1.0;
    };
    const RdeProblem proto = variational_system(pr, opt.x.at(0));
    std::vector<std::vector<double>> starts(nx);
    for (std::size_t i = 0; i < nx; ++i) starts[i] = {opt.x.at(i), opt.x.at(i), 1.0};
    std::size_t failures = 0;
    const auto rows = robust_flow(proto, starts, {}, failures);
    flow->failures += failures;
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t t = 0; t < nodes_n; ++t) {
        flow->theta[t * nx + i] = rows[i][t * 3 + 1];
        flow->dtheta[t * nx + i] = rows[i][t * 3 + 2];
      }
  }

  auto data = std::make_shared<TransformMaps::Data>();
  data->flow = flow;
  data->x = opt.x;
  data->y = g ? opt.y : Lattice{};
  data->has_g = static_cast<bool>(g);
  data->anchors = sub_lattice(N, std::min(opt.t0_count, N + 1));
  data->nodes = data->anchors;
  if (opt.paired)
    for (std::size_t a : data->anchors)
      if (a < N) data->nodes.push_back(a + 1);
  std::sort(data->nodes.begin(), data->nodes.end());
  data->nodes.erase(std::unique(data->nodes.begin(), data->nodes.end()), data->nodes.end());
  for (std::size_t a : data->nodes) data->times.push_back(grid.time(a));

  const std::size_t K = data->nodes.size(), ny = g ? opt.y.n : 0;
  data->phi[0].assign(K * nx, kNan);
  if (g) {
    data->zeta[0].assign(K * nx * ny, kNan);
    data->psi[0].assign(K * nx * ny, kNan);
  }
  const BundlePtr back_sys = g ? pair_system(sigma, g, 1.0, -1.0) : nullptr;
  const BundlePtr fwd_sys = g ? pair_system(sigma, g, -1.0, 1.0) : nullptr;
  std::vector<std::size_t> fails(K, 0);

  // phi at a node, from backward flows on the backward lift.
  auto backward_phi = [&](std::size_t node, std::size_t& failures) {
    std::vector<double> row(nx);
    if (node == 0) {
      for (std::size_t i = 0; i < nx; ++i) row[i] = opt.x.at(i);
      return row;
    }
    RdeProblem bp;
    bp.driver = std::make_shared<const RoughPath>(backward_lift(*driver, node));
    bp.g = sigma;
    bp.y0 = {0.0};
    std::vector<std::vector<double>> starts(nx);
    for (std::size_t i = 0; i < nx; ++i) starts[i] = {opt.x.at(i)};
    const auto out = robust_flow(bp, starts, {bp.last()}, failures);
    for (std::size_t i = 0; i < nx; ++i) row[i] = out[i][0];
    return row;
  };

  parallel_for(K, [&](std::size_t k) {
    const auto row = backward_phi(data->nodes[k], fails[k]);
    std::copy(row.begin(), row.end(), data->phi[0].begin() + k * nx);
  });
  for (std::size_t f : fails) flow->failures += f;

  if (g) {
    // One forward (theta, eta) flow from a (xi, y0) lattice, kept at the tabulated nodes:
    // zeta reads it at xi = phi(t, x), psi inverts y0 -> eta_t at xi = x.
    double lo = opt.x.lo, hi = opt.x.hi();
    for (double v : data->phi[0])
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    const double hx = opt.x.step;
    const auto below = static_cast<std::size_t>(std::ceil((opt.x.lo - lo) / hx - 1e-9)) + 2;
    const auto above = static_cast<std::size_t>(std::ceil((hi - opt.x.hi()) / hx - 1e-9)) + 2;
    const Lattice xi{opt.x.lo - static_cast<double>(below) * hx, hx, nx + below + above};
    const std::size_t ext = (ny - 1 + 3) / 4;
    const Lattice y0{opt.y.lo - static_cast<double>(ext) * opt.y.step, opt.y.step, ny + 2 * ext};
    RdeProblem fp;
    fp.driver = driver;
    fp.g = fwd_sys;
    fp.y0 = {0.0, 0.0};
    std::vector<double> H(K * xi.n * y0.n, kNan);  // [k][a][b]
    std::vector<std::size_t> pfails(xi.n, 0);
    parallel_for(xi.n, [&](std::size_t a) {
      std::vector<std::vector<double>> starts(y0.n);
      for (std::size_t b = 0; b < y0.n; ++b) starts[b] = {xi.at(a), y0.at(b)};
      const auto rows = robust_flow(fp, starts, data->nodes, pfails[a]);
      for (std::size_t b = 0; b < y0.n; ++b)
        for (std::size_t k = 0; k < K; ++k) H[(k * xi.n + a) * y0.n + b] = rows[b][2 * k + 1];
    });
    for (std::size_t f : pfails) flow->failures += f;

    std::vector<double> col(xi.n);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t a = 0; a < xi.n; ++a) col[a] = H[(k * xi.n + a) * y0.n + ext + j];
        for (std::size_t i = 0; i < nx; ++i) {
          const double ph = data->phi[0][k * nx + i];
          if (std::isfinite(ph) && xi.contains(ph)) data->zeta[0][(k * nx + i) * ny + j] = interpolate(xi, col, ph);
        }
      }
      for (std::size_t i = 0; i < nx; ++i) {
        const std::span<const double> c(H.data() + (k * xi.n + below + i) * y0.n, y0.n);
        std::size_t b = 0;
        for (std::size_t j = 0; j < ny; ++j) {
          const double target = opt.y.at(j);
          // the column is increasing; find the bracketing cell, then bisect the interpolant
          while (b + 2 < y0.n && c[b + 1] < target) ++b;
          if (!(c[b] <= target && target <= c[b + 1])) continue;
          double l = y0.at(b), r = y0.at(b + 1);
          for (int it = 0; it < 60 && r - l > 1e-15 * (1 + std::abs(l)); ++it) {
            const double m = 0.5 * (l + r);
            (interpolate(y0, c, m) < target ? l : r) = m;
          }
          data->psi[0][(k * nx + i) * ny + j] = 0.5 * (l + r);
        }
      }
    }
  }

  data->phi[1].resize(K * nx);
  data->phi[2].resize(K * nx);
  for (std::size_t k = 0; k < K; ++k) {
    const std::span<const double> row(data->phi[0].data() + k * nx, nx);
    const auto d1 = differentiate(opt.x, row, 1), d2 = differentiate(opt.x, row, 2);
    std::copy(d1.begin(), d1.end(), data->phi[1].begin() + k * nx);
    std::copy(d2.begin(), d2.end(), data->phi[2].begin() + k * nx);
  }
  if (g) {
    derive_2d(opt.x, opt.y, K, data->zeta);
    derive_2d(opt.x, opt.y, K, data->psi);
  }

  // Inverse identities along full backward paths at a few anchors.
  {
    const std::size_t m = std::max<std::size_t>(1, std::min(opt.identity_anchors, nx - 4));
    std::vector<std::size_t> idx;
    for (std::size_t a = 0; a < m; ++a) idx.push_back(2 + (m == 1 ? (nx - 5) / 2 : a * (nx - 5) / (m - 1)));
    std::vector<double> gaps(data->anchors.size(), 0.0);
    parallel_for(data->anchors.size(), [&](std::size_t q) {
      const std::size_t t0 = data->anchors[q];
      if (t0 == 0) return;
      RdeProblem bp;
      bp.driver = std::make_shared<const RoughPath>(backward_lift(*driver, t0));
      bp.g = g ? back_sys : sigma;
      bp.y0.assign(g ? 2 : 1, 0.0);
      std::vector<std::vector<double>> eta_fwd;
      std::vector<std::vector<double>> starts;
      const double ymid = g ? opt.y.at(opt.y.n / 2) : 0.0;
      if (g) {
        RdeProblem fp;
        fp.driver = driver;
        fp.g = fwd_sys;
        fp.y0 = {0.0, 0.0};
        fp.end_node = t0;
        std::vector<std::vector<double>> fs;
        for (std::size_t i : idx) fs.push_back({opt.x.at(i), ymid});
        std::size_t dummy = 0;
        eta_fwd = robust_flow(fp, fs, {}, dummy);
        for (std::size_t a = 0; a < idx.size(); ++a) starts.push_back({eta_fwd[a][2 * t0], eta_fwd[a][2 * t0 + 1]});
      } else {
        for (std::size_t i : idx) starts.push_back({flow->theta[t0 * nx + i]});
      }
      std::size_t dummy = 0;
      const auto back = robust_flow(bp, starts, {}, dummy);
      double gap = 0.0;
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t j = 0; j <= t0; ++j) {
          if (g) {
            gap = std::max(gap, std::abs(back[a][2 * j] - eta_fwd[a][2 * (t0 - j)]));
            gap = std::max(gap, std::abs(back[a][2 * j + 1] - eta_fwd[a][2 * (t0 - j) + 1]));
          } else {
            gap = std::max(gap, std::abs(back[a][j] - flow->theta[(t0 - j) * nx + idx[a]]));
          }
        }
      gaps[q] = gap;
    });
    for (double v : gaps) flow->inverse_gap = std::max(flow->inverse_gap, std::isnan(v) ? kNan : v);
  }

  // Round trips on the tables.
  for (std::size_t t0 : data->anchors) {
    const std::size_t k = static_cast<std::size_t>(std::lower_bound(data->nodes.begin(), data->nodes.end(), t0) -
                                                   data->nodes.begin());
    for (std::size_t i = 0; i < nx; ++i) {
      const double th = flow->theta[t0 * nx + i];
      if (!opt.x.contains(th)) continue;
      data->roundtrip = std::max(data->roundtrip, std::abs(data->phi1(k, 0, th) - opt.x.at(i)));
      if (!g) continue;
      for (std::size_t j = 0; j < ny; ++j) {
        const double ps = data->psi[0][(k * nx + i) * ny + j];
        if (!opt.y.contains(ps)) continue;
        data->pair = std::max(data->pair, std::abs(data->table2(data->zeta[0], k, th, ps) - opt.y.at(j)));
      }
    }
  }

  Characteristics out;
  out.flow = flow;
  out.maps = std::make_shared<const TransformMaps>(data);

  if (opt.track_halving) {
    std::vector<std::size_t> mids;
    for (std::size_t a = 0; a + 1 < data->anchors.size(); ++a) {
      const std::size_t lo = data->anchors[a] + (opt.paired ? 1 : 0), hi = data->anchors[a + 1];
      if (hi > lo + 1) mids.push_back((lo + hi) / 2);
    }
    std::vector<double> gaps(mids.size(), 0.0);
    parallel_for(mids.size(), [&](std::size_t q) {
      std::size_t dummy = 0;
      const auto row = backward_phi(mids[q], dummy);
      for (std::size_t i = 0; i < nx; ++i)
        gaps[q] = std::max(gaps[q], std::abs(row[i] - out.maps->phi(grid.time(mids[q]), opt.x.at(i))));
    });
    for (double v : gaps) data->time_interp = std::max(data->time_interp, v);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

FlowResidualReport verify_flow_rdes(const TransformMaps& maps, const BundlePtr& sigma, const BundlePtr& g) {
  const RoughPath& rp = maps.driver();
  const std::size_t d = rp.dim();
  check_sigma(sigma, d);
  check_g(g, d);
  require(static_cast<bool>(g) == maps.has_g(), ErrorKind::kParameter, "g does not match the maps");
  const Lattice& X = maps.x();
  const Lattice& Y = maps.y();
  const auto& nodes = maps.nodes();
  const auto& flow = maps.flow();
  FlowResidualReport rep;
  std::vector<double> dw(d), dbr(d * d);
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const std::size_t K = nodes[k];
    if (nodes[k + 1] != K + 1) continue;
    ++rep.pairs;
    for (std::size_t a = 0; a < d; ++a) dw[a] = rp.omega()(K + 1, a) - rp.omega()(K, a);
    const auto sec = rp.second().step(K);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) dbr[a * d + b] = dw[a] * dw[b] - sec[a * d + b] - sec[b * d + a];
    const double t = rp.grid().time(K);
    for (std::size_t i = 2; i + 2 < X.n; ++i) {
      const double x = X.at(i);
      const SigmaAt s = sigma_at(*sigma, x);
      const double p0 = maps.phi_at(k, i), p1 = maps.phi_at(k + 1, i);
      const double px = maps.phi(t, x, MapPart::kX), pxx = maps.phi(t, x, MapPart::kXX);
      double r = p1 - p0;
      for (std::size_t a = 0; a < d; ++a) {
        r -= px * s.v[a] * dw[a];
        for (std::size_t b = 0; b < d; ++b) {
          const double j = (pxx * s.v[b] + px * s.dx[b]) * s.v[a];  // direction b of the a-th integrand
          r -= j * sec[b * d + a];
          r -= (0.5 * pxx * s.v[a] * s.v[b] + px * s.dx[a] * s.v[b]) * dbr[a * d + b];
        }
      }
      rep.phi_residual = std::max(rep.phi_residual, std::abs(r));
      if (!g) continue;
      const double th = flow.theta[K * X.n + i];
      const SigmaAt st = sigma_at(*sigma, th);
      for (std::size_t jj = 2; jj + 2 < Y.n; ++jj) {
        const double y = Y.at(jj);
        const GAt q = g_at(*g, th, y);
        const double q0 = maps.psi_at(k, i, jj), q1 = maps.psi_at(k + 1, i, jj);
        const double py = maps.psi(t, x, y, MapPart::kY), pyy = maps.psi(t, x, y, MapPart::kYY);
        double rr = q1 - q0;
        for (std::size_t a = 0; a < d; ++a) {
          rr += py * q.v[a] * dw[a];
          for (std::size_t b = 0; b < d; ++b) {
            const double j = (pyy * q.v[b] + py * q.dy[b]) * q.v[a] + py * q.dx[a] * st.v[b];
            rr -= j * sec[b * d + a];
            rr -= (0.5 * pyy * q.v[a] * q.v[b] + py * q.dy[a] * q.v[b]) * dbr[a * d + b];
          }
        }
        rep.psi_residual = std::max(rep.psi_residual, std::abs(rr));
      }
    }
  }
  return rep;
}

FlowResidualStudy flow_rde_refinement(const BundlePtr& sigma, const BundlePtr& g,
                                      const std::function<RoughPathPtr(int level)>& driver,
                                      const std::vector<int>& levels, const CharacteristicOptions& opt,
                                      HolderPair pair) {
  pair.validate();
  require(levels.size() >= 3, ErrorKind::kParameter, "refinement needs at least three levels");
  FlowResidualStudy st;
  st.levels = levels;
  st.threshold = pair.young_exponent() - 0.15;
  CharacteristicOptions o = opt;
  o.paired = true;
  o.track_halving = false;
  std::vector<double> h;
  for (int L : levels) {
    const RoughPathPtr rp = driver(L);
    const auto ch = build_characteristics(sigma, g, rp, o);
    const auto rep = verify_flow_rdes(*ch.maps, sigma, g);
    st.phi_residual.push_back(rep.phi_residual);
    st.psi_residual.push_back(rep.psi_residual);
    h.push_back(rp->grid().h());
  }
  st.phi_fit = fit_order(h, st.phi_residual);
  st.pass = st.phi_fit.order >= st.threshold;
  if (g) {
    st.psi_fit = fit_order(h, st.psi_residual);
    st.pass = st.pass && st.psi_fit.order >= st.threshold;
  }
  return st;
}

// ---------------------------------------------------------------------------------------------

PdeRhs spde_rhs(std::function<double(const PdePoint&)> f, std::size_t d) {
  return [f, d](const PdePoint& p, std::span<double> out) {
    const double v = f(p) / static_cast<double>(d);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) out[k * d + k] = v;
  };
}

PdeRhs make_rhs(const std::string& spec, std::size_t d) {
  std::string head;
  const auto a = spec_numbers(spec, head);
  if (head == "zero") return spde_rhs([](const PdePoint&) { return 0.0; }, d);
  if (head == "heat") {
    want_args(a, 1, spec);
    return spde_rhs([k = a[0]](const PdePoint& p) { return k * p.gamma; }, d);
  }
  if (head == "source") {
    want_args(a, 1, spec);
    return spde_rhs([c = a[0]](const PdePoint&) { return c; }, d);
  }
  if (head == "linear") {
    want_args(a, 1, spec);
    return spde_rhs([c = a[0]](const PdePoint& p) { return c * p.y; }, d);
  }
  if (head == "burgers") {
    want_args(a, 2, spec);
    return spde_rhs([k = a[0], c = a[1]](const PdePoint& p) { return k * p.gamma - c * p.y * p.z; }, d);
  }
  throw Error(ErrorKind::kInput, "unknown right side '" + spec + "'");
}

std::function<double(double)> make_initial(const std::string& spec) {
  std::string head;
  const auto a = spec_numbers(spec, head);
  want_args(a, 1, spec);
  if (head == "gauss") {
    require(a[0] > 0, ErrorKind::kInput, "gauss variance must be positive");
    return [s = a[0]](double x) { return std::exp(-x * x / (2 * s)); };
  }
  if (head == "sin") return [k = a[0]](double x) { return std::sin(k * x); };
  if (head == "tanh") {
    require(a[0] > 0, ErrorKind::kInput, "tanh scale must be positive");
    return [s = a[0]](double x) { return std::tanh(x / s); };
  }
  throw Error(ErrorKind::kInput, "unknown initial datum '" + spec + "'");
}

// ---------------------------------------------------------------------------------------------

struct TransformedRhs::Frame {
  double theta = 0.0, phi_x = 1.0, phi_xx = 0.0;
  SigmaAt s;
  bool x_ready = false;
  // y-dependent part
  double y_hat = 0.0, z = 0.0, zx = 0.0, zy = 1.0, zxx = 0.0, zxy = 0.0, zyy = 0.0, psi_y = 1.0;
  GAt q;
};

struct TransformedRhs::Cache {
  std::size_t node = std::numeric_limits<std::size_t>::max();
  double t = kNan;
  std::unordered_map<double, Frame> x_part;
};

TransformedRhs::TransformedRhs(std::shared_ptr<const TransformMaps> maps, BundlePtr sigma, BundlePtr g, PdeRhs f,
                               GammaForm form)
    : maps_(std::move(maps)),
      sigma_(std::move(sigma)),
      g_(std::move(g)),
      f_(std::move(f)),
      form_(form),
      cache_(std::make_shared<Cache>()) {
  require(maps_ != nullptr && f_, ErrorKind::kParameter, "transform needs maps and f");
  d_ = maps_->driver().dim();
  check_sigma(sigma_, d_);
  check_g(g_, d_);
  require(static_cast<bool>(g_) == maps_->has_g(), ErrorKind::kParameter, "g does not match the maps");
}

TransformedRhs::Frame TransformedRhs::frame(const PdePoint& p) const {
  Cache& c = *cache_;
  if (c.node != p.node || c.t != p.t) {
    c.node = p.node;
    c.t = p.t;
    c.x_part.clear();
  }
  Frame& cached = c.x_part[p.x];
  if (!cached.x_ready) {
    cached.theta = maps_->theta(p.node, p.x);
    cached.phi_x = maps_->phi(p.t, cached.theta, MapPart::kX);
    cached.phi_xx = maps_->phi(p.t, cached.theta, MapPart::kXX);
    cached.s = sigma_at(*sigma_, cached.theta);
    cached.x_ready = true;
  }
  Frame fr = cached;
  if (maps_->has_g()) {
    fr.y_hat = maps_->zeta(p.t, fr.theta, p.y);
    fr.zx = maps_->zeta(p.t, fr.theta, p.y, MapPart::kX);
    fr.zy = maps_->zeta(p.t, fr.theta, p.y, MapPart::kY);
    fr.zxx = maps_->zeta(p.t, fr.theta, p.y, MapPart::kXX);
    fr.zxy = maps_->zeta(p.t, fr.theta, p.y, MapPart::kXY);
    fr.zyy = maps_->zeta(p.t, fr.theta, p.y, MapPart::kYY);
    fr.psi_y = maps_->psi(p.t, p.x, fr.y_hat, MapPart::kY);
    fr.q = g_at(*g_, fr.theta, fr.y_hat);
  } else {
    fr.y_hat = p.y;
  }
  fr.z = fr.zx + fr.zy * p.z * fr.phi_x;
  return fr;
}

double TransformedRhs::gamma_from(const Frame& fr, const PdePoint& p, GammaForm form) const {
  const double px = fr.phi_x, tail = fr.zy * (p.gamma * px * px + p.z * fr.phi_xx);
  if (form == GammaForm::kLiteral) {
    const double dyx_sigma = 0.0;  // sigma depends on x alone
    return fr.zxx + (fr.zxy + dyx_sigma) * p.z * px + fr.zyy * px * px * px * px + tail;
  }
  return fr.zxx + 2 * fr.zxy * p.z * px + fr.zyy * p.z * p.z * px * px + tail;
}

double TransformedRhs::y_hat(const PdePoint& p) const { return frame(p).y_hat; }
double TransformedRhs::z_hat(const PdePoint& p) const { return frame(p).z; }
double TransformedRhs::gamma_hat(const PdePoint& p) const { return gamma_from(frame(p), p, form_); }
double TransformedRhs::gamma_literal(const PdePoint& p) const { return gamma_from(frame(p), p, GammaForm::kLiteral); }
double TransformedRhs::gamma_chain_rule(const PdePoint& p) const {
  return gamma_from(frame(p), p, GammaForm::kChainRule);
}

TransformedRhs::Flag TransformedRhs::flagged(const PdePoint& p) const {
  const Frame fr = frame(p);
  const double px = fr.phi_x;
  return {(fr.zxy + 0.0) * p.z * px - 2 * fr.zxy * p.z * px, fr.zyy * px * px * (px * px - p.z * p.z)};
}

void TransformedRhs::operator()(const PdePoint& p, std::span<double> out) const {
  const Frame fr = frame(p);
  const double gh = gamma_from(fr, p, form_);
  const std::size_t d = d_;
  std::array<double, kMaxDim * kMaxDim> fv{};
  f_(PdePoint{p.t, p.node, fr.theta, fr.y_hat, fr.z, gh}, {fv.data(), d * d});
  for (std::size_t k = 0; k < d; ++k) {
    const double c = fr.z * fr.s.dx[k] + fr.q.dx[k] + fr.q.dy[k] * fr.z;
    for (std::size_t l = 0; l < d; ++l)
      out[k * d + l] = fr.psi_y * (fv[k * d + l] - 0.5 * gh * fr.s.v[k] * fr.s.v[l] - c * fr.s.v[l]);
  }
}

PdeRhs TransformedRhs::as_rhs() const {
  auto self = std::make_shared<const TransformedRhs>(*this);
  return [self](const PdePoint& p, std::span<double> out) { (*self)(p, out); };
}

TransformedRhs transform_rhs(PdeRhs f, std::shared_ptr<const TransformMaps> maps, BundlePtr sigma, BundlePtr g,
                             GammaForm form) {
  return TransformedRhs(std::move(maps), std::move(sigma), std::move(g), std::move(f), form);
}

// ---------------------------------------------------------------------------------------------

std::span<const double> PdeSolution::row_of(std::size_t node) const {
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
  if (it == nodes.end() || *it != node)
    throw Error(ErrorKind::kParameter, "node " + std::to_string(node) + " was not kept");
  const std::size_t k = static_cast<std::size_t>(it - nodes.begin());
  return {v.data() + k * x.n, x.n};
}

double PdeSolution::at(std::size_t node, double xv) const { return interpolate(x, row_of(node), xv); }

PdeSolution solve_transformed_pde(const PdeRhs& fhat, const std::function<double(double)>& v0,
                                  const BracketPath& bracket, const Lattice& x, const PdeOptions& opt) {
  require(static_cast<bool>(fhat) && static_cast<bool>(v0), ErrorKind::kParameter, "PDE needs fhat and v0");
  require(x.n >= 5, ErrorKind::kParameter, "PDE lattice needs at least 5 points");
  require(opt.cfl > 0 && opt.probe_stride >= 1, ErrorKind::kParameter, "bad PDE options");
  const Grid& grid = bracket.grid();
  const std::size_t d = bracket.dim(), dd = d * d, n = x.n, N = grid.steps();
  require(d <= kMaxDim, ErrorKind::kUnsupported, "driver dimension above 8");

  PdeSolution sol;
  sol.x = x;
  std::vector<bool> keep(N + 1, opt.keep.empty());
  for (std::size_t k : opt.keep) {
    require(k <= N, ErrorKind::kParameter, "kept node outside the grid");
    keep[k] = true;
  }
  std::vector<double> v(n), vn(n), db(dd);
  std::array<double, kMaxDim * kMaxDim> out{};
  for (std::size_t j = 0; j < n; ++j) v[j] = v0(x.at(j));
  auto store = [&](std::size_t node) {
    if (!keep[node]) return;
    sol.nodes.push_back(node);
    sol.v.insert(sol.v.end(), v.begin(), v.end());
  };
  store(0);
  const double h = x.step, h2 = h * h;

  for (std::size_t i = 0; i < N; ++i) {
    const auto b0 = bracket.at(i), b1 = bracket.at(i + 1);
    bool moving = false;
    for (std::size_t q = 0; q < dd; ++q) {
      db[q] = b1[q] - b0[q];
      moving = moving || db[q] != 0.0;
    }
    if (!moving) {
      store(i + 1);
      continue;
    }
    const double t = grid.time(i);
    auto inc = [&](std::size_t j, double y, double z, double g) {
      fhat(PdePoint{t, i, x.at(j), y, z, g}, {out.data(), dd});
      double s = 0.0;
      for (std::size_t q = 0; q < dd; ++q) s += out[q] * db[q];
      return s;
    };
    auto derivs = [&](std::size_t j, double& z, double& g) {
      z = (v[j + 1] - v[j - 1]) / (2 * h);
      g = (v[j + 1] - 2 * v[j] + v[j - 1]) / h2;
    };

    // gamma probes: the per-step diffusion number d inc / d gamma / dx^2
    double mu = 0.0, mu_min = 0.0;
    for (std::size_t j = 1; j + 1 < n; j = (j + opt.probe_stride < n - 1 || j == n - 2) ? j + opt.probe_stride
                                                                                         : n - 2) {
      double z, g;
      derivs(j, z, g);
      const double delta = 1e-2 * (1 + std::abs(g));
      const double c = (inc(j, v[j], z, g + delta) - inc(j, v[j], z, g - delta)) / (2 * delta);
      mu = std::max(mu, c / h2);
      mu_min = std::min(mu_min, c / h2);
      if (j == n - 2) break;
    }
    if (mu_min < -1e-9)
      throw Error(ErrorKind::kCfl, "backward-parabolic right side at node " + std::to_string(i) +
                                       ": d inc / d gamma / dx^2 = " + fmt(mu_min));
    if (mu * h2 > 1e-14) sol.gamma_dependent = true;
    std::size_t m = 1, halvings = 0;
    while (mu / static_cast<double>(m) > opt.cfl) {
      m *= 2;
      if (++halvings > opt.max_halvings)
        throw Error(ErrorKind::kCfl, "CFL bound not met at node " + std::to_string(i) + " after " +
                                         std::to_string(opt.max_halvings) + " halvings: diffusion number " +
                                         fmt(mu) + " vs " + fmt(opt.cfl));
    }
    sol.max_substeps = std::max(sol.max_substeps, m);
    sol.max_mu = std::max(sol.max_mu, mu / static_cast<double>(m));
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t j = 1; j + 1 < n; ++j) {
        double z, g;
        derivs(j, z, g);
        vn[j] = v[j] + scale * inc(j, v[j], z, g);
      }
      // end increments by linear extrapolation, so a vanishing right side leaves v unchanged
      vn[0] = v[0] + 2 * (vn[1] - v[1]) - (vn[2] - v[2]);
      vn[n - 1] = v[n - 1] + 2 * (vn[n - 2] - v[n - 2]) - (vn[n - 3] - v[n - 3]);
      for (std::size_t j = 0; j < n; ++j)
        if (!std::isfinite(vn[j]))
          throw Error(ErrorKind::kCfl, "explicit scheme lost stability at node " + std::to_string(i) +
                                           " (diffusion number " + fmt(mu * scale) + ")");
      std::swap(v, vn);
    }
    store(i + 1);
  }
  return sol;
}

// ---------------------------------------------------------------------------------------------

RpdeReport rpde_roundtrip(const RpdeProblem& p, const RpdeOptions& opt) {
  require(p.driver && p.sigma && p.f && p.u0, ErrorKind::kParameter, "RPDE needs u0, sigma, f and a driver");
  require(opt.x_hi > opt.x_lo && opt.dx > 0 && opt.margin >= 0 && opt.map_dx > 0, ErrorKind::kParameter,
          "bad RPDE boxes");
  const RoughPath& rp = *p.driver;
  const std::size_t d = rp.dim();
  check_sigma(p.sigma, d);
  check_g(p.g, d);

  CharacteristicOptions co;
  co.x = Lattice::padded(opt.x_lo - 2 * opt.margin, opt.x_hi + 2 * opt.margin, opt.map_dx);
  if (p.g) co.y = Lattice::padded(opt.y_lo, opt.y_hi, opt.map_dy);
  co.t0_count = opt.t0_count;
  co.paired = true;
  co.track_halving = opt.track_halving;
  const auto ch = build_characteristics(p.sigma, p.g, p.driver, co);
  const TransformMaps& maps = *ch.maps;
  const TransformedRhs fhat = transform_rhs(p.f, ch.maps, p.sigma, p.g, opt.gamma);

  const Lattice pde = Lattice::padded(opt.x_lo - opt.margin, opt.x_hi + opt.margin, opt.dx);
  PdeOptions po = opt.pde;
  po.keep = maps.nodes();
  const BracketPath br = bracket(rp);
  const PdeSolution vs = solve_transformed_pde(fhat.as_rhs(), p.u0, br, pde, po);

  RpdeReport rep;
  const auto cells = static_cast<std::size_t>(std::llround((opt.x_hi - opt.x_lo) / opt.dx));
  rep.x = Lattice{opt.x_lo, opt.dx, cells + 1};
  rep.nodes = maps.anchors();
  rep.max_substeps = vs.max_substeps;
  rep.roundtrip_gap = maps.roundtrip_gap();
  rep.inverse_gap = maps.flow().inverse_gap;
  rep.pair_gap = maps.pair_gap();
  rep.time_interp_gap = maps.time_interp_gap();
  const std::size_t nr = rep.x.n;

  // u(t, x) = zeta(t, x, v(t, phi(t, x))) at every tabulated node.
  const auto& nodes = maps.nodes();
  std::vector<double> u_all(nodes.size() * nr), v_all(nodes.size() * nr);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double t = rp.grid().time(nodes[k]);
    for (std::size_t j = 0; j < nr; ++j) {
      const double x = rep.x.at(j);
      const double ph = maps.phi(t, x);
      u_all[k * nr + j] = maps.zeta(t, x, vs.at(nodes[k], ph));
      v_all[k * nr + j] = vs.at(nodes[k], x);
    }
  }
  for (std::size_t a : rep.nodes) {
    const std::size_t k = static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), a) - nodes.begin());
    rep.u.insert(rep.u.end(), u_all.begin() + k * nr, u_all.begin() + (k + 1) * nr);
    rep.v.insert(rep.v.end(), v_all.begin() + k * nr, v_all.begin() + (k + 1) * nr);
  }

  // One-step residual of the integral form over each (t0, t0 + 1) pair.
  std::vector<double> dw(d), dbr(d * d);
  std::array<double, kMaxDim * kMaxDim> fv{};
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const std::size_t K = nodes[k];
    if (nodes[k + 1] != K + 1) continue;
    for (std::size_t a = 0; a < d; ++a) dw[a] = rp.omega()(K + 1, a) - rp.omega()(K, a);
    const auto sec = rp.second().step(K);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) dbr[a * d + b] = dw[a] * dw[b] - sec[a * d + b] - sec[b * d + a];
    const std::span<const double> u0(u_all.data() + k * nr, nr), u1(u_all.data() + (k + 1) * nr, nr);
    const auto ux = differentiate(rep.x, u0, 1), uxx = differentiate(rep.x, u0, 2);
    const double t = rp.grid().time(K);
    for (std::size_t j = 2; j + 2 < nr; ++j) {
      const double x = rep.x.at(j);
      const SigmaAt s = sigma_at(*p.sigma, x);
      const GAt q = p.g ? g_at(*p.g, x, u0[j]) : GAt{};
      std::array<double, kMaxDim> A{}, Ax{};
      for (std::size_t a = 0; a < d; ++a) {
        A[a] = ux[j] * s.v[a] + q.v[a];
        Ax[a] = uxx[j] * s.v[a] + ux[j] * s.dx[a] + q.dx[a] + q.dy[a] * ux[j];
      }
      p.f(PdePoint{t, K, x, u0[j], ux[j], uxx[j]}, {fv.data(), d * d});
      double r = u1[j] - u0[j];
      for (std::size_t a = 0; a < d; ++a) {
        r -= A[a] * dw[a];
        for (std::size_t b = 0; b < d; ++b) {
          r -= (Ax[b] * s.v[a] + q.dy[a] * A[b]) * sec[b * d + a];
          r -= fv[a * d + b] * dbr[a * d + b];
        }
      }
      rep.residual = std::max(rep.residual, std::abs(r));
    }
  }

  // The flagged gamma terms along the computed v.
  for (std::size_t a : rep.nodes) {
    const std::span<const double> row = vs.row_of(a);
    const auto vx = differentiate(pde, row, 1), vxx = differentiate(pde, row, 2);
    const double t = rp.grid().time(a);
    for (std::size_t j = 2; j + 2 < pde.n; j += 4) {
      const PdePoint pt{t, a, pde.at(j), row[j], vx[j], vxx[j]};
      try {
        const auto fl = fhat.flagged(pt);
        rep.flagged_bracket = std::max(rep.flagged_bracket, std::abs(fl.bracket));
        rep.flagged_yy = std::max(rep.flagged_yy, std::abs(fl.yy));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kExtrapolation) throw;
      }
    }
  }
  return rep;
}

}  // namespace roughcalc
