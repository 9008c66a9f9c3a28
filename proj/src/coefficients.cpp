#include "roughcalc/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "roughcalc/controlled.hpp"

namespace roughcalc {

PathContext::PathContext(const SampledPath& omega) : omega_(omega), running_sup_(omega.nodes()) {
  double best = 0.0;
  for (std::size_t i = 0; i < omega.nodes(); ++i) {
    double n2 = 0.0;
    for (double x : omega.at(i)) n2 += x * x;
    best = std::max(best, std::sqrt(n2));
    running_sup_[i] = best;
  }
}

double PathView::time(std::size_t j) const {
  if (j > node_) throw AdaptednessError("coefficient read the path beyond the current node");
  return ctx_->omega().grid().time(j);
}

std::span<const double> PathView::at(std::size_t j) const {
  if (j > node_) throw AdaptednessError("coefficient read the path beyond the current node");
  return ctx_->omega().at(j);
}

PathView TimePoint::view() const {
  require(ctx != nullptr, ErrorKind::kCapability, "coefficient needs a driver path");
  return PathView(ctx, node);
}

const char* regularity_name(Regularity r) {
  switch (r) {
    case Regularity::kC2: return "C2";
    case Regularity::kC2Beta: return "C2_beta";
    case Regularity::kC12: return "C12";
    case Regularity::kC23: return "C23";
    case Regularity::kC33: return "C33";
  }
  return "?";
}

namespace {

std::vector<double> run(const CoefficientBundle::Eval& fn, bool zero_ok, std::size_t n, const TimePoint& tp,
                        std::span<const double> y, const char* what, const std::string& name) {
  std::vector<double> out(n, 0.0);
  if (fn) {
    fn(tp, y, out);
  } else if (!zero_ok) {
    throw Error(ErrorKind::kCapability, "bundle '" + name + "' does not supply " + what);
  }
  return out;
}

}  // namespace

std::vector<double> CoefficientBundle::eval_value(const TimePoint& tp, std::span<const double> y) const {
  return run(value, false, size(), tp, y, "a value", name);
}
std::vector<double> CoefficientBundle::eval_dy(const TimePoint& tp, std::span<const double> y) const {
  return run(dy, false, size() * in_dim, tp, y, "d_y", name);
}
std::vector<double> CoefficientBundle::eval_dyy(const TimePoint& tp, std::span<const double> y) const {
  return run(dyy, false, size() * in_dim * in_dim, tp, y, "d_yy", name);
}
std::vector<double> CoefficientBundle::eval_path(const TimePoint& tp, std::span<const double> y) const {
  return run(path, true, size() * driver_dim, tp, y, "d_w", name);
}
std::vector<double> CoefficientBundle::eval_path_dy(const TimePoint& tp, std::span<const double> y) const {
  return run(path_dy, path_free || !path, size() * driver_dim * in_dim, tp, y, "d_y d_w", name);
}
std::vector<double> CoefficientBundle::eval_path2(const TimePoint& tp, std::span<const double> y) const {
  return run(path2, path_free || !path, size() * driver_dim * driver_dim, tp, y, "d_ww", name);
}
std::vector<double> CoefficientBundle::eval_time(const TimePoint& tp, std::span<const double> y) const {
  return run(time, path_free, size() * driver_dim * driver_dim, tp, y, "D_t", name);
}
std::vector<double> CoefficientBundle::eval_rate(const TimePoint& tp, std::span<const double> y) const {
  return run(rate, true, size(), tp, y, "dt rate", name);
}

std::vector<std::vector<double>> probe_points(std::size_t in_dim, const ProbeBox& box) {
  require(box.per_dim >= 1 && box.hi >= box.lo, ErrorKind::kParameter, "invalid probe box");
  std::size_t total = 1;
  for (std::size_t j = 0; j < in_dim; ++j) total *= box.per_dim;
  std::vector<std::vector<double>> pts(total, std::vector<double>(in_dim));
  for (std::size_t p = 0; p < total; ++p) {
    std::size_t r = p;
    for (std::size_t j = 0; j < in_dim; ++j) {
      const std::size_t k = r % box.per_dim;
      r /= box.per_dim;
      pts[p][j] = box.per_dim == 1 ? 0.5 * (box.lo + box.hi)
                                   : box.lo + (box.hi - box.lo) * static_cast<double>(k) / (box.per_dim - 1);
    }
  }
  return pts;
}

namespace {

double rel_gap(double adv, double fd) { return std::abs(adv - fd) / std::max(1.0, std::abs(adv)); }

RoughPath default_probe_driver(std::size_t d) { return lift_smooth(smooth_test_generator(d, 97), Grid::dyadic(0.0, 1.0, 5)); }

}  // namespace

ValidationReport validate_bundle(const CoefficientBundle& b, const RoughPath* driver, const ProbeBox& box,
                                 double tol) {
  ValidationReport rep;
  std::unique_ptr<RoughPath> own;
  if (driver == nullptr) {
    own = std::make_unique<RoughPath>(default_probe_driver(b.driver_dim));
    driver = own.get();
  }
  require(driver->dim() == b.driver_dim, ErrorKind::kDimension, "probe driver dimension differs from the bundle");
  const PathContext ctx(driver->omega());
  const std::size_t n = b.in_dim, m = b.size(), d = b.driver_dim;
  const std::size_t nodes = driver->grid().nodes();
  const std::size_t time_nodes[3] = {0, nodes / 2, nodes - 1};
  const double eps = 1e-4;
  for (std::size_t node : time_nodes) {
    const TimePoint tp{driver->grid().time(node), node, &ctx};
    for (const auto& y : probe_points(n, box)) {
      ++rep.probes;
      const auto g1 = b.eval_dy(tp, y);
      const auto g2 = b.eval_dyy(tp, y);
      const bool check_p = b.path && b.path_dy;
      std::vector<double> p1;
      if (check_p) p1 = b.eval_path_dy(tp, y);
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> yp = y, ym = y;
        yp[j] += eps;
        ym[j] -= eps;
        const auto vp = b.eval_value(tp, yp), vm = b.eval_value(tp, ym);
        const auto dp = b.eval_dy(tp, yp), dm = b.eval_dy(tp, ym);
        for (std::size_t v = 0; v < m; ++v) {
          rep.max_rel_dy = std::max(rep.max_rel_dy, rel_gap(g1[v * n + j], (vp[v] - vm[v]) / (2 * eps)));
          for (std::size_t i = 0; i < n; ++i)
            rep.max_rel_dyy =
                std::max(rep.max_rel_dyy, rel_gap(g2[(v * n + i) * n + j], (dp[v * n + i] - dm[v * n + i]) / (2 * eps)));
        }
        if (check_p) {
          const auto pp = b.eval_path(tp, yp), pm = b.eval_path(tp, ym);
          for (std::size_t v = 0; v < m; ++v)
            for (std::size_t k = 0; k < d; ++k)
              rep.max_rel_path_dy = std::max(rep.max_rel_path_dy, rel_gap(p1[(v * d + k) * n + j],
                                                                          (pp[v * d + k] - pm[v * d + k]) / (2 * eps)));
        }
      }
    }
  }
  rep.ok = rep.max_rel_dy <= tol && rep.max_rel_dyy <= tol && rep.max_rel_path_dy <= tol;
  if (!rep.ok) {
    std::ostringstream os;
    os << "bundle '" << b.name << "' derivative mismatch: dy " << rep.max_rel_dy << ", dyy " << rep.max_rel_dyy
       << ", d_y d_w " << rep.max_rel_path_dy;
    rep.detail = os.str();
  }
  return rep;
}

BundlePtr register_bundle(CoefficientBundle b, const RoughPath* driver, const ProbeBox& box) {
  require(b.size() > 0 && b.in_dim > 0 && b.driver_dim > 0, ErrorKind::kDimension, "bundle has an empty shape");
  require(static_cast<bool>(b.value) && static_cast<bool>(b.dy) && static_cast<bool>(b.dyy), ErrorKind::kCapability,
          "bundle must supply value, d_y and d_yy");
  const auto rep = validate_bundle(b, driver, box);
  if (!rep.ok) throw Error(ErrorKind::kCapability, rep.detail);
  return std::make_shared<const CoefficientBundle>(std::move(b));
}

namespace {

// A scalar map phi(t, path, y) applied to y_c for every output (c, q).
struct ScalarFamily {
  std::function<double(const TimePoint&, double)> f, fy, fyy;
  // Path-controlled part: d_w phi in direction k, its y-derivative, and d_ww phi.
  std::function<double(const TimePoint&, double, std::size_t)> p, py;
  std::function<double(const TimePoint&, double, std::size_t, std::size_t)> p2;
};

CoefficientBundle componentwise(const BundleShape& s, std::string name, Regularity reg, const ScalarFamily& fam) {
  require(s.rows == s.in_dim, ErrorKind::kDimension, "componentwise bundle needs rows == in_dim");
  CoefficientBundle b;
  b.name = std::move(name);
  b.in_dim = s.in_dim;
  b.rows = s.rows;
  b.cols = s.cols;
  b.driver_dim = s.driver_dim;
  b.regularity = reg;
  const std::size_t n = s.in_dim, q = s.cols, d = s.driver_dim;
  b.value = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    for (std::size_t c = 0; c < n; ++c) {
      const double v = fam.f(tp, y[c]);
      for (std::size_t r = 0; r < q; ++r) out[c * q + r] = v;
    }
  };
  b.dy = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    for (std::size_t c = 0; c < n; ++c) {
      const double v = fam.fy(tp, y[c]);
      for (std::size_t r = 0; r < q; ++r) out[(c * q + r) * n + c] = v;
    }
  };
  b.dyy = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    for (std::size_t c = 0; c < n; ++c) {
      const double v = fam.fyy(tp, y[c]);
      for (std::size_t r = 0; r < q; ++r) out[((c * q + r) * n + c) * n + c] = v;
    }
  };
  if (!fam.p) {
    b.path_free = true;
    return b;
  }
  b.uses_path = true;
  b.path = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t k = 0; k < d; ++k) {
        const double v = fam.p(tp, y[c], k);
        for (std::size_t r = 0; r < q; ++r) out[(c * q + r) * d + k] = v;
      }
  };
  b.path_dy = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t k = 0; k < d; ++k) {
        const double v = fam.py(tp, y[c], k);
        for (std::size_t r = 0; r < q; ++r) out[((c * q + r) * d + k) * n + c] = v;
      }
  };
  b.dy_path = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t k = 0; k < d; ++k) {
        const double v = fam.py(tp, y[c], k);
        for (std::size_t r = 0; r < q; ++r) out[((c * q + r) * n + c) * d + k] = v;
      }
  };
  if (fam.p2) {
    b.path2 = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      for (std::size_t c = 0; c < n; ++c)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t l = 0; l < d; ++l) {
            const double v = fam.p2(tp, y[c], k, l);
            for (std::size_t r = 0; r < q; ++r) out[((c * q + r) * d + k) * d + l] = v;
          }
    };
  }
  return b;
}

CoefficientBundle blank(const BundleShape& s, std::string name) {
  CoefficientBundle b;
  b.name = std::move(name);
  b.in_dim = s.in_dim;
  b.rows = s.rows;
  b.cols = s.cols;
  b.driver_dim = s.driver_dim;
  b.regularity = Regularity::kC33;
  b.path_free = true;
  b.dy = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  b.dyy = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  return b;
}

}  // namespace

BundlePtr zero_bundle(const BundleShape& s) {
  CoefficientBundle b = blank(s, "zero");
  b.value = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  return register_bundle(std::move(b));
}

BundlePtr constant_bundle(const BundleShape& s, std::vector<double> value) {
  const std::size_t m = s.rows * s.cols;
  if (value.size() == 1 && m > 1) value.assign(m, value[0]);
  require(value.size() == m, ErrorKind::kDimension, "constant bundle value has wrong size");
  CoefficientBundle b = blank(s, "const");
  b.value = [value](const TimePoint&, std::span<const double>, std::span<double> out) {
    std::copy(value.begin(), value.end(), out.begin());
  };
  return register_bundle(std::move(b));
}

BundlePtr affine_bundle(const BundleShape& s, std::vector<double> a, std::vector<double> c) {
  const std::size_t m = s.rows * s.cols, n = s.in_dim;
  if (c.empty()) c.assign(m, 0.0);
  require(a.size() == m * n && c.size() == m, ErrorKind::kDimension, "affine bundle coefficients have wrong size");
  CoefficientBundle b = blank(s, "affine");
  b.value = [a, c, m, n](const TimePoint&, std::span<const double> y, std::span<double> out) {
    for (std::size_t v = 0; v < m; ++v) {
      double acc = c[v];
      for (std::size_t j = 0; j < n; ++j) acc += a[v * n + j] * y[j];
      out[v] = acc;
    }
  };
  b.dy = [a](const TimePoint&, std::span<const double>, std::span<double> out) {
    std::copy(a.begin(), a.end(), out.begin());
  };
  return register_bundle(std::move(b));
}

BundlePtr poly_bundle(const BundleShape& s, std::vector<double> coef) {
  require(!coef.empty(), ErrorKind::kParameter, "poly bundle needs coefficients");
  ScalarFamily fam;
  auto eval = [coef](double y, int deriv) {
    double acc = 0.0;
    for (std::size_t p = coef.size(); p-- > 0;) {
      if (static_cast<int>(p) < deriv) break;
      double fall = 1.0;
      for (int r = 0; r < deriv; ++r) fall *= static_cast<double>(p - r);
      acc += coef[p] * fall * std::pow(y, static_cast<double>(p - deriv));
    }
    return acc;
  };
  fam.f = [eval](const TimePoint&, double y) { return eval(y, 0); };
  fam.fy = [eval](const TimePoint&, double y) { return eval(y, 1); };
  fam.fyy = [eval](const TimePoint&, double y) { return eval(y, 2); };
  return register_bundle(componentwise(s, "poly", Regularity::kC33, fam));
}

BundlePtr trig_bundle(const BundleShape& s, double a, double bb) {
  ScalarFamily fam;
  fam.f = [=](const TimePoint&, double y) { return a * std::sin(y) + bb * std::cos(y); };
  fam.fy = [=](const TimePoint&, double y) { return a * std::cos(y) - bb * std::sin(y); };
  fam.fyy = [=](const TimePoint&, double y) { return -a * std::sin(y) - bb * std::cos(y); };
  return register_bundle(componentwise(s, "trig", Regularity::kC33, fam));
}

BundlePtr rotation_bundle(std::size_t d) {
  require(d >= 1 && d <= 3, ErrorKind::kDimension, "rotation bundle supports 1 <= d <= 3");
  CoefficientBundle b = blank({2, 2, d, d}, "rotation");
  // column k of the 2 x d output:
  //   k=0: (-y1, y0); k=1: 0.5 (sin y1, cos y0); k=2: 0.3 (cos y0, sin(y0 + y1))
  b.value = [d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    out[0 * d + 0] = -y[1];
    out[1 * d + 0] = y[0];
    if (d > 1) {
      out[0 * d + 1] = 0.5 * std::sin(y[1]);
      out[1 * d + 1] = 0.5 * std::cos(y[0]);
    }
    if (d > 2) {
      out[0 * d + 2] = 0.3 * std::cos(y[0]);
      out[1 * d + 2] = 0.3 * std::sin(y[0] + y[1]);
    }
  };
  b.dy = [d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    auto at = [&](std::size_t c, std::size_t k, std::size_t j) -> double& { return out[(c * d + k) * 2 + j]; };
    at(0, 0, 1) = -1.0;
    at(1, 0, 0) = 1.0;
    if (d > 1) {
      at(0, 1, 1) = 0.5 * std::cos(y[1]);
      at(1, 1, 0) = -0.5 * std::sin(y[0]);
    }
    if (d > 2) {
      at(0, 2, 0) = -0.3 * std::sin(y[0]);
      at(1, 2, 0) = 0.3 * std::cos(y[0] + y[1]);
      at(1, 2, 1) = 0.3 * std::cos(y[0] + y[1]);
    }
  };
  b.dyy = [d](const TimePoint&, std::span<const double> y, std::span<double> out) {
    auto at = [&](std::size_t c, std::size_t k, std::size_t i, std::size_t j) -> double& {
      return out[((c * d + k) * 2 + i) * 2 + j];
    };
    if (d > 1) {
      at(0, 1, 1, 1) = -0.5 * std::sin(y[1]);
      at(1, 1, 0, 0) = -0.5 * std::cos(y[0]);
    }
    if (d > 2) {
      at(0, 2, 0, 0) = -0.3 * std::cos(y[0]);
      const double s = -0.3 * std::sin(y[0] + y[1]);
      at(1, 2, 0, 0) = s;
      at(1, 2, 0, 1) = s;
      at(1, 2, 1, 0) = s;
      at(1, 2, 1, 1) = s;
    }
  };
  return register_bundle(std::move(b));
}

namespace {

double w0(const TimePoint& tp) { return tp.view().current()[0]; }

}  // namespace

BundlePtr omega_linear_bundle(const BundleShape& s, double k) {
  ScalarFamily fam;
  fam.f = [k](const TimePoint& tp, double y) { return k * std::sin(w0(tp)) * y; };
  fam.fy = [k](const TimePoint& tp, double) { return k * std::sin(w0(tp)); };
  fam.fyy = [](const TimePoint&, double) { return 0.0; };
  fam.p = [k](const TimePoint& tp, double y, std::size_t dir) { return dir == 0 ? k * std::cos(w0(tp)) * y : 0.0; };
  fam.py = [k](const TimePoint& tp, double, std::size_t dir) { return dir == 0 ? k * std::cos(w0(tp)) : 0.0; };
  fam.p2 = [k](const TimePoint& tp, double y, std::size_t a, std::size_t b) {
    return a == 0 && b == 0 ? -k * std::sin(w0(tp)) * y : 0.0;
  };
  CoefficientBundle b = componentwise(s, "omega-linear", Regularity::kC33, fam);
  // A smooth function of the current path value has D_t = 0 (its Ito formula has no extra drift).
  b.time = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  b.dy_time = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  return register_bundle(std::move(b));
}

BundlePtr omega_quadratic_bundle(const BundleShape& s, double k) {
  ScalarFamily fam;
  fam.f = [k](const TimePoint& tp, double y) { return k * std::sin(w0(tp)) * y * y; };
  fam.fy = [k](const TimePoint& tp, double y) { return 2 * k * std::sin(w0(tp)) * y; };
  fam.fyy = [k](const TimePoint& tp, double) { return 2 * k * std::sin(w0(tp)); };
  fam.p = [k](const TimePoint& tp, double y, std::size_t dir) { return dir == 0 ? k * std::cos(w0(tp)) * y * y : 0.0; };
  fam.py = [k](const TimePoint& tp, double y, std::size_t dir) { return dir == 0 ? 2 * k * std::cos(w0(tp)) * y : 0.0; };
  fam.p2 = [k](const TimePoint& tp, double y, std::size_t a, std::size_t b) {
    return a == 0 && b == 0 ? -k * std::sin(w0(tp)) * y * y : 0.0;
  };
  CoefficientBundle b = componentwise(s, "omega-quadratic", Regularity::kC33, fam);
  b.time = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  b.dy_time = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  return register_bundle(std::move(b));
}

BundlePtr adapted_lipschitz_bundle(const BundleShape& s, double k, double clip) {
  require(clip > 0.0, ErrorKind::kParameter, "clip must be positive");
  CoefficientBundle b = blank(s, "adapted-lipschitz");
  b.path_free = false;
  b.uses_path = true;
  b.regularity = Regularity::kC12;
  b.value = [k, clip](const TimePoint& tp, std::span<const double>, std::span<double> out) {
    const double v = 1.0 + k * std::min(tp.view().running_sup(), clip);
    std::fill(out.begin(), out.end(), v);
  };
  // The running maximum moves only on a null set of times; its Gubinelli derivative is 0.
  b.path = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  b.path_dy = b.path;
  b.path2 = b.path;
  return register_bundle(std::move(b));
}

BundlePtr drift_as_bracket(BundlePtr bptr, std::size_t d) {
  const CoefficientBundle& src = *bptr;
  require(src.cols == 1, ErrorKind::kDimension, "drift must be a column");
  CoefficientBundle b;
  b.name = src.name + "/bracket";
  b.in_dim = src.in_dim;
  b.rows = src.rows;
  b.cols = d * d;
  b.driver_dim = d;
  b.regularity = src.regularity;
  b.path_free = src.path_free;
  b.uses_path = src.uses_path;
  const std::size_t n = src.in_dim, e = src.rows;
  const double inv = 1.0 / static_cast<double>(d);
  auto spread = [=](const CoefficientBundle::Eval& fn, std::size_t tail) -> CoefficientBundle::Eval {
    if (!fn) return {};
    return [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      std::vector<double> tmp(e * tail, 0.0);
      fn(tp, y, tmp);
      for (std::size_t c = 0; c < e; ++c)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t r = 0; r < tail; ++r) out[((c * d * d) + k * d + k) * tail + r] = inv * tmp[c * tail + r];
    };
  };
  b.value = spread(src.value, 1);
  b.dy = spread(src.dy, n);
  b.dyy = spread(src.dyy, n * n);
  b.path = spread(src.path, d);
  b.path_dy = spread(src.path_dy, d * n);
  b.path2 = spread(src.path2, d * d);
  b.time = spread(src.time, d * d);
  return std::make_shared<const CoefficientBundle>(std::move(b));
}

BundlePtr compose_bundles(BundlePtr outer, BundlePtr inner) {
  const CoefficientBundle& G = *outer;
  const CoefficientBundle& F = *inner;
  require(F.size() == G.in_dim && F.driver_dim == G.driver_dim, ErrorKind::kDimension,
          "inner bundle output must match the outer input");
  CoefficientBundle b;
  b.name = G.name + "(" + F.name + ")";
  b.in_dim = F.in_dim;
  b.rows = G.rows;
  b.cols = G.cols;
  b.driver_dim = G.driver_dim;
  b.regularity = std::min(G.regularity, F.regularity);
  b.regularity = std::min(b.regularity, Regularity::kC12);
  b.path_free = G.path_free && F.path_free;
  b.uses_path = G.uses_path || F.uses_path;
  const std::size_t m = G.size(), p = F.size(), n = F.in_dim, d = G.driver_dim;
  b.value = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto z = F.eval_value(tp, y);
    const auto v = G.eval_value(tp, z);
    std::copy(v.begin(), v.end(), out.begin());
  };
  b.dy = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto z = F.eval_value(tp, y);
    const auto gz = G.eval_dy(tp, z);
    const auto fy = F.eval_dy(tp, y);
    for (std::size_t v = 0; v < m; ++v)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < p; ++r) acc += gz[v * p + r] * fy[r * n + j];
        out[v * n + j] = acc;
      }
  };
  b.dyy = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
    const auto z = F.eval_value(tp, y);
    const auto gz = G.eval_dy(tp, z);
    const auto gzz = G.eval_dyy(tp, z);
    const auto fy = F.eval_dy(tp, y);
    const auto fyy = F.eval_dyy(tp, y);
    for (std::size_t v = 0; v < m; ++v)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t r = 0; r < p; ++r) {
            acc += gz[v * p + r] * fyy[(r * n + i) * n + j];
            for (std::size_t s = 0; s < p; ++s) acc += gzz[(v * p + r) * p + s] * fy[r * n + i] * fy[s * n + j];
          }
          out[(v * n + i) * n + j] = acc;
        }
  };
  if (!b.path_free) {
    // d_w (G o F) = d_w G(z) + d_y G(z) d_w F
    b.path = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      const auto z = F.eval_value(tp, y);
      const auto gp = G.eval_path(tp, z);
      const auto gz = G.eval_dy(tp, z);
      const auto fp = F.eval_path(tp, y);
      for (std::size_t v = 0; v < m; ++v)
        for (std::size_t k = 0; k < d; ++k) {
          double acc = gp[v * d + k];
          for (std::size_t r = 0; r < p; ++r) acc += gz[v * p + r] * fp[r * d + k];
          out[v * d + k] = acc;
        }
    };
    b.path_dy = [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      const auto z = F.eval_value(tp, y);
      const auto gpy = G.eval_path_dy(tp, z);
      const auto gz = G.eval_dy(tp, z);
      const auto gzz = G.eval_dyy(tp, z);
      const auto fy = F.eval_dy(tp, y);
      const auto fp = F.eval_path(tp, y);
      const auto fpy = F.eval_path_dy(tp, y);
      for (std::size_t v = 0; v < m; ++v)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < p; ++r) {
              acc += gpy[(v * d + k) * p + r] * fy[r * n + j] + gz[v * p + r] * fpy[(r * d + k) * n + j];
              for (std::size_t s = 0; s < p; ++s) acc += gzz[(v * p + r) * p + s] * fy[s * n + j] * fp[r * d + k];
            }
            out[(v * d + k) * n + j] = acc;
          }
    };
  }
  return std::make_shared<const CoefficientBundle>(std::move(b));
}

BundlePtr sum_bundles(BundlePtr a, BundlePtr c) {
  const CoefficientBundle& A = *a;
  const CoefficientBundle& C = *c;
  require(A.in_dim == C.in_dim && A.rows == C.rows && A.cols == C.cols && A.driver_dim == C.driver_dim,
          ErrorKind::kDimension, "bundles differ in shape");
  CoefficientBundle b;
  b.name = A.name + "+" + C.name;
  b.in_dim = A.in_dim;
  b.rows = A.rows;
  b.cols = A.cols;
  b.driver_dim = A.driver_dim;
  b.regularity = std::min(A.regularity, C.regularity);
  b.path_free = A.path_free && C.path_free;
  b.uses_path = A.uses_path || C.uses_path;
  using Getter = std::vector<double> (CoefficientBundle::*)(const TimePoint&, std::span<const double>) const;
  auto add = [&](Getter g, bool present) -> CoefficientBundle::Eval {
    if (!present) return {};
    return [=](const TimePoint& tp, std::span<const double> y, std::span<double> out) {
      const auto x = (A.*g)(tp, y);
      const auto z = (C.*g)(tp, y);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[k] + z[k];
    };
  };
  b.value = add(&CoefficientBundle::eval_value, true);
  b.dy = add(&CoefficientBundle::eval_dy, true);
  b.dyy = add(&CoefficientBundle::eval_dyy, true);
  const bool any_path = !b.path_free;
  b.path = add(&CoefficientBundle::eval_path, any_path);
  b.path_dy = add(&CoefficientBundle::eval_path_dy, any_path && A.has_path_dy() && C.has_path_dy());
  b.path2 = add(&CoefficientBundle::eval_path2, any_path && A.has_path2() && C.has_path2());
  b.time = add(&CoefficientBundle::eval_time, any_path && A.has_time() && C.has_time());
  b.rate = add(&CoefficientBundle::eval_rate, static_cast<bool>(A.rate) || static_cast<bool>(C.rate));
  return std::make_shared<const CoefficientBundle>(std::move(b));
}

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(used == item.size(), ErrorKind::kInput, "bad number '" + item + "' in bundle spec");
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::kInput, "bad number '" + item + "' in bundle spec");
    }
  }
  return out;
}

}  // namespace

BundlePtr make_bundle(const std::string& spec, const BundleShape& shape) {
  const auto colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  const std::vector<double> args = colon == std::string::npos ? std::vector<double>{} : parse_numbers(spec.substr(colon + 1));
  auto need = [&](std::size_t lo, std::size_t hi) {
    require(args.size() >= lo && args.size() <= hi, ErrorKind::kInput, "wrong argument count in bundle '" + spec + "'");
  };
  const std::size_t m = shape.rows * shape.cols;
  BundlePtr out;
  if (head == "zero") {
    need(0, 0);
    out = zero_bundle(shape);
  } else if (head == "const") {
    need(1, m);
    out = constant_bundle(shape, args);
  } else if (head == "linear" || head == "affine") {
    need(head == "linear" ? 1 : 2, head == "linear" ? 1 : 2);
    require(shape.rows == shape.in_dim, ErrorKind::kDimension, "linear bundle needs rows == in_dim");
    std::vector<double> a(m * shape.in_dim, 0.0), c(m, args.size() > 1 ? args[1] : 0.0);
    for (std::size_t r = 0; r < shape.rows; ++r)
      for (std::size_t q = 0; q < shape.cols; ++q) a[(r * shape.cols + q) * shape.in_dim + r] = args[0];
    out = affine_bundle(shape, a, c);
  } else if (head == "poly") {
    need(1, 16);
    out = poly_bundle(shape, args);
  } else if (head == "trig") {
    need(2, 2);
    out = trig_bundle(shape, args[0], args[1]);
  } else if (head == "rotation") {
    need(0, 0);
    require(shape.in_dim == 2 && shape.rows == 2 && shape.cols == shape.driver_dim, ErrorKind::kDimension,
            "rotation needs a 2-d state and cols == d");
    out = rotation_bundle(shape.driver_dim);
  } else if (head == "omega-linear") {
    need(1, 1);
    out = omega_linear_bundle(shape, args[0]);
  } else if (head == "omega-quadratic") {
    need(1, 1);
    out = omega_quadratic_bundle(shape, args[0]);
  } else if (head == "adapted-lipschitz") {
    need(1, 2);
    out = adapted_lipschitz_bundle(shape, args[0], args.size() > 1 ? args[1] : 3.0);
  } else {
    throw Error(ErrorKind::kInput, "unknown bundle '" + spec + "'");
  }
  return out;
}

std::vector<std::string> bundle_names() {
  return {"zero", "const:c", "linear:a", "affine:a,c", "poly:c0,c1,...", "trig:a,b", "rotation", "omega-linear:k",
          "omega-quadratic:k", "adapted-lipschitz:k[,clip]"};
}

FunctionNorms function_norms(const CoefficientBundle& g, const RoughPathPtr& driver, const ProbeBox& box,
                             Stride stride) {
  require(driver->dim() == g.driver_dim, ErrorKind::kDimension, "driver dimension differs from the bundle");
  const PathContext ctx(driver->omega());
  const std::size_t n = g.in_dim, m = g.size(), d = g.driver_dim;
  const std::size_t nodes = driver->grid().nodes();
  FunctionNorms out;
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  for (const auto& y : probe_points(n, box)) {
    std::vector<double> vals(nodes * m), gvals(nodes * m * d), dys(nodes * m * n), dyg(nodes * m * n * d);
    for (std::size_t i = 0; i < nodes; ++i) {
      const TimePoint tp{driver->grid().time(i), i, &ctx};
      const auto v = g.eval_value(tp, y);
      const auto gy = g.eval_dy(tp, y);
      const auto gyy = g.eval_dyy(tp, y);
      const auto p = g.eval_path(tp, y);
      const auto pdy = g.eval_path_dy(tp, y);
      out.sup_k = std::max(out.sup_k, norm(v) + norm(gy) + norm(gyy));
      out.sup_path = std::max(out.sup_path, norm(p) + norm(pdy));
      std::copy(v.begin(), v.end(), vals.begin() + i * m);
      std::copy(p.begin(), p.end(), gvals.begin() + i * m * d);
      std::copy(gy.begin(), gy.end(), dys.begin() + i * m * n);
      // d_w (d_y g) [v][j][k] from the commuted path_dy [v][k][j]
      for (std::size_t v2 = 0; v2 < m; ++v2)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < d; ++k) dyg[i * m * n * d + (v2 * n + j) * d + k] = pdy[(v2 * d + k) * n + j];
    }
    const ControlledPath cv(driver, m, 1, vals, gvals);
    const ControlledPath cd(driver, m * n, 1, dys, dyg);
    out.controlled = std::max(out.controlled, controlled_norms(cv, stride).full + controlled_norms(cd, stride).full);
  }
  out.norm_2 = out.sup_k + out.sup_path + out.controlled;
  return out;
}

}  // namespace roughcalc
