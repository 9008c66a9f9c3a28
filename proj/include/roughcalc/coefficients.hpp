#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "roughcalc/rough_path.hpp"

namespace roughcalc {

class AdaptednessError : public Error {
 public:
  explicit AdaptednessError(const std::string& what) : Error(ErrorKind::kAdaptedness, what) {}
};

// Per-driver data shared by all evaluations along one path: the node values and
// the running supremum sup_{s <= t_i} |w_s|.
class PathContext {
 public:
  explicit PathContext(const SampledPath& omega);
  const SampledPath& omega() const { return omega_; }
  double running_sup(std::size_t node) const { return running_sup_[node]; }

 private:
  SampledPath omega_;
  std::vector<double> running_sup_;
};

// The path as seen at node `node`: reading any later node throws.
class PathView {
 public:
  PathView(const PathContext* ctx, std::size_t node) : ctx_(ctx), node_(node) {}
  std::size_t node() const { return node_; }
  std::size_t dim() const { return ctx_->omega().dim(); }
  double time(std::size_t j) const;
  std::span<const double> at(std::size_t j) const;
  std::span<const double> current() const { return at(node_); }
  double running_sup() const { return ctx_->running_sup(node_); }

 private:
  const PathContext* ctx_;
  std::size_t node_;
};

struct TimePoint {
  double t = 0.0;
  std::size_t node = 0;
  const PathContext* ctx = nullptr;
  PathView view() const;
  bool has_path() const { return ctx != nullptr; }
};

// Regularity classes, ordered by inclusion.
enum class Regularity { kC2, kC2Beta, kC12, kC23, kC33 };
const char* regularity_name(Regularity r);

// g : (t, path, y in R^n) -> R^m with m = rows*cols, plus derivatives. Layouts:
//   value [v]; dy [v][j]; dyy [v][i][j];
//   path [v][k]            (Gubinelli derivative, h = path^*);
//   path_dy [v][k][j]      (d/dy_j of path[v][k]);
//   path2 [v][k][l]        (derivative in direction l of path[v][k]);
//   time [v][k][l]         (D_t g, symmetric in k,l);
//   rate [v]               (classical dt-coefficient, when g moves in t outside w).
// Empty callables mean "identically zero" when the matching zero flag is set,
// "not supplied" otherwise. Callables must be reentrant.
struct CoefficientBundle {
  using Eval = std::function<void(const TimePoint&, std::span<const double> y, std::span<double> out)>;

  std::string name;
  std::size_t in_dim = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t driver_dim = 1;
  Regularity regularity = Regularity::kC2;
  bool path_free = false;  // no dependence on (t, w): path/path_dy/path2/time vanish
  bool uses_path = false;  // reads the PathView

  Eval value, dy, dyy, path, path_dy, path2, time, rate;
  // Optional second ordering for the commutation checks: d_w (d_y g) as [v][j][k]
  // and D_t (d_y g) as [v][j][k][l].
  Eval dy_path, dy_time;

  std::size_t size() const { return rows * cols; }
  std::vector<double> eval_value(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_dy(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_dyy(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_path(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_path_dy(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_path2(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_time(const TimePoint& tp, std::span<const double> y) const;
  std::vector<double> eval_rate(const TimePoint& tp, std::span<const double> y) const;
  bool has_path2() const { return path_free || static_cast<bool>(path2); }
  bool has_time() const { return path_free || static_cast<bool>(time); }
  bool has_path_dy() const { return path_free || static_cast<bool>(path_dy); }
};

using BundlePtr = std::shared_ptr<const CoefficientBundle>;

struct BundleShape {
  std::size_t in_dim = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t driver_dim = 1;
};

// Probe box for validation and function-space norms: `per_dim` points per input
// dimension on [lo, hi].
struct ProbeBox {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t per_dim = 9;
};
std::vector<std::vector<double>> probe_points(std::size_t in_dim, const ProbeBox& box);

struct ValidationReport {
  double max_rel_dy = 0.0;
  double max_rel_dyy = 0.0;
  double max_rel_path_dy = 0.0;
  std::size_t probes = 0;
  bool ok = true;
  std::string detail;
};
// Central differences in y against the advertised derivatives at probe points and
// a few nodes of `driver` (a smooth synthetic driver when null).
ValidationReport validate_bundle(const CoefficientBundle& b, const RoughPath* driver = nullptr,
                                 const ProbeBox& box = {}, double tol = 1e-5);
// Validates eagerly and throws a capability error on mismatch.
BundlePtr register_bundle(CoefficientBundle b, const RoughPath* driver = nullptr, const ProbeBox& box = {});

// Built-in families. Componentwise families need rows == in_dim and act on
// output (c, *) through y_c.
BundlePtr zero_bundle(const BundleShape& s);
BundlePtr constant_bundle(const BundleShape& s, std::vector<double> value);
// g = A y + c with A an m x n row-major matrix.
BundlePtr affine_bundle(const BundleShape& s, std::vector<double> a, std::vector<double> c);
// g_(c,*) = sum_p coef[p] y_c^p
BundlePtr poly_bundle(const BundleShape& s, std::vector<double> coef);
// g_(c,*) = a sin(y_c) + b cos(y_c)
BundlePtr trig_bundle(const BundleShape& s, double a, double b);
// in_dim = rows = 2, d <= 3: direction 0 rotates, directions 1, 2 are bounded nonlinear fields.
BundlePtr rotation_bundle(std::size_t driver_dim);
// g_(c,*) = k sin(w^0_t) y_c: controlled in time through the path, D_t g = 0.
BundlePtr omega_linear_bundle(const BundleShape& s, double k);
// g_(c,*) = k sin(w^0_t) y_c^2.
BundlePtr omega_quadratic_bundle(const BundleShape& s, double k);
// sigma_(c,*) = 1 + k min(sup_{s<=t} |w_s|, clip), y-independent, Gubinelli derivative 0.
BundlePtr adapted_lipschitz_bundle(const BundleShape& s, double k, double clip);
// f_(c,(k,l)) = b_c delta_kl / d, the drift of an SDE written against the bracket.
BundlePtr drift_as_bracket(BundlePtr b, std::size_t driver_dim);
// (outer o inner)(t, y) = outer(t, inner(t, y)); needs inner rows*cols == outer in_dim.
BundlePtr compose_bundles(BundlePtr outer, BundlePtr inner);
BundlePtr sum_bundles(BundlePtr a, BundlePtr b);

// Registry names: zero, const:c[,c...], linear:a, affine:a,c, poly:c0,c1,..., trig:a,b,
// rotation, omega-linear:k, omega-quadratic:k, adapted-lipschitz:k[,clip].
BundlePtr make_bundle(const std::string& spec, const BundleShape& shape);
std::vector<std::string> bundle_names();

// Function-space norms as probe/grid suprema over the box and all time nodes of `driver`.
struct FunctionNorms {
  double sup_k = 0.0;         // ||g||_2 (sup of |g|, |dy g|, |dyy g|)
  double sup_path = 0.0;      // ||d_w g||_1
  double controlled = 0.0;    // sup_y [ |||g(., y)||| + |||d_y g(., y)||| ]
  double norm_2 = 0.0;        // the sum of the above
};
FunctionNorms function_norms(const CoefficientBundle& g, const RoughPathPtr& driver, const ProbeBox& box = {},
                             Stride stride = {});

}  // namespace roughcalc
