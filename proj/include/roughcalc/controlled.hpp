#pragma once

#include <functional>
#include <vector>

#include "roughcalc/grid.hpp"
#include "roughcalc/rough_path.hpp"

namespace roughcalc {

// A path theta with values in R^{rows x cols} (row-major, m = rows*cols) and a
// Gubinelli derivative stored per node as an m x d matrix: entry [v][k] is the
// derivative of value component v in driver direction k. For integrands
// (cols = d) row l of the derivative block of output component c sits at
// [(c*d + l)][k]. Remainders are derived on demand.
class ControlledPath {
 public:
  ControlledPath(RoughPathPtr base, std::size_t rows, std::size_t cols, std::vector<double> values,
                 std::vector<double> gubinelli);

  // theta = w, derivative = I_d.
  static ControlledPath of_driver(RoughPathPtr base);
  static ControlledPath constant(RoughPathPtr base, std::size_t rows, std::size_t cols, std::vector<double> value);
  // theta_t = F(t, w_t) with derivative dF/dw; fn fills value (m) and jacobian (m x d).
  using PointFn = std::function<void(double t, std::span<const double> w, std::span<double> value,
                                     std::span<double> jacobian)>;
  static ControlledPath of_function(RoughPathPtr base, std::size_t rows, std::size_t cols, const PointFn& fn);

  const RoughPathPtr& base() const { return base_; }
  const Grid& grid() const { return base_->grid(); }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  std::size_t driver_dim() const { return base_->dim(); }
  const SampledPath& theta() const { return theta_; }
  const SampledPath& gubinelli() const { return gub_; }
  std::span<const double> value(std::size_t i) const { return theta_.at(i); }
  std::span<const double> derivative(std::size_t i) const { return gub_.at(i); }

  // R_{s,t} = theta_{s,t} - D theta_s w_{s,t}.
  Vector remainder(std::size_t s, std::size_t t) const;

  // Values at the retained nodes of a coarser base on the same interval.
  ControlledPath restricted(RoughPathPtr coarse) const;
  ControlledPath with_base(RoughPathPtr base) const;
  ControlledPath scaled(double factor) const;
  ControlledPath plus(const ControlledPath& other) const;

 private:
  RoughPathPtr base_;
  std::size_t rows_;
  std::size_t cols_;
  SampledPath theta_;
  SampledPath gub_;
};

struct ControlledNorms {
  double gub_norm_beta = 0.0;
  double remainder_norm = 0.0;
  double seminorm = 0.0;
  double full = 0.0;
};
ControlledNorms controlled_norms(const ControlledPath& p, Stride stride = {});

struct ControlledDistance {
  double d = 0.0;     // ||D a - D b||_beta + ||R^a - R^b||_{alpha+beta}
  double full = 0.0;  // d + |D a_0 - D b_0|
};
// Exponents come from a's base.
ControlledDistance controlled_distance(const ControlledPath& a, const ControlledPath& b, Stride stride = {});

// Compensated sum on the storage grid:
//   Theta_{t_k} = start + sum_{i<k} [theta_i . w_{i,i+1} + D theta_i : second_{i,i+1}]
// with the area pairing of pairing::area. Output derivative is theta^*.
ControlledPath rough_integral(const ControlledPath& integrand, std::vector<double> start = {});

// Per anchor s: |Theta_{s,s+span} - theta_s . w - D theta_s : second| measured on the
// grid, and the local bound C ||w||_alpha ||theta||_{w,a} (span h)^{2a+b} with the
// sewing constant C = 1/(1 - 2^{1-(2a+b)}).
struct LocalErrorReport {
  std::size_t span = 0;
  std::vector<double> measured;
  double bound = 0.0;
  double max_measured = 0.0;
};
LocalErrorReport local_errors(const ControlledPath& integrand, std::size_t span, Stride stride = {});

// Left-point sum of theta : d<w>; theta has e*d*d components per node.
SampledPath young_integral(const SampledPath& theta, const BracketPath& br, std::size_t e);

// Reflected integrand: value theta_{K-j}, derivative -D theta_{K-j}, on backward_lift(base, t0).
ControlledPath backward_integrand(const ControlledPath& p, std::size_t t0_node);

struct BackwardCheckReport {
  std::size_t t0_node = 0;
  // max over node windows [s,t] within [0,t0] of the forward/backward integral mismatch
  double max_discrepancy = 0.0;
};
BackwardCheckReport backward_integral_check(const ControlledPath& integrand, std::size_t t0_node);

struct BackwardDecayReport {
  std::vector<int> levels;
  std::vector<double> discrepancies;
  double order = 0.0;
  bool exact = false;
};
// Restricts a fine integrand to each level (fine base coarsened by Chen) and runs
// backward_integral_check at time t0 (must be a node of every level).
BackwardDecayReport backward_integral_decay(const ControlledPath& fine, double t0, const std::vector<int>& levels);

struct StabilityReport {
  double lhs = 0.0;  // d(Theta, Theta~)
  double rhs = 0.0;  // T^{a-b}[|D b_0| |dw| + |w| |D a_0 - D b_0|] + C T^a [|dw| + d(a, b)]
  double ratio = 0.0;
};
StabilityReport stability_metrics(const ControlledPath& a, const ControlledPath& b, const ControlledPath& int_a,
                                  const ControlledPath& int_b, double constant = 1.0, Stride stride = {});

}  // namespace roughcalc
