#pragma once

#include <vector>

#include "roughcalc/coefficients.hpp"
#include "roughcalc/controlled.hpp"
#include "roughcalc/convergence.hpp"

namespace roughcalc {

// A controlled path with second-order data:
//   d theta = D theta . dw + [D_t theta + 1/2 D2 theta] : d<w> + rate dt.
// Per node and value component v: second [v][k][l] is the derivative in direction l
// of D theta [v][k]; time [v][k][l] is D_t theta, kept symmetric; rate [v] is an
// optional dt coefficient (zero unless set).
class SecondOrderControlled {
 public:
  SecondOrderControlled(ControlledPath first, std::vector<double> second, std::vector<double> time,
                        std::vector<double> rate = {});

  // theta written as d theta = a . dw + b : d<w>, with a = D theta and da = D2 theta;
  // D_t theta = sym(b - da / 2).
  static SecondOrderControlled from_ab(ControlledPath first, std::vector<double> second, const std::vector<double>& b);
  // theta_t = F(w_t): fn fills value (m), jacobian (m x d) and hessian (m x d x d); D_t theta = 0.
  using PointFn2 = std::function<void(std::span<const double> w, std::span<double> value, std::span<double> jacobian,
                                      std::span<double> hessian)>;
  static SecondOrderControlled of_function(RoughPathPtr base, std::size_t rows, std::size_t cols, const PointFn2& fn);
  static SecondOrderControlled of_driver(RoughPathPtr base);

  const ControlledPath& first() const { return first_; }
  const RoughPathPtr& base() const { return first_.base(); }
  const Grid& grid() const { return first_.grid(); }
  std::size_t size() const { return first_.size(); }
  std::size_t driver_dim() const { return first_.driver_dim(); }
  std::span<const double> second(std::size_t i) const;
  std::span<const double> time_part(std::size_t i) const;
  std::span<const double> rate(std::size_t i) const;
  bool has_rate() const { return !rate_.empty(); }
  // Trace of D_t theta per value component.
  std::vector<double> time_trace(std::size_t i) const;
  double max_time_asymmetry() const;

  SecondOrderControlled plus(const SecondOrderControlled& other) const;
  SecondOrderControlled restricted(RoughPathPtr coarse) const;

 private:
  ControlledPath first_;
  std::vector<double> second_;
  std::vector<double> time_;
  std::vector<double> rate_;
};

// eta_t = g(t, theta_t), D eta = path g + d_y g D theta. Needs a C12-or-better tag.
ControlledPath compose(const CoefficientBundle& g, const ControlledPath& theta);
// Adds D2 eta and D_t eta = sym(D_t g + d_y g D_t theta). Needs D_t g, d_ww g and d_y d_w g.
SecondOrderControlled compose_second_order(const CoefficientBundle& g, const SecondOrderControlled& theta);

// Rebuilds t -> g(t, theta_t) from g(t_0, theta_0) by integrating
//   [h + d_y g a] . dw + [f + d_y g b + 1/2 d_yy g [a, a] + d_y h a^*] : d<w> + rate dt
// with h = path g, f = D_t g + 1/2 d_ww g, a = D theta, b = D_t theta + 1/2 D2 theta.
ControlledPath ito_ventzell_apply(const CoefficientBundle& g, const SecondOrderControlled& theta);
// The same with g = identity: integrates theta's own dynamics.
ControlledPath ito_reconstruction(const SecondOrderControlled& theta);

// RMS over anchors of a two-point quantity at dyadic lags 2^j steps, j = 0..max_lag_log2.
struct LagProfile {
  std::vector<double> lags;  // in time units
  std::vector<double> rms;
  OrderFit fit;
};

// Taylor residual
//   theta_{s,t} - D theta_s w_{s,t} - 1/2 D2 theta_s : [w w^* + second^* - second]_{s,t}
//   - D_t theta_s : <w>_{s,t} - rate_s (t - s).
struct TaylorReport {
  LagProfile profile;
  double max_abs = 0.0;
  double threshold = 0.0;  // 2a + b - 0.1
  bool pass = false;
};
TaylorReport taylor_residual(const SecondOrderControlled& theta, int max_lag_log2 = 6, Stride stride = {});
// Variant for symmetric D2 theta: drops the area term and keeps 1/2 D2 theta : w w^*.
TaylorReport taylor_residual_symmetric(const SecondOrderControlled& theta, int max_lag_log2 = 6, Stride stride = {});

// Remainder R_{s,t} = theta_{s,t} - D theta_s w_{s,t} across lags; PASS if order >= a + b - 0.05.
struct RemainderReport {
  LagProfile profile;
  double threshold = 0.0;
  bool pass = false;
};
RemainderReport remainder_order(const ControlledPath& theta, int max_lag_log2 = 6, Stride stride = {});

struct CommutationReport {
  double path_gap = 0.0;  // d_w d_y g vs d_y d_w g, relative
  double time_gap = 0.0;  // D_t d_y g vs d_y D_t g, relative
  std::size_t probes = 0;
  bool used_fd_path = false;
  bool used_fd_time = false;
  bool pass = false;
};
// Orderings not supplied by the bundle come from central differences in y.
CommutationReport commutation_check(const CoefficientBundle& g, const RoughPath* driver = nullptr,
                                    const ProbeBox& box = {}, double tol = 1e-5);

struct ChainBoundReport {
  double eta_norm = 0.0;  // |||eta|||
  double g_norm = 0.0;    // ||g||_{2,w,a}
  double ratio = 0.0;
};
ChainBoundReport chain_bound_ratio(const CoefficientBundle& g, const ControlledPath& theta, Stride stride = {});

}  // namespace roughcalc
