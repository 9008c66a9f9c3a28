#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "roughcalc/convergence.hpp"
#include "roughcalc/rde.hpp"

namespace roughcalc {

// Uniform lattice lo + i step, i = 0..n-1.
struct Lattice {
  double lo = 0.0;
  double step = 1.0;
  std::size_t n = 0;

  // [a, b] cut into `cells` cells.
  static Lattice span(double a, double b, std::size_t cells);
  // [a, b] at spacing `step` (widened to whole cells), plus `pad` cells on both sides.
  static Lattice padded(double a, double b, double step, std::size_t pad = 2);

  double at(std::size_t i) const { return lo + step * static_cast<double>(i); }
  double hi() const { return at(n - 1); }
  bool contains(double x) const;
  std::vector<double> points() const;
};

// 4-point Lagrange interpolation of lattice values; kExtrapolation outside [lo, hi].
double interpolate(const Lattice& x, std::span<const double> values, double at);
// First or second derivative by 4th-order differences: centered inside, one-sided on the
// two cells next to each end. Needs n >= 5.
std::vector<double> differentiate(const Lattice& x, std::span<const double> values, int order);

// ---------------------------------------------------------------------------------------------
// Parameterized equations: du(x) = g(x, u) . dw + f(x, u) : d<w>, u_0 = u0(x), one per anchor.
// g and f take (x, u) with x first (in_dim 1 + n, rows n, cols d resp. d*d). The x-derivative
// v = d_x u solves v = d_x u0 + int [d_x g + d_u g v] . dw + int [d_x f + d_u f v] : d<w>.
struct ParameterizedRde {
  RoughPathPtr driver;
  BundlePtr g;
  BundlePtr f;  // optional
  std::size_t n = 1;
  std::function<void(double x, std::span<double> u0, std::span<double> du0)> initial;
};

struct AnchorSolution {
  double x = 0.0;
  bool ok = false;
  std::string error;
  std::vector<double> u;  // node-major, n per node
  std::vector<double> v;
  double fd_gap = 0.0;  // sup over nodes of |(u(x + dx) - u(x - dx)) / (2 dx) - v|
};

struct ParameterizedSolution {
  std::vector<AnchorSolution> anchors;
  std::size_t failures = 0;
  double max_fd_gap = 0.0;
};

// The joint system (x, u, v) of one anchor: x' = 0, u' = g(x, u), v' = d_x g + d_u g v.
RdeProblem variational_system(const ParameterizedRde& p, double x);
// Failures are reported per anchor. fd_step = 0 skips the finite-difference cross-check.
ParameterizedSolution solve_parameterized_rde(const ParameterizedRde& p, const std::vector<double>& x_grid,
                                              double fd_step = 1e-3);

// ---------------------------------------------------------------------------------------------
// Path-free g(x, y) with one column per driver direction, from its value and partials.
struct XyPartials {
  double v = 0.0, x = 0.0, y = 0.0, xx = 0.0, xy = 0.0, yy = 0.0;
};
BundlePtr xy_bundle(std::string name, std::size_t d, std::function<XyPartials(double x, double y, std::size_t k)> fn);
// zero (null), affine:ax,ay,c (ax x + ay y + c), linear:a (a y), xlinear:a,b ((a + b sin x) y),
// sin:a (a sin(x + y)). The same expression in every driver direction.
BundlePtr make_xy_bundle(const std::string& spec, std::size_t d);

// Characteristics of du = [d_x u sigma(x) + g(x, u)] . dw + ...: sigma is 1 -> 1 x d and
// path-free, g is (x, y) -> 1 x d and path-free, null for g = 0.
struct CharacteristicOptions {
  Lattice x;                   // map anchors
  Lattice y;                   // used when g is present
  std::size_t t0_count = 33;   // evaluation times, both ends included
  bool paired = true;          // also tabulate one node after each evaluation time
  bool track_halving = true;   // tabulate phi at the midpoints to measure the time-interpolation error
  std::size_t identity_anchors = 9;
};

struct CharacteristicFlow {
  RoughPathPtr driver;
  Lattice x;
  std::vector<double> theta;   // [node][i] = theta^{x_i}_{t_node}
  std::vector<double> dtheta;  // [node][i] = d_x theta from the variational equation
  // max |backward theta^{t0, theta^x_t0}_t - theta^x_{t0 - t}| over sampled (t0, x, t); with g
  // also the eta pair.
  double inverse_gap = 0.0;
  std::size_t failures = 0;

  double theta_at(std::size_t node, double x) const;
};

enum class MapPart { kValue, kX, kY, kXX, kXY, kYY };

class TransformMaps {
 public:
  struct Data;
  explicit TransformMaps(std::shared_ptr<const Data> data) : data_(std::move(data)) {}

  const std::vector<std::size_t>& nodes() const;     // tabulated driver nodes, sorted
  const std::vector<std::size_t>& anchors() const;   // the t0 sub-lattice (subset of nodes)
  const Lattice& x() const;
  const Lattice& y() const;
  bool has_g() const;
  const CharacteristicFlow& flow() const;
  const RoughPath& driver() const;

  // Times between tabulated nodes interpolate linearly; x, y use 4-point interpolation of the
  // value and difference tables. Outside the lattices: kExtrapolation.
  double phi(double t, double x, MapPart part = MapPart::kValue) const;
  double zeta(double t, double x, double y, MapPart part = MapPart::kValue) const;
  double psi(double t, double x, double y, MapPart part = MapPart::kValue) const;
  double theta(std::size_t node, double x) const { return flow().theta_at(node, x); }
  // Tabulated values at lattice points.
  double phi_at(std::size_t k, std::size_t i) const;
  double zeta_at(std::size_t k, std::size_t i, std::size_t j) const;
  double psi_at(std::size_t k, std::size_t i, std::size_t j) const;

  // max |phi(t0, theta^x_t0) - x| over anchors t0 and lattice x with theta^x_t0 inside the box.
  double roundtrip_gap() const;
  // max |zeta(t0, theta^x_t0, psi(t0, x, y)) - y| over anchors, lattice x and y.
  double pair_gap() const;
  // max |phi(midpoint) - linear interpolation of the neighbouring anchors| (0 when not tracked).
  double time_interp_gap() const;

 private:
  std::shared_ptr<const Data> data_;
};

struct Characteristics {
  std::shared_ptr<const CharacteristicFlow> flow;
  std::shared_ptr<const TransformMaps> maps;
};

Characteristics build_characteristics(const BundlePtr& sigma, const BundlePtr& g, const RoughPathPtr& driver,
                                      const CharacteristicOptions& opt);

// One-step residuals of the equations satisfied by phi and psi,
//   phi(t, x) = x + int d_x phi sigma . dw + int [1/2 d_xx phi [sigma, sigma] + d_x phi d_x sigma sigma^*] : d<w>,
//   psi(t, x, y) = y - int d_y psi g^ . dw + int [1/2 d_yy psi [g^, g^] + d_y psi d_y g^ g^^*] : d<w>,
// with g^(t, x, y) = g(theta^x_t, y), over each tabulated pair (t0, t0 + 1) and interior lattice points.
struct FlowResidualReport {
  double phi_residual = 0.0;
  double psi_residual = 0.0;
  std::size_t pairs = 0;
};
FlowResidualReport verify_flow_rdes(const TransformMaps& maps, const BundlePtr& sigma, const BundlePtr& g);

struct FlowResidualStudy {
  std::vector<int> levels;
  std::vector<double> phi_residual;
  std::vector<double> psi_residual;
  OrderFit phi_fit;
  OrderFit psi_fit;
  double threshold = 0.0;  // 2 alpha + beta - 0.15
  bool pass = false;
};
FlowResidualStudy flow_rde_refinement(const BundlePtr& sigma, const BundlePtr& g,
                                      const std::function<RoughPathPtr(int level)>& driver,
                                      const std::vector<int>& levels, const CharacteristicOptions& opt,
                                      HolderPair pair = HolderPair::default_brownian());

// ---------------------------------------------------------------------------------------------
// Right sides f(t, x, y, z, gamma) with values in d x d, paired with d<w>.
struct PdePoint {
  double t = 0.0;
  std::size_t node = 0;
  double x = 0.0, y = 0.0, z = 0.0, gamma = 0.0;
};
using PdeRhs = std::function<void(const PdePoint&, std::span<double> out)>;

// F = f I_d / d.
PdeRhs spde_rhs(std::function<double(const PdePoint&)> f, std::size_t d);
// zero, heat:k (k gamma), source:c, linear:a (a y), burgers:k,c (k gamma - c y z).
PdeRhs make_rhs(const std::string& spec, std::size_t d);
// gauss:s (exp(-x^2 / (2 s))), sin:k (sin k x), tanh:s (tanh(x / s)).
std::function<double(double)> make_initial(const std::string& spec);

// gamma^ as displayed, with d_yx sigma = 0 for a sigma of x alone:
//   kLiteral:   z_xx + [z_xy + d_yx sigma] z phi_x + z_yy phi_x^4 + z_y [gamma phi_x^2 + z phi_xx]
//   kChainRule: z_xx + 2 z_xy z phi_x + z_yy z^2 phi_x^2 + z_y [gamma phi_x^2 + z phi_xx]
// (zeta derivatives written z_.., taken at (t, theta^x_t, y)). They agree when zeta is y.
enum class GammaForm { kLiteral, kChainRule };

class TransformedRhs {
 public:
  TransformedRhs(std::shared_ptr<const TransformMaps> maps, BundlePtr sigma, BundlePtr g, PdeRhs f,
                 GammaForm form);

  std::size_t dim() const { return d_; }
  GammaForm form() const { return form_; }
  double y_hat(const PdePoint& p) const;
  double z_hat(const PdePoint& p) const;
  double gamma_hat(const PdePoint& p) const;
  double gamma_literal(const PdePoint& p) const;
  double gamma_chain_rule(const PdePoint& p) const;
  // literal minus chain rule, split into the bracket [z_xy + d_yx sigma] term and the z_yy term
  struct Flag {
    double bracket = 0.0;
    double yy = 0.0;
  };
  Flag flagged(const PdePoint& p) const;

  void operator()(const PdePoint& p, std::span<double> out) const;
  PdeRhs as_rhs() const;

 private:
  struct Frame;
  struct Cache;  // x-only part of the frame for the current node; not thread-safe
  Frame frame(const PdePoint& p) const;
  double gamma_from(const Frame& fr, const PdePoint& p, GammaForm form) const;

  std::shared_ptr<const TransformMaps> maps_;
  BundlePtr sigma_, g_;
  PdeRhs f_;
  GammaForm form_;
  std::size_t d_;
  std::shared_ptr<Cache> cache_;
};

TransformedRhs transform_rhs(PdeRhs f, std::shared_ptr<const TransformMaps> maps, BundlePtr sigma, BundlePtr g,
                             GammaForm form = GammaForm::kLiteral);

// dv = fhat(t, x, v, v_x, v_xx) : d<w> on a 1-d lattice, explicit in time with centered
// differences; the two end increments follow by linear extrapolation of the interior ones.
struct PdeOptions {
  double cfl = 0.5;                 // bound on d inc / d gamma / dx^2 per substep
  std::size_t max_halvings = 12;
  std::size_t probe_stride = 16;    // lattice stride of the per-step gamma probes
  std::vector<std::size_t> keep;    // nodes whose rows are stored; empty keeps all
};

struct PdeSolution {
  Lattice x;
  std::vector<std::size_t> nodes;
  std::vector<double> v;  // [row][j]
  std::size_t max_substeps = 1;
  double max_mu = 0.0;
  bool gamma_dependent = false;

  std::span<const double> row_of(std::size_t node) const;
  double at(std::size_t node, double x) const;
};

PdeSolution solve_transformed_pde(const PdeRhs& fhat, const std::function<double(double)>& v0,
                                  const BracketPath& bracket, const Lattice& x, const PdeOptions& opt = {});

// ---------------------------------------------------------------------------------------------
// u_t = u0 + int [d_x u sigma + g(x, u)] . dw + int f(x, u, d_x u, d_xx u) : d<w>.
struct RpdeProblem {
  std::function<double(double)> u0;
  BundlePtr sigma;
  BundlePtr g;  // null for g = 0
  PdeRhs f;
  RoughPathPtr driver;
};

struct RpdeOptions {
  double x_lo = -1.0, x_hi = 1.0;  // report box
  double dx = 1.0 / 256;           // PDE and report spacing
  double margin = 1.0;             // PDE box = report box + margin, map box = report box + 2 margin
  double map_dx = 1.0 / 32;
  double y_lo = -2.0, y_hi = 2.0, map_dy = 1.0 / 16;  // y lattice (with g)
  std::size_t t0_count = 33;
  bool track_halving = true;
  GammaForm gamma = GammaForm::kLiteral;
  PdeOptions pde;
};

struct RpdeReport {
  Lattice x;                        // report lattice
  std::vector<std::size_t> nodes;   // the t0 sub-lattice
  std::vector<double> u;            // [k][j]
  std::vector<double> v;            // [k][j], v(t, x) on the report lattice
  double residual = 0.0;            // max one-step residual of the integral form
  double flagged_bracket = 0.0;     // max |literal - chain rule| of the [z_xy + d_yx sigma] term
  double flagged_yy = 0.0;          // same for the z_yy term
  double roundtrip_gap = 0.0;
  double inverse_gap = 0.0;
  double pair_gap = 0.0;
  double time_interp_gap = 0.0;
  std::size_t max_substeps = 1;

  double u_at(std::size_t k, std::size_t j) const { return u[k * x.n + j]; }
};

RpdeReport rpde_roundtrip(const RpdeProblem& p, const RpdeOptions& opt = {});

}  // namespace roughcalc
