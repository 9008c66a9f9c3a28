#pragma once

#include <limits>
#include <string>
#include <vector>

#include "roughcalc/coefficients.hpp"
#include "roughcalc/pathwise.hpp"

namespace roughcalc {

// d theta = g(t, theta) . dw + f(t, theta) : d<w> + h(t, theta) dt on driver nodes
// [start_node, end_node]. Shapes: g is n -> n x d, f is n -> n x (d*d), h is n -> n x 1.
// Coefficients are evaluated with the driver's own node indices.
struct RdeProblem {
  RoughPathPtr driver;
  BundlePtr g;
  BundlePtr f;  // optional
  BundlePtr h;  // optional
  std::vector<double> y0;
  std::size_t start_node = 0;
  std::size_t end_node = std::numeric_limits<std::size_t>::max();

  std::size_t state_dim() const { return y0.size(); }
  std::size_t first() const { return start_node; }
  std::size_t last() const;
  void validate() const;
};

struct PicardWindow {
  std::size_t start = 0;  // driver node
  std::size_t steps = 0;
  std::size_t iterations = 0;        // applications of Phi that still moved the iterate
  std::vector<double> distances;  // d(Phi^{k+1}, Phi^k) per iteration
};

// theta carries D theta = g^*(t, theta), D2 theta from the chain rule, D_t theta =
// sym(f - D2 theta / 2) and rate = h. Its base is the driver restricted to the solved range.
struct RdeSolution {
  SecondOrderControlled theta;
  std::string scheme;
  std::vector<PicardWindow> windows;
  std::size_t window_steps = 0;
  // Largest |D theta - g^*(t, theta)| over nodes.
  double derivative_gap = 0.0;
};

// One-step expansion
//   y += g . w_{i,i+1} + [d_w g + d_y g g^*] : second_{i,i+1} + f : <w>_{i,i+1} + h dt.
// Throws DivergenceError when a component leaves |x| <= 1e12 or turns non-finite.
RdeSolution solve_rde_step(const RdeProblem& p);
// The same scheme, node values only ((last - first + 1) * n), without the second-order data.
std::vector<double> solve_rde_values(const RdeProblem& p);
// Node values for several initial states of one equation (p.y0 fixes the dimension);
// with final_only each row holds the last node only.
std::vector<std::vector<double>> solve_rde_flow(const RdeProblem& p, const std::vector<std::vector<double>>& starts,
                                                bool final_only = false);
// Same, keeping only the listed nodes (absolute indices) of each row.
std::vector<std::vector<double>> solve_rde_flow_at(const RdeProblem& p, const std::vector<std::vector<double>>& starts,
                                                   const std::vector<std::size_t>& keep);

struct PicardOptions {
  double window = 0.0;  // time length; 0 picks one from the first iteration pair
  double tol = 1e-11;
  std::size_t max_iter = 200;
};
// Windowed fixed point of Phi(theta) = y_s + int g(theta) . dw + int f(theta) : d<w> + int h dt,
// restarted per window. Distances are the grid controlled metric on the window.
RdeSolution solve_rde_picard(const RdeProblem& p, const PicardOptions& opt = {});

// Assembles the second-order data of a solution path given node values.
RdeSolution make_solution(const RdeProblem& p, std::vector<double> values, std::string scheme);

// d theta^i = [sum_j a^{ij} theta^j + b^i] . dw + [sum_j lambda^{ij} theta^j + l^i] : d<w>.
// Per node: a [i][j][k] (controlled, derivative [i][j][k][l]), b [i][k] (controlled),
// lambda [i][j][k][l], l [i][k][l].
struct LinearRdeProblem {
  RoughPathPtr driver;
  std::size_t n = 1;
  ControlledPath a;
  ControlledPath b;
  SampledPath lambda;
  SampledPath l;
  std::vector<double> y0;

  static LinearRdeProblem constant(RoughPathPtr driver, std::size_t n, const std::vector<double>& a,
                                   const std::vector<double>& b, const std::vector<double>& lambda,
                                   const std::vector<double>& l, std::vector<double> y0);
  void validate() const;
  // The same equation as an RdeProblem (g = a y + b, f = lambda y + l).
  RdeProblem as_rde() const;
};

// Explicit solution through the integrating factor
//   Gamma = exp(-int a . dw + int [a a^* / 2 - lambda] : d<w>),
//   theta = Gamma^{-1} [theta_0 + int Gamma b . dw + int Gamma (l - a b^*) : d<w>].
// Throws an overflow error when |log Gamma| > 700.
RdeSolution solve_linear_1d(const LinearRdeProblem& p);

struct RiccatiOptions {
  std::size_t initial_window_steps = 0;  // 0 = steps / 8
  std::size_t min_window_steps = 4;
};
struct RiccatiDiagnostics {
  std::vector<std::size_t> window_starts;
  std::vector<std::size_t> window_steps;
  std::size_t halvings = 0;
  double max_gamma = 0.0;
  double roundtrip_gap = 0.0;  // max |theta_bar - theta^n - sum Gamma^i theta^i|
};
// Reduction to scalar equations: per window, the Riccati flow Gamma (started at 0) turns
// theta_bar = theta^n + sum_i Gamma^i theta^i into a scalar linear equation; the first
// n-1 components solve a linear system of size n-1, recursively.
RdeSolution solve_linear_riccati(const LinearRdeProblem& p, const RiccatiOptions& opt = {},
                                 RiccatiDiagnostics* diag = nullptr);

struct RdeStabilityReport {
  double lhs = 0.0;         // d(theta, theta~) + |theta_0 - theta~_0|
  double data_term = 0.0;   // coefficient distance + ||dw||_alpha + |dy0|
  double ratio = 0.0;
};
// Coefficient distances are probe-box suprema over the union range of both solutions.
RdeStabilityReport rde_stability(const RdeProblem& p, const RdeProblem& q, const RdeSolution& sp,
                                 const RdeSolution& sq);

struct HomotopyReport {
  std::vector<double> eps;
  std::vector<RdeStabilityReport> points;
  // lhs strictly decreases along the sweep (eps given largest first) and the ratio
  // lhs / data_term stays within a factor 10 across the sweep
  bool pass = false;
};
HomotopyReport rde_stability_homotopy(const RdeProblem& p, const std::function<RdeProblem(double)>& perturbed,
                                      const std::vector<double>& eps);

}  // namespace roughcalc
