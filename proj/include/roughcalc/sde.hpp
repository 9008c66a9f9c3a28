#pragma once

#include <cstdint>
#include <vector>

#include "roughcalc/convergence.hpp"
#include "roughcalc/rde.hpp"

namespace roughcalc {

// X = x0 + int sigma(t, X, w) . d(w, Ito lift) + int b(t, X, w) (I_d / d) : d<w>.
// sigma: n -> n x d, b: n -> n x 1 (optional). The driver dimension is sigma->driver_dim.
struct SdeProblem {
  BundlePtr sigma;
  BundlePtr b;
  std::vector<double> x0;

  std::size_t state_dim() const { return x0.size(); }
  std::size_t driver_dim() const { return sigma->driver_dim; }
  void validate() const;
};

struct SdeOptions {
  // Drivers are Chen coarsenings of the left-point lift of the path sampled at this
  // level, so solutions at different levels from one seed see the same path.
  int fine_level = 20;
  bool picard = false;
  HolderPair pair = HolderPair::default_brownian();
};

// Per-path membership diagnostics for the typical-path set; they flag, never reject.
struct SamplePathDiagnostics {
  double rough_norm = 0.0;    // ||w||_alpha + ||second||_{2 alpha}
  double bracket_gap = 0.0;   // sup_t |<w>_t - (t - t0) I_d|
  bool flagged = false;       // bracket_gap > 0.05 T or a non-finite norm
};
SamplePathDiagnostics sample_path_diagnostics(const RoughPath& rp);

struct SdeResult {
  RoughPathPtr driver;
  RdeSolution solution;
  SamplePathDiagnostics diagnostics;
};

RoughPathPtr sde_driver(std::uint64_t seed, std::size_t d, const Grid& grid, const SdeOptions& opt = {});
RdeProblem sde_as_rde(const SdeProblem& p, RoughPathPtr driver);
SdeResult solve_sde_pathwise(std::uint64_t seed, const SdeProblem& p, const Grid& grid, const SdeOptions& opt = {});
// Same equation on a given driver (any lift kind).
RdeSolution solve_sde_on(const SdeProblem& p, RoughPathPtr driver, bool picard = false);

// Euler-Maruyama on the sampled Brownian path: X += sigma(t_j, X_j, w|[0,t_j]) dw_j + b dt.
// Node values, n per node.
SampledPath euler_maruyama(std::uint64_t seed, const SdeProblem& p, const Grid& grid);

// sup over the coarse nodes of |X - Y| / sup |Y|, Y sampled on a finer dyadic grid of the same interval.
double relative_sup_gap(const SampledPath& coarse, const SampledPath& fine);

// The Ito form of dX = sigma o dw + b dt: drift b + (1/2) Trace(d_w sigma + d_y sigma sigma^*),
// with Trace over the driver directions of the (k, k) entries.
struct ItoForm {
  BundlePtr sigma;
  BundlePtr b;
};
ItoForm stratonovich_to_ito(const BundlePtr& sigma, const BundlePtr& b);

struct ContinuityRow {
  double scale = 0.0;              // eps 2^{-k}
  double driver_distance = 0.0;    // rough_path_distance(w^k, w)
  double solution_distance = 0.0;  // controlled distance of X(w^k) and X(w), plus sup |X^k - X|
  double ratio = 0.0;
};
struct ContinuityReport {
  std::vector<ContinuityRow> rows;
  double observed_c = 0.0;  // max ratio
  // both columns decrease along the rows (solution distances within 5 % noise)
  bool monotone = false;
  bool pass = false;
};
// Perturbs the driver by eps 2^{-k} phi, k = 0..scales-1, with phi a smooth bump
// vanishing at both ends; the perturbed lift keeps the bracket of the original.
ContinuityReport omega_continuity_probe(const SdeProblem& p, std::uint64_t seed, const Grid& grid, double eps,
                                        std::size_t scales = 4, const SdeOptions& opt = {});

// Rough integrals of theta = F(t, w_t) (rows x d, derivative from F) against the Ito lift and the
// Stratonovich lift at each level, compared with the left-point and trapezoid sums of the same
// integrand on the sub-grid of level + depth (one Brownian path for all levels). Gaps are sup over
// the coarse nodes. The Stratonovich lift adds h/2 I per step, so its gap also carries the
// sub-grid quadratic-variation error and the sub-grid has to refine with the level.
struct IntegralComparisonReport {
  std::vector<int> levels;
  std::vector<double> ito_gap;
  std::vector<double> strat_gap;
  OrderFit ito_fit;
  OrderFit strat_fit;
};
IntegralComparisonReport pathwise_vs_ito_integral(std::uint64_t seed, std::size_t d, std::size_t rows,
                                                  const ControlledPath::PointFn& theta, const std::vector<int>& levels,
                                                  int depth);

// Empirical modulus C of |sigma(t, x, w) - sigma(t~, x, w~)| <= C [sqrt(t~ - t) + sup |w_{s^t} - w~_{s^t~}|]
// over node pairs of `a` (w~ = w) and across the paths a and b at equal nodes.
struct AdaptedModulusReport {
  double constant = 0.0;
  std::size_t pairs = 0;
};
AdaptedModulusReport adapted_modulus(const CoefficientBundle& sigma, const RoughPath& a, const RoughPath& b,
                                     const ProbeBox& box = {-1.0, 1.0, 3});

}  // namespace roughcalc
