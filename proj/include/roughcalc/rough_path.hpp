#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "roughcalc/grid.hpp"

namespace roughcalc {

enum class LiftKind { kGeometric, kIto, kStratonovich, kCustom };
const char* lift_kind_name(LiftKind kind);

// First level omega (dim d) plus per-step second level; (i,j) entry of the
// second level approximates the integral of omega^i_{s,r} d omega^j_r.
class RoughPath {
 public:
  RoughPath(SampledPath omega, TwoParamProcess second, HolderPair pair, LiftKind kind);

  const SampledPath& omega() const { return omega_; }
  const TwoParamProcess& second() const { return second_; }
  const HolderPair& pair() const { return pair_; }
  LiftKind kind() const { return kind_; }
  const Grid& grid() const { return omega_.grid(); }
  std::size_t dim() const { return omega_.dim(); }
  Matrix second_level(std::size_t i, std::size_t k) const { return chen_extend(second_, omega_, i, k); }
  RoughPath with_pair(HolderPair pair) const { return RoughPath(omega_, second_, pair, kind_); }

 private:
  SampledPath omega_;
  TwoParamProcess second_;
  HolderPair pair_;
  LiftKind kind_;
};

using RoughPathPtr = std::shared_ptr<const RoughPath>;

// Symmetric d x d bracket values per node, <w>_{t_0} = 0, stored row-major.
class BracketPath {
 public:
  BracketPath(Grid grid, std::size_t dim, std::vector<double> values);
  // Bracket equal to t*I_d (the Brownian limit), for idealized tests.
  static BracketPath identity_rate(const Grid& grid, std::size_t dim);

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> at(std::size_t i) const { return {values_.data() + i * dim_ * dim_, dim_ * dim_}; }
  Matrix value(std::size_t i) const;
  Matrix increment(std::size_t i, std::size_t k) const;
  const std::vector<double>& data() const { return values_; }
  SampledPath as_path() const { return SampledPath(grid_, dim_ * dim_, values_); }

 private:
  Grid grid_;
  std::size_t dim_;
  std::vector<double> values_;
};

struct SmoothGenerator {
  std::size_t dim = 1;
  std::function<void(double t, std::span<double> out)> value;
  std::function<void(double t, std::span<double> out)> derivative;
};

SmoothGenerator circle_generator();                       // (cos 2 pi t, sin 2 pi t)
SmoothGenerator linear_generator(std::vector<double> v);  // v t
// Smooth d-dimensional test path built from a few sines; seed picks the coefficients.
SmoothGenerator smooth_test_generator(std::size_t dim, std::uint64_t seed);
SmoothGenerator scalar_generator(std::function<double(double)> f, std::function<double(double)> df);

SampledPath sample_generator(const SmoothGenerator& gen, const Grid& grid);
RoughPath lift_smooth(const SmoothGenerator& gen, const Grid& grid, int quad_order = 8,
                      HolderPair pair = HolderPair::default_brownian());
// Canonical lift of the piecewise-linear interpolation of samples (per-step second level = inc inc^T / 2).
RoughPath lift_piecewise_linear(const SampledPath& omega, HolderPair pair = HolderPair::default_brownian());

// Brownian motion sampled at the nodes of a dyadic grid by midpoint bridge
// refinement; paths at different levels from the same seed agree on shared nodes.
SampledPath brownian_path(std::uint64_t seed, std::size_t dim, const Grid& grid);
RoughPath lift_brownian_ito(std::uint64_t seed, std::size_t dim, const Grid& grid, int subdyadic_depth,
                            HolderPair pair = HolderPair::default_brownian());
RoughPath lift_brownian_stratonovich(std::uint64_t seed, std::size_t dim, const Grid& grid, int subdyadic_depth,
                                     HolderPair pair = HolderPair::default_brownian());
// Left-point Foellmer aggregation of a fine path onto a coarser dyadic level.
RoughPath foellmer_lift(const SampledPath& fine, int storage_level, HolderPair pair);

// Coarsens a lift to a lower dyadic level through Chen composition.
RoughPath refine(const RoughPath& rp, int target_level);
RoughPath stratonovich_of(const RoughPath& ito);
// Dilation (lambda omega, lambda^2 second level).
RoughPath dilate(const RoughPath& rp, double lambda);
// Translation by a smooth path phi sampled on the same grid; cross terms use the
// per-step trapezoid rule, so the bracket is preserved exactly.
RoughPath translate(const RoughPath& rp, const SampledPath& phi);

BracketPath bracket(const RoughPath& rp);

RoughPath backward_lift(const RoughPath& rp, std::size_t t0_node);
// Nodes i0..i1 of a lift on Grid::uniform(t_i0, t_i1, i1 - i0); values are not re-based.
RoughPath slice(const RoughPath& rp, std::size_t i0, std::size_t i1);
RoughPath backward_lift_at(const RoughPath& rp, double t0);

// Max Chen defect over node triples on a sub-lattice of at most `samples` nodes.
double chen_defect(const RoughPath& rp, std::size_t samples = 33);

double rough_path_norm(const RoughPath& rp, Stride stride = {});
// ||w - w~||_alpha + ||second - second~||_{2 alpha} on the shared grid.
double rough_path_distance(const RoughPath& a, const RoughPath& b, Stride stride = {});

struct BracketBoundReport {
  double bracket_norm = 0.0;  // ||<w>||_{2 alpha}
  double bound = 0.0;         // ||w||_alpha (2 + ||w||_alpha)
  bool holds = false;
};
BracketBoundReport bracket_bound(const RoughPath& rp, Stride stride = {});
// Difference form: ||<w> - <w~>||_{2a} <= (||w||_a + ||w~||_a + 2) ||w - w~||_a.
BracketBoundReport bracket_difference_bound(const RoughPath& a, const RoughPath& b, Stride stride = {});

struct TrulyRoughReport {
  std::vector<std::size_t> anchors;
  std::vector<int> levels;
  // ratios[(a * directions + v) * levels + l]
  std::vector<double> ratios;
  std::size_t directions = 0;
  double growing_fraction = 0.0;
  bool plausibly_truly_rough = false;
};
TrulyRoughReport truly_rough_diagnostic(const RoughPath& rp, const std::vector<std::vector<double>>& directions,
                                        std::size_t anchors = 16, int min_level = 8);

}  // namespace roughcalc
