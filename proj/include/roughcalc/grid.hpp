#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "roughcalc/errors.hpp"

namespace roughcalc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Uniform grid on [t0, t1]. Dyadic grids carry their level; backward lifts
// produce uniform grids whose step count need not be a power of two.
class Grid {
 public:
  static Grid dyadic(double t0, double t1, int level);
  static Grid uniform(double t0, double t1, std::size_t steps);

  double t0() const { return t0_; }
  double t1() const { return t1_; }
  std::size_t steps() const { return steps_; }
  std::size_t nodes() const { return steps_ + 1; }
  double h() const { return steps_ == 0 ? 0.0 : (t1_ - t0_) / static_cast<double>(steps_); }
  double span() const { return t1_ - t0_; }
  double time(std::size_t i) const;
  std::optional<int> level() const { return level_; }
  int level_or_throw() const;
  // Node index of time t, if t sits on a node up to a relative 1e-9 of h.
  std::optional<std::size_t> node_of(double t) const;

  bool operator==(const Grid& other) const {
    return t0_ == other.t0_ && t1_ == other.t1_ && steps_ == other.steps_;
  }

 private:
  Grid(double t0, double t1, std::size_t steps, std::optional<int> level)
      : t0_(t0), t1_(t1), steps_(steps), level_(level) {}
  double t0_;
  double t1_;
  std::size_t steps_;
  std::optional<int> level_;
};

struct HolderPair {
  double alpha = 0.449;
  double beta = 0.449;

  static HolderPair make(double alpha, double beta);
  static HolderPair default_brownian() { return {0.45 - 1e-3, 0.45 - 1e-3}; }
  void validate() const;
  double young_exponent() const { return 2 * alpha + beta; }
};

// Node values of an R^m-valued path, stored node-major.
class SampledPath {
 public:
  SampledPath(Grid grid, std::size_t dim, std::vector<double> values);
  static SampledPath zeros(const Grid& grid, std::size_t dim);

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }
  std::size_t nodes() const { return grid_.nodes(); }
  std::span<const double> at(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  double operator()(std::size_t i, std::size_t c) const { return values_[i * dim_ + c]; }
  const std::vector<double>& data() const { return values_; }
  Vector increment(std::size_t i, std::size_t k) const;
  Vector value(std::size_t i) const;
  // Component-major copy: entry c*nodes + i.
  std::vector<double> soa() const;
  SampledPath scaled(double factor) const;

 private:
  Grid grid_;
  std::size_t dim_;
  std::vector<double> values_;
};

// Per-step m x m matrices (row-major); arbitrary node pairs come from chen_extend.
class TwoParamProcess {
 public:
  TwoParamProcess(Grid grid, std::size_t dim, std::vector<double> per_step);
  static TwoParamProcess zeros(const Grid& grid, std::size_t dim);

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }
  std::size_t steps() const { return grid_.steps(); }
  std::span<const double> step(std::size_t i) const { return {per_step_.data() + i * dim_ * dim_, dim_ * dim_}; }
  Matrix step_matrix(std::size_t i) const;
  const std::vector<double>& data() const { return per_step_; }

 private:
  Grid grid_;
  std::size_t dim_;
  std::vector<double> per_step_;
};

// Chen-consistent value over [t_i, t_k].
Matrix chen_extend(const TwoParamProcess& p, const SampledPath& companion, std::size_t i, std::size_t k);

// Prefix values A_k = chen_extend(0, k), node-major m*m per node (A_0 = 0).
std::vector<double> chen_prefix(const TwoParamProcess& p, const SampledPath& companion);

SampledPath refine(const SampledPath& path, int target_level);
TwoParamProcess refine(const TwoParamProcess& p, const SampledPath& companion, int target_level);

struct NormResult {
  double value = 0.0;
  std::size_t s = 0;
  std::size_t t = 0;
};

// Pair-scan stride; empty selects default_stride. An explicit stride must be >= 1.
using Stride = std::optional<std::size_t>;

// Default pair-scan stride: 1 up to 1024 steps, then steps/1024 (rounded up).
std::size_t default_stride(const Grid& grid);
std::size_t resolve_stride(const Grid& grid, Stride stride);

// Grid suprema over node pairs of the strided sub-lattice.
NormResult holder_norm_located(const SampledPath& path, double exponent, Stride stride = {});
double holder_norm(const SampledPath& path, double exponent, Stride stride = {});
NormResult two_param_holder_norm(const TwoParamProcess& p, const SampledPath& companion, double exponent,
                                 Stride stride = {});
double sup_norm(const SampledPath& path);

}  // namespace roughcalc
