#pragma once

#include <string>
#include <vector>

namespace roughcalc {

// Least-squares slope of log(err) against log(scale). When every error sits at
// or below `exact_floor` the quantity is exact on the grid and the order is +inf.
struct OrderFit {
  double order = 0.0;
  double intercept = 0.0;
  bool exact = false;
  std::size_t points = 0;
};
OrderFit fit_order(const std::vector<double>& scale, const std::vector<double>& err, double exact_floor = 1e-14);

struct ConvergenceReport {
  std::string study;
  std::vector<int> levels;
  std::vector<double> scales;
  std::vector<double> errors;
  OrderFit fit;
  double threshold = 0.0;
  bool pass = false;
  std::string note;
};

// Fills fit and pass; needs at least three levels.
void finalize_report(ConvergenceReport& report);

}  // namespace roughcalc
