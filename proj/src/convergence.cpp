#include "roughcalc/convergence.hpp"

#include <cmath>
#include <limits>

#include "roughcalc/errors.hpp"

namespace roughcalc {

OrderFit fit_order(const std::vector<double>& scale, const std::vector<double>& err, double exact_floor) {
  require(scale.size() == err.size(), ErrorKind::kDimension, "scale and error lists differ in length");
  OrderFit fit;
  std::vector<double> xs, ys;
  bool all_exact = true;
  for (std::size_t k = 0; k < err.size(); ++k) {
    require(std::isfinite(err[k]) && scale[k] > 0.0, ErrorKind::kInput, "errors must be finite and scales positive");
    if (std::abs(err[k]) > exact_floor) {
      all_exact = false;
      xs.push_back(std::log(scale[k]));
      ys.push_back(std::log(std::abs(err[k])));
    }
  }
  fit.points = xs.size();
  if (all_exact && !err.empty()) {
    fit.exact = true;
    fit.order = std::numeric_limits<double>::infinity();
    return fit;
  }
  require(xs.size() >= 2, ErrorKind::kDegenerateInput, "order fit needs two nonzero errors");
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxx += (xs[k] - mx) * (xs[k] - mx);
    sxy += (xs[k] - mx) * (ys[k] - my);
  }
  require(sxx > 0.0, ErrorKind::kDegenerateInput, "order fit needs distinct scales");
  fit.order = sxy / sxx;
  fit.intercept = my - fit.order * mx;
  return fit;
}

void finalize_report(ConvergenceReport& report) {
  require(report.levels.size() >= 3, ErrorKind::kParameter, "an order needs at least three levels");
  for (std::size_t k = 1; k < report.levels.size(); ++k)
    require(report.levels[k] > report.levels[k - 1], ErrorKind::kParameter, "levels must be strictly increasing");
  report.fit = fit_order(report.scales, report.errors);
  report.pass = report.fit.order >= report.threshold;
}

}  // namespace roughcalc
