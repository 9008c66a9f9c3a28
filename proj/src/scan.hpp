#pragma once

#include <functional>
#include <vector>

#include "roughcalc/grid.hpp"

namespace roughcalc::detail {

// sup over node pairs s < t of the strided sub-lattice of
//   | X_t - X_s - G(s) (W_t - W_s) | / (t - s)^exponent,
// with X (xc comps) and W (wc comps) node-major, G(s) an xc x wc row-major matrix
// filled by fill_g(s, g). fill_g may be empty when wc == 0.
NormResult anchored_sup(const Grid& grid, const std::vector<double>& x, std::size_t xc, const std::vector<double>& w,
                        std::size_t wc, const std::function<void(std::size_t, double*)>& fill_g, double exponent,
                        Stride stride);

}  // namespace roughcalc::detail
