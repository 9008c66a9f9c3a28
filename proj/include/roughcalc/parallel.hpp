#pragma once

#include <cstddef>
#include <functional>

namespace roughcalc {

// ROUGHCALC_THREADS when set to a positive integer, else the hardware concurrency.
std::size_t worker_count();

// fn(i) for i in [0, n) on up to worker_count() threads. Each index should write only its own
// output slot; the exception of the lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace roughcalc
