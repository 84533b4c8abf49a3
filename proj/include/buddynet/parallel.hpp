#pragma once

#include <cstddef>
#include <functional>

namespace buddynet {

// Worker count: BUDDYNET_THREADS when set to a positive integer, otherwise
// the hardware concurrency (0 or unset means auto).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) over up to worker_count() threads. Each index is
// processed exactly once; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace buddynet
