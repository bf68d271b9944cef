#pragma once

#include <cstddef>
#include <functional>

namespace convexvolt {

/// Worker count: CONVEXVOLT_WORKERS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) over a bounded pool. Rethrows the first exception.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace convexvolt
