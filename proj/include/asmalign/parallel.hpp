#pragma once

#include <cstddef>
#include <functional>

namespace asmalign {

// Runs fn(i) for i in [0, n) on at most max_in_flight worker threads.
// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t max_in_flight, const std::function<void(std::size_t)>& fn);

}  // namespace asmalign
