#pragma once

// Index-parallel loops. Worker count comes from CIF_FUSION_THREADS (unset or 0 = hardware concurrency).
// Calls made from inside a worker run serially, so nested loops never oversubscribe.

#include <cstddef>
#include <functional>

namespace cif {

std::size_t worker_count();

// Runs fn(i) for i in [0, n). Every index runs even if another throws; the exception of the
// smallest failing index is rethrown, so failures are reported identically for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cif
