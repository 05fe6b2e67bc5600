#pragma once

#include <cstddef>
#include <functional>

namespace qsim {

/// Worker count: QSIM_LAB_THREADS when set, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = worker_count()).
/// Results must be written to per-index slots so the outcome is independent
/// of scheduling. Exceptions are rethrown on the caller thread.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace qsim
