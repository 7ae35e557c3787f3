#pragma once

#include <cstddef>
#include <functional>

namespace nfm {

/// Worker count: NFM_THREADS if set and positive, else the hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for every i in [0, n) exactly once on up to worker_count()
/// threads. Work is split into contiguous chunks; callers write results
/// into slot i, so the gather order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nfm
