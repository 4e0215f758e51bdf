#pragma once

#include <cstddef>
#include <functional>

namespace fspnet {

/// Thread budget for parallel fan-out: FSPNET_THREADS when set to a positive
/// integer, otherwise the hardware concurrency.
std::size_t thread_budget();

/// Runs fn(i) for i in [0, n). Work items must be independent; callers keep
/// determinism by writing results into index-addressed slots, so the merge
/// order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fspnet
