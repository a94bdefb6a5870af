#pragma once

#include <cstddef>
#include <functional>

namespace neuropgm {

/// Worker count: NEUROPGM_THREADS if set to a positive integer, otherwise the
/// number of hardware threads.
int thread_count();

/// Runs body(i) for i in [0, n). Each index writes only its own output slot;
/// callers reduce afterwards in index order, so results do not depend on the
/// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace neuropgm
