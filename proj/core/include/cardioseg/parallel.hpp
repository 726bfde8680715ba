#pragma once

#include <cstddef>
#include <functional>

namespace cardioseg {

// Process-wide worker count for kernels that split work over independent
// outputs. 1 is the deterministic reference; every kernel that uses
// parallel_for writes disjoint outputs, so results do not depend on it.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs fn(i) for i in [0, count). Blocks until all calls return.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace cardioseg
