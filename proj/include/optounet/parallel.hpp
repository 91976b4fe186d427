#pragma once

#include <cstddef>
#include <functional>

namespace optounet {

/// Worker count used by batch-parallel kernels. 1 (the default) runs inline.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs body(i) for i in [0, count), split into contiguous chunks across the
/// configured workers. Callers must only write to per-index state.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace optounet
