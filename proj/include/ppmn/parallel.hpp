#pragma once

#include <cstddef>
#include <functional>

namespace ppmn {

// Caps worker threads for all kernels. 0 restores the runtime default.
void set_num_threads(int threads);
int num_threads();

// Runs body(i) for i in [0, count). Iterations must write disjoint memory;
// results are then independent of the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace ppmn
