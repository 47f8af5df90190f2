#pragma once

#include <cstddef>
#include <functional>

namespace wfuse {

// Kernel thread count (default 1). Kernels split work over disjoint output
// ranges only, so results are bit-identical for every thread count.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over a partition of [0, n) into contiguous chunks.
// Chunk boundaries depend only on n, grain and the thread count.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace wfuse
