#pragma once

#include <cstdint>
#include <functional>

namespace fnat {

// Splits [0,n) into `workers` contiguous chunks and runs fn(chunk, lo, hi) on
// its own thread per non-empty chunk. The partition depends only on n and
// workers, so chunk-ordered reductions stay deterministic.
void parallel_chunks(int64_t n, int workers,
                     const std::function<void(int chunk, int64_t lo, int64_t hi)>& fn);

}  // namespace fnat
