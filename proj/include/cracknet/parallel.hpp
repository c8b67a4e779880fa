#pragma once
#include <cstdint>
#include <functional>

namespace cracknet {

// Worker count: CRACKNET_WORKERS env var, else hardware concurrency.
int worker_count();

// Runs fn(begin, end, worker_index) over a static contiguous partition of
// [0, n). Partition depends only on n and the worker count, never on timing,
// so per-worker partial results reduced in index order are bit-stable.
void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn);

}  // namespace cracknet
