#pragma once

#include <functional>

namespace cirtf {

// Worker count: CIRTF_THREADS env var if set, else hardware concurrency,
// clamped to [1, 16].
int thread_count();

// Runs fn(i) for i in [0, n) on a persistent pool. Blocks until all tasks
// finish. Tasks must not throw across the boundary; exceptions are captured
// and the first one is rethrown after the batch completes.
//
// Determinism contract: callers must make each task's output depend only on
// its index i (own output slot, own derived RNG stream), never on scheduling.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace cirtf
