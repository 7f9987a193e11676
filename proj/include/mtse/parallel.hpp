#pragma once

#include <functional>

namespace mtse {

// Worker-thread count: explicit value if > 0, else hardware concurrency,
// both capped by the MTSE_THREADS environment variable.
int resolve_thread_count(int explicit_threads);

// Runs fn(0..n-1) across up to `threads` workers. Results must be written to
// per-index slots; the caller merges them in a fixed order afterwards, so
// output never depends on the scheduling. The first exception is rethrown.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace mtse
