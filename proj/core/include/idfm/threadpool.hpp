#pragma once

#include <functional>

namespace idfm {

// Runs fn(i) for every i in [0, n) across at most `workers` threads, in
// contiguous chunks. Callers write results into per-index slots, so the
// outcome is independent of the worker count. The lowest-index exception,
// if any, is rethrown after all workers join.
void parallel_for_items(int n, int workers, const std::function<void(int)>& fn);

// IDFM_THREADS override, otherwise hardware concurrency.
int default_worker_count();

}  // namespace idfm
