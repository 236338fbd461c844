#pragma once

#include <cstddef>
#include <functional>

namespace pumba {

// Worker count: min(hardware threads, PUMBA_THREADS when set). Always >= 1.
size_t worker_count();

// Runs fn(i) for i in [0, n). Splits contiguous ranges across workers when
// the pool has more than one thread; otherwise runs inline. fn must be safe
// to call concurrently on distinct i.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace pumba
