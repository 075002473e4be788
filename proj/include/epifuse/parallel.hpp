// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace epifuse {

// Worker count: EPIFUSE_THREADS caps parallelism, 0 or unset means auto.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on a persistent thread pool. Each index writes
// only its own output slot, so results are independent of the thread count;
// reductions over the slots must be done by the caller in index order.
// Calls from inside a worker run serially (no nesting).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace epifuse
