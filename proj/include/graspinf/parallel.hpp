#pragma once

#include <cstddef>
#include <functional>

namespace graspinf {

/// GRASPINF_THREADS if set and positive, else 1.
int thread_budget();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is handed out
/// by index, so callers that write results into slot i get the same output
/// for any thread count. The first exception (lowest index) is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace graspinf
