#pragma once

#include <cstdint>
#include <functional>

namespace disperse {

/// Worker cap: DISPERSE_THREADS when set, hardware concurrency otherwise.
/// Affects speed only; callers must keep results independent of the count.
int worker_count();

/// Runs fn(i) for i in [0, n).  Results must be written to per-index slots;
/// the partitioning among workers is unspecified.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace disperse
