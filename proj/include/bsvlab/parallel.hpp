#pragma once

#include <cstddef>
#include <functional>

namespace bsvlab {

/// Worker count from BSVLAB_WORKERS, else hardware concurrency. Never affects
/// numeric results: every parallel loop writes to index-owned slots and
/// reductions are done in fixed block order by the caller.
std::size_t worker_count();

/// Calls body(begin, end) over contiguous chunks of [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace bsvlab
