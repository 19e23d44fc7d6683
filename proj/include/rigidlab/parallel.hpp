#pragma once

#include <cstddef>
#include <functional>

namespace rigidlab
{

// Worker count used by parallel_for. Defaults to the hardware concurrency,
// capped by the RIGIDLAB_THREADS environment variable when it is set.
unsigned worker_count();

// Overrides worker_count() for the calling process; 0 restores the default.
void set_worker_count(unsigned count);

// Runs body(i) for i in [0, count). Iterations are split into contiguous
// chunks; body must only write to per-index output slots so that results
// do not depend on the number of workers.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace rigidlab
