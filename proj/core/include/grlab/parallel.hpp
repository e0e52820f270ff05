#pragma once

#include <cstddef>
#include <functional>

namespace grlab {

// Worker count from GRLAB_WORKERS (default 1). Results never depend on it:
// callers write into per-index slots and reduce in index order.
std::size_t worker_count();

// Overrides the environment value; 0 restores the default lookup.
void set_worker_count(std::size_t workers);

// Runs fn(i) for i in [0, n). Indices are claimed dynamically by workers; the
// first exception thrown is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace grlab
