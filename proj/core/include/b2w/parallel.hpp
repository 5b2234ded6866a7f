#pragma once

#include <cstddef>
#include <functional>

namespace b2w {

// 0 means "use std::thread::hardware_concurrency()".
unsigned resolve_threads(unsigned requested);

// Calls fn(i) once for every i in [0, count) using up to `threads` workers.
// Work items must be independent; the first exception thrown is rethrown.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace b2w
