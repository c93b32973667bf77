#pragma once

#include <cstddef>
#include <functional>

namespace factual {

std::size_t hardware_threads();

// Runs fn(i) for every i in [0, n) on up to `threads` workers (0 = hardware_threads()).
// Work items must be independent; results are expected to be written per index. If any item
// throws, the exception from the lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace factual
