#pragma once

#include <cstddef>
#include <functional>

namespace tscopf {

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Every index runs
/// even if some throw; the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace tscopf
