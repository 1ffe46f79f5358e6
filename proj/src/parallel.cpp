#include "tscopf/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace tscopf {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto used = std::min(static_cast<std::size_t>(std::max(1, threads)), n);
  if (used <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < used; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += used) run(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace tscopf
