#include "paleo/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace paleo {

unsigned resolve_threads(unsigned requested) noexcept {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::vector<std::exception_ptr> parallel_for_collect(
    std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
    return errors;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run(i);
    });
  }
  pool.clear();  // joins
  return errors;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  auto errors = parallel_for_collect(n, threads, body);
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace paleo
