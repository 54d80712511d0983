#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <vector>

namespace paleo {

/// 0 means "use hardware concurrency".
unsigned resolve_threads(unsigned requested) noexcept;

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index writes
/// only its own output slot, so results are independent of the schedule. The
/// first exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

/// Like parallel_for, but collects per-index exceptions instead of rethrowing.
std::vector<std::exception_ptr> parallel_for_collect(
    std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace paleo
