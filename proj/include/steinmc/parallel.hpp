#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace steinmc {

/// Number of worker threads: explicit request, else STEINMC_THREADS, else hardware.
std::size_t resolve_threads(std::size_t requested);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// processed exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling.
template <class Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Pairwise (tree) summation; result depends only on the input order.
template <class It>
double pairwise_sum(It first, It last) {
  const auto n = static_cast<std::size_t>(last - first);
  if (n <= 8) {
    double s = 0.0;
    for (; first != last; ++first) s += *first;
    return s;
  }
  const It mid = first + static_cast<std::ptrdiff_t>(n / 2);
  return pairwise_sum(first, mid) + pairwise_sum(mid, last);
}

}  // namespace steinmc
