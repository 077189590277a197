#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ijkit {

/// Thread count used when a caller passes 0: the IJKIT_THREADS environment
/// variable if set and positive, otherwise the hardware concurrency.
inline std::size_t default_thread_count() {
  if (const char* env = std::getenv("IJKIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

inline std::size_t resolve_threads(std::size_t requested) {
  return requested == 0 ? default_thread_count() : requested;
}

/// Calls fn(i) for every i in [0, count). Work is split into contiguous
/// static blocks, one per thread, so the mapping of index to thread is a
/// pure function of (count, threads). The first exception thrown by any
/// worker is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(resolve_threads(threads), count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t block = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * block;
    const std::size_t end = std::min(count, begin + block);
    pool.emplace_back([&, t, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Combines partial results in a fixed balanced binary tree. The shape of
/// the tree depends only on parts.size().
template <typename T, typename Combine>
T pairwise_combine(std::vector<T>& parts, std::size_t lo, std::size_t hi,
                   Combine&& combine) {
  if (hi - lo == 1) return parts[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  T left = pairwise_combine(parts, lo, mid, combine);
  T right = pairwise_combine(parts, mid, hi, combine);
  return combine(std::move(left), std::move(right));
}

}  // namespace ijkit
