#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace transvis {

inline constexpr const char* kWorkersEnv = "TRANSVIS_WORKERS";

/// Worker count from TRANSVIS_WORKERS, or 1 when unset or malformed.
inline std::size_t default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Items are handed
/// out in contiguous blocks; callers must write results only to per-item
/// slots so output never depends on the worker count. The first exception
/// thrown by any item is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * block;
    const std::size_t end = std::min(n, begin + block);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

/// Fixed chunk size for reductions. Chunk boundaries depend only on the item
/// count, so partial results combine in the same order for any worker count.
inline constexpr std::size_t kReduceChunk = 64;

inline std::size_t chunk_count(std::size_t n) {
  return (n + kReduceChunk - 1) / kReduceChunk;
}

}  // namespace transvis
