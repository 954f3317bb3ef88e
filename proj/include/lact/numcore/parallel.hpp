#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace lact::nc {

// Global worker count for data-parallel sections. 1 = fully serial
// (the mode with the bit-reproducibility guarantee).
inline int& thread_count() {
  static int n = 1;
  return n;
}
inline void set_thread_count(int n) { thread_count() = std::max(1, n); }

// Runs fn(worker, begin, end) over contiguous chunks of [0, n). Model state
// must only be written by the caller after the join (exclusive-writer
// contract); workers produce into their own buffers.
inline void parallel_chunks(int n, const std::function<void(int, int, int)>& fn) {
  const int workers = std::min(thread_count(), std::max(1, n));
  if (workers <= 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(static_cast<size_t>(workers));
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int b = w * chunk;
    const int e = std::min(n, b + chunk);
    pool.emplace_back([&, w, b, e]() {
      try {
        if (b < e) fn(w, b, e);
      } catch (...) {
        errs[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errs)
    if (err) std::rethrow_exception(err);
}

}  // namespace lact::nc
