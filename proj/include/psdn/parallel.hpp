#pragma once

#include <atomic>
#include <thread>
#include <vector>

namespace psdn {

inline int effective_workers(int requested) {
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (requested > 0) return requested;
  return hw > 0 ? hw : 1;
}

// Runs fn(i) for i in [0, n). Work items are independent and write to
// per-index slots, so scheduling order cannot affect results; any ordered
// reduction happens in the caller afterwards.
template <class F>
void parallel_for(int n, int workers, F&& fn) {
  workers = std::min(effective_workers(workers), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> threads;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n || failed.load(std::memory_order_relaxed)) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace psdn
