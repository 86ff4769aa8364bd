// Deterministic fork-join parallelism.  Work items are pure functions of
// their index writing into preassigned slots, so results are bit-identical
// for any thread count; reductions always happen on the caller thread in
// index order.
#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace surroval {

inline int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("SURROVAL_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

class ThreadLimit {
 public:
  static int get() { return value_; }
  static void set(int n) { value_ = n < 1 ? 1 : n; }

 private:
  static inline int value_ = max_threads();
};

namespace detail {
inline thread_local bool inside_parallel_region = false;
}

// Runs fn(i) for i in [0, n).  fn must not touch shared mutable state other
// than its own output slot.  Nested calls degrade to serial execution, so
// outer loops (e.g. finite-difference batches) own the thread budget.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         int threads = 0) {
  if (threads <= 0) threads = ThreadLimit::get();
  if (detail::inside_parallel_region) threads = 1;
  if (threads > static_cast<int>(n)) threads = static_cast<int>(n);
  if (n == 0) return;
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    detail::inside_parallel_region = true;
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) break;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
        break;
      }
    }
    detail::inside_parallel_region = false;
  };
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failed.load() && err) std::rethrow_exception(err);
}

}  // namespace surroval
