#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace capstext {

/// Worker count: CAPSTEXT_THREADS if set and positive, else the hardware
/// concurrency. Read once per process.
inline std::size_t worker_count() {
  static const std::size_t count = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CAPSTEXT_THREADS")) {
      try {
        long v = std::stol(env);
        if (v > 0) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

/// Splits [0, n) into contiguous chunks, one per worker. Callers must write
/// disjoint outputs per index so results do not depend on the split.
template <typename F>
void parallel_for(std::size_t n, F&& fn, std::size_t min_chunk = 1) {
  std::size_t workers = std::min(worker_count(), n / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    if (n) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace capstext
