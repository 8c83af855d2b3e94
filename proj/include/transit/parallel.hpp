#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace transit {

inline unsigned default_workers() {
  unsigned h = std::thread::hardware_concurrency();
  return h == 0 ? 1 : h;
}

// Runs fn(i, worker) for i in [0, count) with a static partition: worker w owns the
// contiguous block [w*count/k, (w+1)*count/k). Results must be written to slots indexed
// by i (or per-worker buffers reduced in worker order) so the outcome is independent of
// scheduling. With workers <= 1 everything runs inline on the calling thread.
inline void parallel_for(size_t count, unsigned workers,
                         const std::function<void(size_t, unsigned)>& fn) {
  if (count == 0) return;
  if (workers <= 1 || count == 1) {
    for (size_t i = 0; i < count; ++i) fn(i, 0);
    return;
  }
  if (workers > count) workers = static_cast<unsigned>(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    size_t lo = count * w / workers;
    size_t hi = count * (w + 1) / workers;
    pool.emplace_back([lo, hi, w, &fn] {
      for (size_t i = lo; i < hi; ++i) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace transit
