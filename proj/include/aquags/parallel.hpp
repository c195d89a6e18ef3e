#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace aquags {

/// Splits [0, n) into `workers` contiguous chunks and runs fn(begin, end, worker)
/// on each, joining before return. The partition depends only on n and
/// workers, so per-worker partial results reduced in worker order are
/// deterministic for a fixed worker count.
template <typename Fn>
void parallel_chunks(size_t n, int workers, Fn&& fn) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<size_t>(n, 1))));
  if (workers == 1) {
    fn(size_t{0}, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const size_t b = n * w / workers, e = n * (w + 1) / workers;
    pool.emplace_back([&fn, b, e, w] { fn(b, e, w); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace aquags
