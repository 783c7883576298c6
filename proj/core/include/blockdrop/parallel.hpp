#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace blockdrop {

// Static contiguous partition of [0, n) over `workers` threads. Results must
// be written to per-index or per-worker slots; any cross-worker reduction is
// the caller's job and should run in worker order so a run is deterministic
// for a given (seed, worker count).
template <class F>
void parallel_chunks(int n, int workers, F&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int begin = w * chunk;
    int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, w, begin, end]() { fn(w, begin, end); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace blockdrop
