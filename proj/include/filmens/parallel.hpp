#pragma once

#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace filmens {

/// Worker count for data-parallel kernels.  FILMENS_THREADS overrides the
/// hardware count.  Changing it never changes results: every parallel_for
/// task writes a disjoint output slice and all reductions run over a fixed
/// chunk structure, so the math is independent of the thread count.
inline unsigned worker_count() {
  static const unsigned n = [] {
    if (const char* env = std::getenv("FILMENS_THREADS")) {
      const long v = std::atol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
  }();
  return n;
}

/// Runs f(i) for i in [0, n), statically split into contiguous ranges.
/// Each index is executed exactly once by exactly one worker.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
  const unsigned workers = worker_count();
  if (n <= 1 || workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const unsigned t = workers < n ? workers : static_cast<unsigned>(n);
  std::vector<std::thread> pool;
  pool.reserve(t - 1);
  auto run = [&f, n, t](unsigned w) {
    const std::size_t lo = n * w / t;
    const std::size_t hi = n * (w + 1) / t;
    for (std::size_t i = lo; i < hi; ++i) f(i);
  };
  for (unsigned w = 1; w < t; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& th : pool) th.join();
}

/// Runs f(lo, hi) over contiguous ranges covering [0, n), one range per
/// worker.  Lets the callee reuse scratch buffers across the range; each
/// index is still processed exactly once.
template <typename F>
void parallel_chunks(std::size_t n, F&& f) {
  const unsigned workers = worker_count();
  if (n == 0) return;
  if (n == 1 || workers == 1) {
    f(std::size_t{0}, n);
    return;
  }
  const unsigned t = workers < n ? workers : static_cast<unsigned>(n);
  std::vector<std::thread> pool;
  pool.reserve(t - 1);
  auto run = [&f, n, t](unsigned w) { f(n * w / t, n * (w + 1) / t); };
  for (unsigned w = 1; w < t; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& th : pool) th.join();
}

/// Number of partial accumulators used when a gradient reduction runs over
/// the batch dimension.  Fixed (not tied to worker_count) so that summation
/// order, and therefore every bit of the result, is machine-independent.
inline constexpr std::size_t kReduceChunks = 16;

}  // namespace filmens
