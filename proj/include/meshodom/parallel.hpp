#pragma once

// Deterministic work-sharing helpers. Results of chunked reductions are
// combined in ascending chunk order so the outcome is bit-identical for any
// thread count, including 1.

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace meshodom {

inline int clamp_threads(int requested) {
  if (requested <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }
  return requested;
}

// Invokes fn(chunk_index, begin, end) over [0, n) split into fixed-size
// chunks. Chunks are claimed from an atomic counter; fn must not rely on
// which thread runs a chunk.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunk_size, int threads,
                     Fn&& fn) {
  if (n == 0) return;
  if (chunk_size == 0) chunk_size = 1;
  const std::size_t num_chunks = (n + chunk_size - 1) / chunk_size;
  threads = clamp_threads(threads);
  if (threads == 1 || num_chunks == 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) {
      const std::size_t begin = c * chunk_size;
      const std::size_t end = std::min(n, begin + chunk_size);
      fn(c, begin, end);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= num_chunks) return;
      const std::size_t begin = c * chunk_size;
      const std::size_t end = std::min(n, begin + chunk_size);
      fn(c, begin, end);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

// Chunked map-reduce: per_chunk produces one partial per chunk, combined in
// ascending chunk index regardless of execution order.
template <class T, class PerChunk, class Combine>
T chunked_reduce(std::size_t n, std::size_t chunk_size, int threads, T init,
                 PerChunk&& per_chunk, Combine&& combine) {
  if (n == 0) return init;
  if (chunk_size == 0) chunk_size = 1;
  const std::size_t num_chunks = (n + chunk_size - 1) / chunk_size;
  std::vector<T> partials(num_chunks, init);
  parallel_chunks(n, chunk_size, threads,
                  [&](std::size_t c, std::size_t begin, std::size_t end) {
                    partials[c] = per_chunk(begin, end);
                  });
  T acc = init;
  for (std::size_t c = 0; c < num_chunks; ++c) acc = combine(acc, partials[c]);
  return acc;
}

// Runs fn(thread_id) on `threads` threads; used by owner-sharded writers
// where thread_id selects the shard.
template <class Fn>
void run_sharded(int threads, Fn&& fn) {
  threads = clamp_threads(threads);
  if (threads == 1) {
    fn(0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back([&fn, t] { fn(t); });
  fn(0);
  for (auto& th : pool) th.join();
}

}  // namespace meshodom
