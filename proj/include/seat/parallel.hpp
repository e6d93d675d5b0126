// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace seat {

/// Splits [0,count) into fixed-size shards and runs fn(begin,end,shard_index)
/// across a small thread pool. The shard layout depends only on count and
/// shard_size, never on the number of workers, so callers that write results
/// into per-shard slots and reduce them in shard order stay deterministic.
inline void parallel_shards(std::size_t count, std::size_t shard_size,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  if (shard_size == 0) shard_size = count;
  const std::size_t nshards = (count + shard_size - 1) / shard_size;
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t nthreads = std::min<std::size_t>(hw ? hw : 1, nshards);

  if (nthreads <= 1) {
    for (std::size_t s = 0; s < nshards; ++s)
      fn(s * shard_size, std::min(count, (s + 1) * shard_size), s);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      std::size_t s = next.fetch_add(1);
      if (s >= nshards || failed.load()) return;
      try {
        fn(s * shard_size, std::min(count, (s + 1) * shard_size), s);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failed.load() && err) std::rethrow_exception(err);
}

inline std::size_t shard_count(std::size_t count, std::size_t shard_size) {
  if (count == 0) return 0;
  if (shard_size == 0) return 1;
  return (count + shard_size - 1) / shard_size;
}

}  // namespace seat
