#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fvdb {

/// Worker cap used by every data-parallel operation. Defaults to the
/// FVDB_THREADS environment variable, else the hardware concurrency.
size_t thread_count();
void set_thread_count(size_t n);

/// Splits [0, n) into at most thread_count() contiguous chunks of at least
/// `grain` items and runs fn(begin, end, chunk_id) on each. The chunk layout
/// depends only on n, grain and the thread cap, so per-chunk partial results
/// combined in chunk order are reproducible.
template <class Fn>
void parallel_chunks(size_t n, size_t grain, Fn&& fn) {
  if (n == 0) return;
  grain = std::max<size_t>(grain, 1);
  const size_t chunks = std::max<size_t>(1, std::min(thread_count(), (n + grain - 1) / grain));
  if (chunks == 1) {
    fn(size_t{0}, n, size_t{0});
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  auto run = [&](size_t c) {
    const size_t begin = n * c / chunks, end = n * (c + 1) / chunks;
    try {
      fn(begin, end, c);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  for (size_t c = 1; c < chunks; ++c) workers.emplace_back(run, c);
  run(0);
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

/// Number of chunks parallel_chunks would use for (n, grain).
inline size_t chunk_count(size_t n, size_t grain) {
  if (n == 0) return 0;
  grain = std::max<size_t>(grain, 1);
  return std::max<size_t>(1, std::min(thread_count(), (n + grain - 1) / grain));
}

template <class Fn>
void parallel_for(size_t n, size_t grain, Fn&& fn) {
  parallel_chunks(n, grain, [&](size_t b, size_t e, size_t) {
    for (size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace fvdb
