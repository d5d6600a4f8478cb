#include "fvdb/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace fvdb {
namespace {

size_t default_thread_count() {
  if (const char* env = std::getenv("FVDB_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return size_t(n);
  }
  return std::max<size_t>(1, std::thread::hardware_concurrency());
}

std::atomic<size_t>& cap() {
  static std::atomic<size_t> n{default_thread_count()};
  return n;
}

}  // namespace

size_t thread_count() { return cap().load(std::memory_order_relaxed); }

void set_thread_count(size_t n) { cap().store(n == 0 ? default_thread_count() : n, std::memory_order_relaxed); }

}  // namespace fvdb
