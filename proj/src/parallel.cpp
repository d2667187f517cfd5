#include "attnfactor/parallel.hpp"

#include <omp.h>

#include <atomic>
#include <stdexcept>

namespace attnfactor {

namespace {
std::atomic<int> g_workers{1};
}

void set_workers(int n) { g_workers.store(n < 1 ? 1 : n); }
int workers() { return g_workers.load(); }

void serial_for_indexed(std::size_t n, const std::function<void(std::size_t)>& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

void parallel_for_indexed(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int w = workers();
  if (w <= 1 || n <= 1) {
    serial_for_indexed(n, fn);
    return;
  }
  std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(w)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(attnfactor_parallel_error)
      {
        if (!first_error) first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace attnfactor
