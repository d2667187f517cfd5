#ifndef ATTNFACTOR_PARALLEL_HPP
#define ATTNFACTOR_PARALLEL_HPP

#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <vector>

namespace attnfactor {

// Process-wide worker count used by parallel kernels. 1 selects the serial
// reference path; >1 runs the OpenMP path with that many threads.
void set_workers(int n);
int workers();

// Runs fn(i) for i in [0, n). With workers() == 1 this is a plain loop (the
// serial reference used by the tests and the benchmark); otherwise iterations
// are distributed over OpenMP threads. Callers must write results into
// per-index slots and reduce in index order afterwards, which is what keeps
// outputs invariant to the worker count. Exceptions thrown by fn are
// captured and rethrown on the calling thread.
void parallel_for_indexed(std::size_t n, const std::function<void(std::size_t)>& fn);

// Same loop but forced serial, regardless of the configured worker count.
void serial_for_indexed(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace attnfactor

#endif
