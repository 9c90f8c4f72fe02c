#pragma once

#include <cstddef>
#include <exception>
#include <limits>

#include <omp.h>

namespace sdelab {

// Runs body(i) for i in [0, n) on `threads` workers (0 = OpenMP default).
// Callers write results into slots indexed by i and reduce afterwards in
// index order, so the outcome never depends on scheduling. If several
// iterations throw, the exception of the lowest index is rethrown.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  std::exception_ptr error;
  std::size_t error_index = std::numeric_limits<std::size_t>::max();
  const int workers = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(workers)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(sdelab_parallel_error)
      {
        if (static_cast<std::size_t>(i) < error_index) {
          error_index = static_cast<std::size_t>(i);
          error = std::current_exception();
        }
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace sdelab
