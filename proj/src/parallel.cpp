#include "ppmn/parallel.hpp"

#ifdef PPMN_HAVE_OPENMP
#include <omp.h>
#endif

namespace ppmn {

void set_num_threads(int threads) {
#ifdef PPMN_HAVE_OPENMP
  omp_set_num_threads(threads > 0 ? threads : omp_get_num_procs());
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef PPMN_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
#ifdef PPMN_HAVE_OPENMP
  if (count > 1 && omp_get_max_threads() > 1) {
    const auto n = static_cast<long long>(count);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
      body(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < count; ++i) {
    body(i);
  }
}

}  // namespace ppmn
