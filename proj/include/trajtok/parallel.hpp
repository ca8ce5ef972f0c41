#pragma once

#include <cstddef>
#if defined(_OPENMP)
#include <omp.h>
#endif

namespace trajtok::parallel {

inline int max_threads() {
#if defined(_OPENMP)
  return ::omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#if defined(_OPENMP)
  ::omp_set_num_threads(n < 1 ? 1 : n);
#else
  (void)n;
#endif
}

inline int thread_id() {
#if defined(_OPENMP)
  return ::omp_get_thread_num();
#else
  return 0;
#endif
}

/// Runs f(i) for i in [begin, end). Each i must write only to its own output slot so the
/// result does not depend on scheduling.
template <class F>
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, F&& f) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = begin; i < end; ++i) f(i);
#else
  for (std::ptrdiff_t i = begin; i < end; ++i) f(i);
#endif
}

/// Restores the previous OpenMP thread count on scope exit.
class ThreadScope {
 public:
  explicit ThreadScope(int n) : previous_(max_threads()) { set_threads(n); }
  ~ThreadScope() { set_threads(previous_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int previous_;
};

}  // namespace trajtok::parallel
