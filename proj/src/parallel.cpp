#include "lidkit/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lidkit {

Backend& active_backend() {
    static Backend b = Backend::openmp;
    return b;
}

void set_backend(Backend b) { active_backend() = b; }

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace detail {

void run_parallel(i64 n, void (*trampoline)(void*, i64), void* ctx) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) trampoline(ctx, i);
#else
    for (i64 i = 0; i < n; ++i) trampoline(ctx, i);
#endif
}

} // namespace detail

} // namespace lidkit
