#pragma once

#include "lidkit/common.hpp"

namespace lidkit {

// Which kernel path to run. The serial path is the reference; the OpenMP
// path must produce bit-identical output because parallelism is only ever
// over disjoint output slices with a fixed serial accumulation order inside
// each slice.
enum class Backend { serial, openmp };

Backend& active_backend();
void set_backend(Backend b);
int thread_count();

// Runs fn(i) for i in [0, n). Under Backend::openmp the iterations are
// distributed across threads; each index must write only its own output
// slice.
template <class F>
void parallel_for(i64 n, F&& fn);

namespace detail {
void run_parallel(i64 n, void (*trampoline)(void*, i64), void* ctx);
}

template <class F>
void parallel_for(i64 n, F&& fn) {
    if (active_backend() == Backend::serial || n <= 1) {
        for (i64 i = 0; i < n; ++i) fn(i);
        return;
    }
    auto trampoline = [](void* ctx, i64 i) { (*static_cast<F*>(ctx))(i); };
    detail::run_parallel(n, trampoline, &fn);
}

} // namespace lidkit
