// Compares the tuned kernels against the serial reference implementations
// and reports GFLOP/s for the shapes that dominate a training step.

#include <chrono>
#include <cstdio>
#include <functional>

#include "lidkit/kernels.hpp"
#include "lidkit/ref_kernels.hpp"
#include "lidkit/rng.hpp"

using namespace lidkit;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

template <class T>
Tensor<T> random_tensor(Rng& rng, i64 r, i64 c) {
    Tensor<T> t(r, c);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return t;
}

void bench_gemm(i64 M, i64 K, i64 N) {
    Rng rng(1, "bench");
    auto A = random_tensor<float>(rng, M, K);
    auto B = random_tensor<float>(rng, K, N);
    Tensor<float> C(M, N);
    const double flops = 2.0 * M * K * N;
    const int inner = std::max(1, static_cast<int>(2e8 / flops));

    auto run = [&](auto&& fn) {
        return flops * inner / time_best_of(3, [&] {
                   for (int i = 0; i < inner; ++i) fn();
               }) / 1e9;
    };

    const double ref = run([&] { refk::gemm_nn(A, B, C); });
    set_backend(Backend::serial);
    const double ser = run([&] { kern::gemm_nn(A, B, C); });
    set_backend(Backend::openmp);
    const double omp = run([&] { kern::gemm_nn(A, B, C); });
    std::printf("gemm  %4lldx%4lldx%4lld  ref %7.2f  serial %7.2f  openmp %7.2f GFLOP/s\n",
                static_cast<long long>(M), static_cast<long long>(K),
                static_cast<long long>(N), ref, ser, omp);
}

void bench_depthwise(i64 Tlen, i64 C, i64 K) {
    Rng rng(2, "bench");
    auto X = random_tensor<float>(rng, Tlen, C);
    auto W = random_tensor<float>(rng, K, C);
    Tensor<float> out(Tlen, C);
    const double flops = 2.0 * Tlen * C * K;
    const int inner = std::max(1, static_cast<int>(2e8 / flops));
    auto run = [&](auto&& fn) {
        return flops * inner / time_best_of(3, [&] {
                   for (int i = 0; i < inner; ++i) fn();
               }) / 1e9;
    };
    const double ref = run([&] { refk::conv1d_depthwise(X, W, out); });
    set_backend(Backend::serial);
    const double ser = run([&] { kern::conv1d_depthwise(X, W, out); });
    set_backend(Backend::openmp);
    const double omp = run([&] { kern::conv1d_depthwise(X, W, out); });
    std::printf("dwconv %4lldx%3lld k%-2lld    ref %7.2f  serial %7.2f  openmp %7.2f GFLOP/s\n",
                static_cast<long long>(Tlen), static_cast<long long>(C),
                static_cast<long long>(K), ref, ser, omp);
}

} // namespace

int main() {
    std::printf("threads available: %d\n", thread_count());
    // Shapes that dominate one training step at the default model size.
    bench_gemm(600, 64, 256);  // FFN expand
    bench_gemm(600, 256, 64);  // FFN project
    bench_gemm(600, 64, 64);   // attention projections
    bench_gemm(75, 16, 75);    // attention scores, one head
    bench_gemm(600, 64, 512);  // MLM head at larger codebooks
    bench_gemm(512, 512, 512); // square sanity point
    bench_depthwise(600, 64, 15);
    return 0;
}
