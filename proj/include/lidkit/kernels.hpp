#pragma once

#include <cmath>

#include "lidkit/parallel.hpp"
#include "lidkit/tensor.hpp"

// Production kernels. Parallelism is only ever over disjoint output rows
// and every per-element accumulation runs in a fixed serial order, so the
// serial and OpenMP backends produce bit-identical results at any thread
// count. Inner loops are written in axpy form (output-indexed, contiguous)
// so the compiler can vectorize them under strict FP semantics.

namespace lidkit::kern {

// C = A(M,K) * B(K,N)
template <class T>
void gemm_nn(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    const i64 M = A.rows, K = A.cols, N = B.cols;
    LID_CHECK(B.rows == K, "gemm_nn: inner dims ", A.cols, " vs ", B.rows);
    LID_CHECK(C.rows == M && C.cols == N, "gemm_nn: bad output shape");
    const T* a = A.data.data();
    const T* b = B.data.data();
    T* c = C.data.data();
    parallel_for(M, [&](i64 i) {
        T* crow = c + i * N;
        for (i64 j = 0; j < N; ++j) crow[j] = T(0);
        const T* arow = a + i * K;
        for (i64 k = 0; k < K; ++k) {
            const T aik = arow[k];
            const T* brow = b + k * N;
            for (i64 j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    });
}

// C += A(M,K) * B(K,N)
template <class T>
void gemm_nn_acc(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    const i64 M = A.rows, K = A.cols, N = B.cols;
    LID_CHECK(B.rows == K, "gemm_nn_acc: inner dims ", A.cols, " vs ", B.rows);
    LID_CHECK(C.rows == M && C.cols == N, "gemm_nn_acc: bad output shape");
    const T* a = A.data.data();
    const T* b = B.data.data();
    T* c = C.data.data();
    parallel_for(M, [&](i64 i) {
        T* crow = c + i * N;
        const T* arow = a + i * K;
        for (i64 k = 0; k < K; ++k) {
            const T aik = arow[k];
            const T* brow = b + k * N;
            for (i64 j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& A, const Tensor<T>& B) {
    Tensor<T> C(A.rows, B.cols);
    gemm_nn(A, B, C);
    return C;
}

template <class T>
void transpose(const Tensor<T>& A, Tensor<T>& out) {
    LID_CHECK(out.rows == A.cols && out.cols == A.rows, "transpose: bad output shape");
    const i64 R = A.rows, C = A.cols;
    parallel_for(C, [&](i64 j) {
        T* orow = out.row_ptr(j);
        for (i64 i = 0; i < R; ++i) orow[i] = A.data[static_cast<size_t>(i * C + j)];
    });
}

template <class T>
void softmax_rows(const Tensor<T>& X, Tensor<T>& out) {
    LID_CHECK(out.same_shape(X), "softmax_rows: bad output shape");
    const i64 C = X.cols;
    parallel_for(X.rows, [&](i64 i) {
        const T* x = X.row_ptr(i);
        T* o = out.row_ptr(i);
        T mx = x[0];
        for (i64 j = 1; j < C; ++j)
            if (x[j] > mx) mx = x[j];
        T sum = T(0);
        for (i64 j = 0; j < C; ++j) {
            o[j] = std::exp(x[j] - mx);
            sum += o[j];
        }
        const T inv = T(1) / sum;
        for (i64 j = 0; j < C; ++j) o[j] *= inv;
    });
}

template <class T>
void log_softmax_rows(const Tensor<T>& X, Tensor<T>& out) {
    LID_CHECK(out.same_shape(X), "log_softmax_rows: bad output shape");
    const i64 C = X.cols;
    parallel_for(X.rows, [&](i64 i) {
        const T* x = X.row_ptr(i);
        T* o = out.row_ptr(i);
        T mx = x[0];
        for (i64 j = 1; j < C; ++j)
            if (x[j] > mx) mx = x[j];
        T sum = T(0);
        for (i64 j = 0; j < C; ++j) sum += std::exp(x[j] - mx);
        const T lse = mx + std::log(sum);
        for (i64 j = 0; j < C; ++j) o[j] = x[j] - lse;
    });
}

// Row-wise layer norm with learned gamma/beta (each 1 x C). Saves the
// per-row mean and reciprocal std when the caller needs them for backward.
template <class T>
void layer_norm_rows(const Tensor<T>& X, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps, Tensor<T>& out, Tensor<T>* save_mean = nullptr,
                     Tensor<T>* save_rstd = nullptr) {
    const i64 C = X.cols;
    LID_CHECK(gamma.rows == 1 && gamma.cols == C, "layer_norm: gamma shape");
    LID_CHECK(beta.rows == 1 && beta.cols == C, "layer_norm: beta shape");
    LID_CHECK(out.same_shape(X), "layer_norm: bad output shape");
    const T* g = gamma.data.data();
    const T* bt = beta.data.data();
    parallel_for(X.rows, [&](i64 i) {
        const T* x = X.row_ptr(i);
        T* o = out.row_ptr(i);
        T mean = T(0);
        for (i64 j = 0; j < C; ++j) mean += x[j];
        mean /= static_cast<T>(C);
        T var = T(0);
        for (i64 j = 0; j < C; ++j) {
            const T d = x[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(C);
        const T rstd = T(1) / std::sqrt(var + eps);
        if (save_mean) save_mean->data[static_cast<size_t>(i)] = mean;
        if (save_rstd) save_rstd->data[static_cast<size_t>(i)] = rstd;
        for (i64 j = 0; j < C; ++j) o[j] = (x[j] - mean) * rstd * g[j] + bt[j];
    });
}

// Depthwise conv along time. X is (T, C), W is (K, C) with odd K, zero
// 'same' padding, so out(t, c) = sum_k X(t + k - K/2, c) * W(k, c).
template <class T>
void conv1d_depthwise(const Tensor<T>& X, const Tensor<T>& W, Tensor<T>& out) {
    const i64 Tlen = X.rows, C = X.cols, K = W.rows;
    LID_CHECK(W.cols == C, "conv1d_depthwise: channel mismatch");
    LID_CHECK(K % 2 == 1, "conv1d_depthwise: kernel size must be odd, got ", K);
    LID_CHECK(out.same_shape(X), "conv1d_depthwise: bad output shape");
    const i64 pad = K / 2;
    parallel_for(Tlen, [&](i64 t) {
        T* o = out.row_ptr(t);
        for (i64 c = 0; c < C; ++c) o[c] = T(0);
        for (i64 k = 0; k < K; ++k) {
            const i64 src = t + k - pad;
            if (src < 0 || src >= Tlen) continue;
            const T* x = X.row_ptr(src);
            const T* w = W.row_ptr(k);
            for (i64 c = 0; c < C; ++c) o[c] += x[c] * w[c];
        }
    });
}

inline i64 conv_out_len(i64 in_len, i64 K, i64 stride, i64 pad) {
    return (in_len + 2 * pad - K) / stride + 1;
}

// Strided full conv for the frontend. X is (T, Cin); W is stored
// input-major as (K*Cin, Cout) so the accumulation over output channels is
// contiguous; bias is (1, Cout). Zero padding.
template <class T>
void conv1d_strided(const Tensor<T>& X, const Tensor<T>& W, const Tensor<T>& bias,
                    i64 K, i64 stride, i64 pad, Tensor<T>& out) {
    const i64 Tin = X.rows, Cin = X.cols, Cout = W.cols;
    LID_CHECK(W.rows == K * Cin, "conv1d_strided: weight rows ", W.rows, " != K*Cin ", K * Cin);
    LID_CHECK(bias.rows == 1 && bias.cols == Cout, "conv1d_strided: bias shape");
    const i64 Tout = conv_out_len(Tin, K, stride, pad);
    LID_CHECK(out.rows == Tout && out.cols == Cout, "conv1d_strided: bad output shape");
    const T* bptr = bias.data.data();
    parallel_for(Tout, [&](i64 to) {
        T* o = out.row_ptr(to);
        for (i64 co = 0; co < Cout; ++co) o[co] = bptr[co];
        for (i64 k = 0; k < K; ++k) {
            const i64 src = to * stride + k - pad;
            if (src < 0 || src >= Tin) continue;
            const T* x = X.row_ptr(src);
            for (i64 ci = 0; ci < Cin; ++ci) {
                const T xv = x[ci];
                const T* wrow = W.row_ptr(k * Cin + ci);
                for (i64 co = 0; co < Cout; ++co) o[co] += xv * wrow[co];
            }
        }
    });
}

} // namespace lidkit::kern
