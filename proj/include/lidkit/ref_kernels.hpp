#pragma once

#include <cmath>

#include "lidkit/tensor.hpp"

// Textbook serial implementations of the kernels, kept as the reference
// the production versions are tested and benchmarked against. Nothing here
// is tuned; clarity wins every trade-off.

namespace lidkit::refk {

template <class T>
void gemm_nn(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    LID_CHECK(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols,
              "refk::gemm_nn shape mismatch");
    for (i64 i = 0; i < A.rows; ++i) {
        for (i64 j = 0; j < B.cols; ++j) {
            T acc = T(0);
            for (i64 k = 0; k < A.cols; ++k) acc += A.at(i, k) * B.at(k, j);
            C.at(i, j) = acc;
        }
    }
}

template <class T>
void softmax_rows(const Tensor<T>& X, Tensor<T>& out) {
    for (i64 i = 0; i < X.rows; ++i) {
        T mx = X.at(i, 0);
        for (i64 j = 1; j < X.cols; ++j) mx = std::max(mx, X.at(i, j));
        T sum = T(0);
        for (i64 j = 0; j < X.cols; ++j) sum += std::exp(X.at(i, j) - mx);
        for (i64 j = 0; j < X.cols; ++j) out.at(i, j) = std::exp(X.at(i, j) - mx) / sum;
    }
}

template <class T>
void log_softmax_rows(const Tensor<T>& X, Tensor<T>& out) {
    for (i64 i = 0; i < X.rows; ++i) {
        T mx = X.at(i, 0);
        for (i64 j = 1; j < X.cols; ++j) mx = std::max(mx, X.at(i, j));
        T sum = T(0);
        for (i64 j = 0; j < X.cols; ++j) sum += std::exp(X.at(i, j) - mx);
        const T lse = mx + std::log(sum);
        for (i64 j = 0; j < X.cols; ++j) out.at(i, j) = X.at(i, j) - lse;
    }
}

template <class T>
void layer_norm_rows(const Tensor<T>& X, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps, Tensor<T>& out) {
    for (i64 i = 0; i < X.rows; ++i) {
        T mean = T(0);
        for (i64 j = 0; j < X.cols; ++j) mean += X.at(i, j);
        mean /= static_cast<T>(X.cols);
        T var = T(0);
        for (i64 j = 0; j < X.cols; ++j) {
            const T d = X.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<T>(X.cols);
        const T rstd = T(1) / std::sqrt(var + eps);
        for (i64 j = 0; j < X.cols; ++j)
            out.at(i, j) = (X.at(i, j) - mean) * rstd * gamma.at(0, j) + beta.at(0, j);
    }
}

template <class T>
void conv1d_depthwise(const Tensor<T>& X, const Tensor<T>& W, Tensor<T>& out) {
    const i64 pad = W.rows / 2;
    for (i64 t = 0; t < X.rows; ++t) {
        for (i64 c = 0; c < X.cols; ++c) {
            T acc = T(0);
            for (i64 k = 0; k < W.rows; ++k) {
                const i64 src = t + k - pad;
                if (src < 0 || src >= X.rows) continue;
                acc += X.at(src, c) * W.at(k, c);
            }
            out.at(t, c) = acc;
        }
    }
}

template <class T>
void conv1d_strided(const Tensor<T>& X, const Tensor<T>& W, const Tensor<T>& bias,
                    i64 K, i64 stride, i64 pad, Tensor<T>& out) {
    const i64 Cin = X.cols, Cout = W.cols;
    for (i64 to = 0; to < out.rows; ++to) {
        for (i64 co = 0; co < Cout; ++co) out.at(to, co) = bias.at(0, co);
        for (i64 k = 0; k < K; ++k) {
            const i64 src = to * stride + k - pad;
            if (src < 0 || src >= X.rows) continue;
            for (i64 ci = 0; ci < Cin; ++ci)
                for (i64 co = 0; co < Cout; ++co)
                    out.at(to, co) += X.at(src, ci) * W.at(k * Cin + ci, co);
        }
    }
}

} // namespace lidkit::refk
