#pragma once

#include <cstddef>
#include <vector>

#include "lidkit/common.hpp"

namespace lidkit {

// Dense row-major 2-D tensor. Everything in the model is a matrix; scalars
// are 1x1 and vectors are 1xN or Nx1 as the op demands. Keeping the rank
// fixed removes a whole class of broadcasting bugs at the cost of a few
// explicit expand/reshape calls.
template <class T>
struct Tensor {
    i64 rows = 0;
    i64 cols = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(i64 r, i64 c) : rows(r), cols(c), data(static_cast<size_t>(r * c), T(0)) {
        LID_CHECK(r >= 0 && c >= 0, "tensor shape must be non-negative: ", r, "x", c);
    }
    Tensor(i64 r, i64 c, T fill)
        : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

    i64 size() const { return rows * cols; }

    T& at(i64 r, i64 c) { return data[static_cast<size_t>(r * cols + c)]; }
    const T& at(i64 r, i64 c) const { return data[static_cast<size_t>(r * cols + c)]; }

    T* row_ptr(i64 r) { return data.data() + r * cols; }
    const T* row_ptr(i64 r) const { return data.data() + r * cols; }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    static Tensor scalar(T v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }
};

template <class T>
Tensor<T> transpose_of(const Tensor<T>& a) {
    Tensor<T> out(a.cols, a.rows);
    for (i64 i = 0; i < a.rows; ++i)
        for (i64 j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

} // namespace lidkit
