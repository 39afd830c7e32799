#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "lidkit/kernels.hpp"

namespace lidkit {

// Handle into a Tape. Plain index so copies are free and graphs can be
// built with value semantics.
struct VarId {
    i64 id = -1;
    bool valid() const { return id >= 0; }
};

// Eager reverse-mode tape. Every op computes its output immediately and
// records a closure that pushes gradients to its parents; backward() walks
// the nodes in reverse creation order. One tape per training step, cleared
// between steps. Gradients accumulate with += so reused values are handled
// naturally.
//
// The same determinism contract as the kernels applies: closures
// parallelize only over disjoint output slices and accumulate in a fixed
// serial order, so results are bit-identical at any thread count.
template <class T>
class Tape {
public:
    VarId leaf(Tensor<T> value, bool requires_grad = true) {
        return make(std::move(value), requires_grad, nullptr);
    }

    VarId constant(Tensor<T> value) { return make(std::move(value), false, nullptr); }

    const Tensor<T>& val(VarId v) const { return node(v).val; }

    Tensor<T>& grad(VarId v) {
        Node& n = node(v);
        LID_CHECK(n.needs, "grad requested for a node that does not require it");
        return n.grad;
    }

    bool needs_grad(VarId v) const { return node(v).needs; }
    i64 size() const { return static_cast<i64>(nodes_.size()); }

    void clear() { nodes_.clear(); }

    void backward(VarId loss) {
        Node& L = node(loss);
        LID_CHECK(L.val.rows == 1 && L.val.cols == 1, "backward: loss must be a scalar");
        LID_CHECK(L.needs, "backward: loss does not depend on any parameter");
        for (auto& n : nodes_)
            if (n.needs) n.grad = Tensor<T>(n.val.rows, n.val.cols);
        L.grad.data[0] = T(1);
        for (i64 i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs && n.bwd) n.bwd(*this);
        }
    }

    // ---- elementwise ----

    VarId add(VarId a, VarId b) {
        const auto& A = val(a);
        const auto& B = val(b);
        LID_CHECK(A.same_shape(B), "add: shape mismatch ", A.rows, "x", A.cols, " vs ",
                  B.rows, "x", B.cols);
        Tensor<T> out(A.rows, A.cols);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            const T* pb = B.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) po[j] = pa[j] + pb[j];
        });
        VarId o = make(std::move(out), needs_grad(a) || needs_grad(b), nullptr);
        set_bwd(o, [a, b, o](Tape& t) {
            const auto& g = t.node(o).grad;
            if (t.needs_grad(a)) t.accumulate(a, g);
            if (t.needs_grad(b)) t.accumulate(b, g);
        });
        return o;
    }

    VarId mul(VarId a, VarId b) {
        const auto& A = val(a);
        const auto& B = val(b);
        LID_CHECK(A.same_shape(B), "mul: shape mismatch");
        Tensor<T> out(A.rows, A.cols);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            const T* pb = B.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) po[j] = pa[j] * pb[j];
        });
        VarId o = make(std::move(out), needs_grad(a) || needs_grad(b), nullptr);
        set_bwd(o, [a, b, o](Tape& t) {
            const auto& g = t.node(o).grad;
            if (t.needs_grad(a)) t.accumulate_product(a, g, t.val(b));
            if (t.needs_grad(b)) t.accumulate_product(b, g, t.val(a));
        });
        return o;
    }

    VarId scale(VarId a, double c) {
        const auto& A = val(a);
        Tensor<T> out(A.rows, A.cols);
        const T cf = static_cast<T>(c);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) po[j] = pa[j] * cf;
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, cf](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < g.cols; ++j) pa[j] += cf * pg[j];
            });
        });
        return o;
    }

    VarId exp(VarId a) {
        const auto& A = val(a);
        Tensor<T> out(A.rows, A.cols);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) po[j] = std::exp(pa[j]);
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (t.needs_grad(a)) t.accumulate_product(a, t.node(o).grad, t.val(o));
        });
        return o;
    }

    VarId log(VarId a) {
        const auto& A = val(a);
        Tensor<T> out(A.rows, A.cols);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) po[j] = std::log(pa[j]);
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            const auto& x = t.val(a);
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                const T* px = x.row_ptr(i);
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j] / px[j];
            });
        });
        return o;
    }

    VarId sigmoid(VarId a) {
        const auto& A = val(a);
        Tensor<T> out(A.rows, A.cols);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) po[j] = T(1) / (T(1) + std::exp(-pa[j]));
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            const auto& y = t.val(o);
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                const T* py = y.row_ptr(i);
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j] * py[j] * (T(1) - py[j]);
            });
        });
        return o;
    }

    // x * sigmoid(x), the swish activation.
    VarId swish(VarId a) {
        const auto& A = val(a);
        Tensor<T> sig(A.rows, A.cols);
        Tensor<T> out(A.rows, A.cols);
        parallel_for(A.rows, [&](i64 i) {
            const T* pa = A.row_ptr(i);
            T* ps = sig.row_ptr(i);
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) {
                ps[j] = T(1) / (T(1) + std::exp(-pa[j]));
                po[j] = pa[j] * ps[j];
            }
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, sig = std::move(sig)](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            const auto& x = t.val(a);
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                const T* px = x.row_ptr(i);
                const T* ps = sig.row_ptr(i);
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < g.cols; ++j)
                    pa[j] += pg[j] * ps[j] * (T(1) + px[j] * (T(1) - ps[j]));
            });
        });
        return o;
    }

    // ---- linear algebra ----

    VarId matmul(VarId a, VarId b) {
        const auto& A = val(a);
        const auto& B = val(b);
        Tensor<T> out(A.rows, B.cols);
        kern::gemm_nn(A, B, out);
        VarId o = make(std::move(out), needs_grad(a) || needs_grad(b), nullptr);
        set_bwd(o, [a, b, o](Tape& t) {
            const auto& g = t.node(o).grad;
            if (t.needs_grad(a)) {
                const auto& B2 = t.val(b);
                Tensor<T> Bt(B2.cols, B2.rows);
                kern::transpose(B2, Bt);
                kern::gemm_nn_acc(g, Bt, t.node(a).grad);
            }
            if (t.needs_grad(b)) {
                const auto& A2 = t.val(a);
                Tensor<T> At(A2.cols, A2.rows);
                kern::transpose(A2, At);
                kern::gemm_nn_acc(At, g, t.node(b).grad);
            }
        });
        return o;
    }

    VarId transpose(VarId a) {
        const auto& A = val(a);
        Tensor<T> out(A.cols, A.rows);
        kern::transpose(A, out);
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            parallel_for(ga.rows, [&](i64 i) {
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < ga.cols; ++j)
                    pa[j] += g.data[static_cast<size_t>(j * g.cols + i)];
            });
        });
        return o;
    }

    // Repeats a 1 x C row vector R times. This is the explicit stand-in for
    // broadcasting (bias addition and the like).
    VarId expand_rows(VarId v, i64 R) {
        const auto& V = val(v);
        LID_CHECK(V.rows == 1, "expand_rows: input must be 1 x C, got ", V.rows, " rows");
        Tensor<T> out(R, V.cols);
        parallel_for(R, [&](i64 i) {
            const T* pv = V.data.data();
            T* po = out.row_ptr(i);
            for (i64 j = 0; j < V.cols; ++j) po[j] = pv[j];
        });
        VarId o = make(std::move(out), needs_grad(v), nullptr);
        set_bwd(o, [v, o](Tape& t) {
            if (!t.needs_grad(v)) return;
            const auto& g = t.node(o).grad;
            auto& gv = t.node(v).grad;
            T* pv = gv.data.data();
            for (i64 i = 0; i < g.rows; ++i) {
                const T* pg = g.row_ptr(i);
                for (i64 j = 0; j < g.cols; ++j) pv[j] += pg[j];
            }
        });
        return o;
    }

    // ---- reductions ----

    VarId sum_all(VarId a) {
        const auto& A = val(a);
        T s = T(0);
        for (const T& v : A.data) s += v;
        VarId o = make(Tensor<T>::scalar(s), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (!t.needs_grad(a)) return;
            const T g = t.node(o).grad.data[0];
            auto& ga = t.node(a).grad;
            parallel_for(ga.rows, [&](i64 i) {
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < ga.cols; ++j) pa[j] += g;
            });
        });
        return o;
    }

    // Column means over rows: (R x C) -> (1 x C).
    VarId mean_rows(VarId a) {
        const auto& A = val(a);
        LID_CHECK(A.rows > 0, "mean_rows: empty input");
        Tensor<T> out(1, A.cols);
        for (i64 i = 0; i < A.rows; ++i) {
            const T* pa = A.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) out.data[static_cast<size_t>(j)] += pa[j];
        }
        const T inv = T(1) / static_cast<T>(A.rows);
        for (auto& v : out.data) v *= inv;
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, inv](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            parallel_for(ga.rows, [&](i64 i) {
                const T* pg = g.data.data();
                T* pa = ga.row_ptr(i);
                for (i64 j = 0; j < ga.cols; ++j) pa[j] += pg[j] * inv;
            });
        });
        return o;
    }

    // ---- row-wise normalizations ----

    VarId softmax_rows(VarId a) {
        const auto& A = val(a);
        Tensor<T> out(A.rows, A.cols);
        kern::softmax_rows(A, out);
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            const auto& y = t.val(o);
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                const T* py = y.row_ptr(i);
                T* pa = ga.row_ptr(i);
                T dot = T(0);
                for (i64 j = 0; j < g.cols; ++j) dot += pg[j] * py[j];
                for (i64 j = 0; j < g.cols; ++j) pa[j] += py[j] * (pg[j] - dot);
            });
        });
        return o;
    }

    VarId log_softmax_rows(VarId a) {
        const auto& A = val(a);
        Tensor<T> out(A.rows, A.cols);
        kern::log_softmax_rows(A, out);
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            const auto& y = t.val(o);
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                const T* py = y.row_ptr(i);
                T* pa = ga.row_ptr(i);
                T gsum = T(0);
                for (i64 j = 0; j < g.cols; ++j) gsum += pg[j];
                for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j] - std::exp(py[j]) * gsum;
            });
        });
        return o;
    }

    VarId layer_norm(VarId x, VarId gamma, VarId beta, double eps) {
        const auto& X = val(x);
        Tensor<T> out(X.rows, X.cols);
        Tensor<T> mean(X.rows, 1), rstd(X.rows, 1);
        kern::layer_norm_rows(X, val(gamma), val(beta), static_cast<T>(eps), out, &mean,
                              &rstd);
        VarId o = make(std::move(out),
                       needs_grad(x) || needs_grad(gamma) || needs_grad(beta), nullptr);
        set_bwd(o, [x, gamma, beta, o, mean = std::move(mean),
                    rstd = std::move(rstd)](Tape& t) {
            const auto& g = t.node(o).grad;
            const auto& X2 = t.val(x);
            const auto& gm = t.val(gamma);
            const i64 C = X2.cols;
            // dgamma and dbeta reduce over rows; keep the row loop serial so
            // accumulation order is fixed.
            if (t.needs_grad(gamma) || t.needs_grad(beta)) {
                Tensor<T>* gg = t.needs_grad(gamma) ? &t.node(gamma).grad : nullptr;
                Tensor<T>* gb = t.needs_grad(beta) ? &t.node(beta).grad : nullptr;
                for (i64 i = 0; i < X2.rows; ++i) {
                    const T* pg = g.row_ptr(i);
                    const T* px = X2.row_ptr(i);
                    const T mu = mean.data[static_cast<size_t>(i)];
                    const T rs = rstd.data[static_cast<size_t>(i)];
                    for (i64 j = 0; j < C; ++j) {
                        const T xhat = (px[j] - mu) * rs;
                        if (gg) gg->data[static_cast<size_t>(j)] += pg[j] * xhat;
                        if (gb) gb->data[static_cast<size_t>(j)] += pg[j];
                    }
                }
            }
            if (t.needs_grad(x)) {
                auto& gx = t.node(x).grad;
                parallel_for(X2.rows, [&](i64 i) {
                    const T* pg = g.row_ptr(i);
                    const T* px = X2.row_ptr(i);
                    const T* pgm = gm.data.data();
                    T* pa = gx.row_ptr(i);
                    const T mu = mean.data[static_cast<size_t>(i)];
                    const T rs = rstd.data[static_cast<size_t>(i)];
                    T s1 = T(0), s2 = T(0);
                    for (i64 j = 0; j < C; ++j) {
                        const T gj = pg[j] * pgm[j];
                        const T xhat = (px[j] - mu) * rs;
                        s1 += gj;
                        s2 += gj * xhat;
                    }
                    s1 /= static_cast<T>(C);
                    s2 /= static_cast<T>(C);
                    for (i64 j = 0; j < C; ++j) {
                        const T gj = pg[j] * pgm[j];
                        const T xhat = (px[j] - mu) * rs;
                        pa[j] += rs * (gj - s1 - xhat * s2);
                    }
                });
            }
        });
        return o;
    }

    // ---- selection and reshaping ----

    VarId gather_rows(VarId a, std::vector<i64> idx) {
        const auto& A = val(a);
        Tensor<T> out(static_cast<i64>(idx.size()), A.cols);
        for (size_t k = 0; k < idx.size(); ++k) {
            LID_CHECK(idx[k] >= 0 && idx[k] < A.rows, "gather_rows: index ", idx[k],
                      " out of range for ", A.rows, " rows");
            const T* src = A.row_ptr(idx[k]);
            T* dst = out.row_ptr(static_cast<i64>(k));
            for (i64 j = 0; j < A.cols; ++j) dst[j] = src[j];
        }
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, idx = std::move(idx)](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            // Indices may repeat, so scatter serially.
            for (size_t k = 0; k < idx.size(); ++k) {
                const T* pg = g.row_ptr(static_cast<i64>(k));
                T* pa = ga.row_ptr(idx[k]);
                for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j];
            }
        });
        return o;
    }

    // Picks one column per row: out(i, 0) = a(i, cols[i]).
    VarId gather_cols_per_row(VarId a, std::vector<i64> cols) {
        const auto& A = val(a);
        LID_CHECK(static_cast<i64>(cols.size()) == A.rows,
                  "gather_cols_per_row: need one column index per row");
        Tensor<T> out(A.rows, 1);
        for (i64 i = 0; i < A.rows; ++i) {
            LID_CHECK(cols[static_cast<size_t>(i)] >= 0 &&
                          cols[static_cast<size_t>(i)] < A.cols,
                      "gather_cols_per_row: column index out of range");
            out.data[static_cast<size_t>(i)] = A.at(i, cols[static_cast<size_t>(i)]);
        }
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, cols = std::move(cols)](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                ga.at(i, cols[static_cast<size_t>(i)]) += g.data[static_cast<size_t>(i)];
            });
        });
        return o;
    }

    VarId slice_rows(VarId a, i64 r0, i64 r1) {
        const auto& A = val(a);
        LID_CHECK(0 <= r0 && r0 < r1 && r1 <= A.rows, "slice_rows: bad range [", r0, ",",
                  r1, ") for ", A.rows, " rows");
        Tensor<T> out(r1 - r0, A.cols);
        parallel_for(r1 - r0, [&](i64 i) {
            const T* src = A.row_ptr(r0 + i);
            T* dst = out.row_ptr(i);
            for (i64 j = 0; j < A.cols; ++j) dst[j] = src[j];
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, r0](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                T* pa = ga.row_ptr(r0 + i);
                for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j];
            });
        });
        return o;
    }

    VarId slice_cols(VarId a, i64 c0, i64 c1) {
        const auto& A = val(a);
        LID_CHECK(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols: bad range [", c0, ",",
                  c1, ") for ", A.cols, " cols");
        Tensor<T> out(A.rows, c1 - c0);
        parallel_for(A.rows, [&](i64 i) {
            const T* src = A.row_ptr(i) + c0;
            T* dst = out.row_ptr(i);
            for (i64 j = 0; j < c1 - c0; ++j) dst[j] = src[j];
        });
        VarId o = make(std::move(out), needs_grad(a), nullptr);
        set_bwd(o, [a, o, c0](Tape& t) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.node(o).grad;
            auto& ga = t.node(a).grad;
            parallel_for(g.rows, [&](i64 i) {
                const T* pg = g.row_ptr(i);
                T* pa = ga.row_ptr(i) + c0;
                for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j];
            });
        });
        return o;
    }

    VarId concat_rows(const std::vector<VarId>& parts) {
        LID_CHECK(!parts.empty(), "concat_rows: no parts");
        const i64 C = val(parts[0]).cols;
        i64 R = 0;
        bool needs = false;
        for (VarId p : parts) {
            LID_CHECK(val(p).cols == C, "concat_rows: column mismatch");
            R += val(p).rows;
            needs = needs || needs_grad(p);
        }
        Tensor<T> out(R, C);
        i64 r = 0;
        for (VarId p : parts) {
            const auto& P = val(p);
            const i64 base = r;
            parallel_for(P.rows, [&](i64 i) {
                const T* src = P.row_ptr(i);
                T* dst = out.row_ptr(base + i);
                for (i64 j = 0; j < C; ++j) dst[j] = src[j];
            });
            r += P.rows;
        }
        VarId o = make(std::move(out), needs, nullptr);
        set_bwd(o, [parts, o](Tape& t) {
            const auto& g = t.node(o).grad;
            i64 r2 = 0;
            for (VarId p : parts) {
                const i64 rows = t.val(p).rows;
                if (t.needs_grad(p)) {
                    auto& gp = t.node(p).grad;
                    const i64 base = r2;
                    parallel_for(rows, [&](i64 i) {
                        const T* pg = g.row_ptr(base + i);
                        T* pa = gp.row_ptr(i);
                        for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j];
                    });
                }
                r2 += rows;
            }
        });
        return o;
    }

    VarId concat_cols(const std::vector<VarId>& parts) {
        LID_CHECK(!parts.empty(), "concat_cols: no parts");
        const i64 R = val(parts[0]).rows;
        i64 C = 0;
        bool needs = false;
        for (VarId p : parts) {
            LID_CHECK(val(p).rows == R, "concat_cols: row mismatch");
            C += val(p).cols;
            needs = needs || needs_grad(p);
        }
        Tensor<T> out(R, C);
        i64 c = 0;
        for (VarId p : parts) {
            const auto& P = val(p);
            const i64 base = c;
            parallel_for(R, [&](i64 i) {
                const T* src = P.row_ptr(i);
                T* dst = out.row_ptr(i) + base;
                for (i64 j = 0; j < P.cols; ++j) dst[j] = src[j];
            });
            c += P.cols;
        }
        VarId o = make(std::move(out), needs, nullptr);
        set_bwd(o, [parts, o](Tape& t) {
            const auto& g = t.node(o).grad;
            i64 c2 = 0;
            for (VarId p : parts) {
                const i64 cols = t.val(p).cols;
                if (t.needs_grad(p)) {
                    auto& gp = t.node(p).grad;
                    const i64 base = c2;
                    parallel_for(g.rows, [&](i64 i) {
                        const T* pg = g.row_ptr(i) + base;
                        T* pa = gp.row_ptr(i);
                        for (i64 j = 0; j < cols; ++j) pa[j] += pg[j];
                    });
                }
                c2 += cols;
            }
        });
        return o;
    }

    // ---- convolutions ----

    VarId conv1d_depthwise(VarId x, VarId w) {
        const auto& X = val(x);
        const auto& W = val(w);
        Tensor<T> out(X.rows, X.cols);
        kern::conv1d_depthwise(X, W, out);
        VarId o = make(std::move(out), needs_grad(x) || needs_grad(w), nullptr);
        set_bwd(o, [x, w, o](Tape& t) {
            const auto& g = t.node(o).grad;
            const auto& X2 = t.val(x);
            const auto& W2 = t.val(w);
            const i64 Tlen = X2.rows, C = X2.cols, K = W2.rows, pad = K / 2;
            if (t.needs_grad(x)) {
                auto& gx = t.node(x).grad;
                parallel_for(Tlen, [&](i64 s) {
                    T* pa = gx.row_ptr(s);
                    for (i64 k = 0; k < K; ++k) {
                        const i64 tpos = s - k + pad;
                        if (tpos < 0 || tpos >= Tlen) continue;
                        const T* pg = g.row_ptr(tpos);
                        const T* pw = W2.row_ptr(k);
                        for (i64 c = 0; c < C; ++c) pa[c] += pg[c] * pw[c];
                    }
                });
            }
            if (t.needs_grad(w)) {
                auto& gw = t.node(w).grad;
                parallel_for(K, [&](i64 k) {
                    T* pw = gw.row_ptr(k);
                    for (i64 tpos = 0; tpos < Tlen; ++tpos) {
                        const i64 src = tpos + k - pad;
                        if (src < 0 || src >= Tlen) continue;
                        const T* pg = g.row_ptr(tpos);
                        const T* px = X2.row_ptr(src);
                        for (i64 c = 0; c < C; ++c) pw[c] += pg[c] * px[c];
                    }
                });
            }
        });
        return o;
    }

    VarId conv1d_strided(VarId x, VarId w, VarId bias, i64 K, i64 stride, i64 pad) {
        const auto& X = val(x);
        const auto& W = val(w);
        const i64 Tout = kern::conv_out_len(X.rows, K, stride, pad);
        Tensor<T> out(Tout, W.cols);
        kern::conv1d_strided(X, W, val(bias), K, stride, pad, out);
        VarId o = make(std::move(out),
                       needs_grad(x) || needs_grad(w) || needs_grad(bias), nullptr);
        set_bwd(o, [x, w, bias, o, K, stride, pad](Tape& t) {
            const auto& g = t.node(o).grad;
            const auto& X2 = t.val(x);
            const auto& W2 = t.val(w);
            const i64 Tin = X2.rows, Cin = X2.cols, Cout = W2.cols, Tout2 = g.rows;
            if (t.needs_grad(bias)) {
                auto& gb = t.node(bias).grad;
                T* pb = gb.data.data();
                for (i64 to = 0; to < Tout2; ++to) {
                    const T* pg = g.row_ptr(to);
                    for (i64 co = 0; co < Cout; ++co) pb[co] += pg[co];
                }
            }
            if (t.needs_grad(w)) {
                auto& gw = t.node(w).grad;
                parallel_for(K, [&](i64 k) {
                    for (i64 to = 0; to < Tout2; ++to) {
                        const i64 src = to * stride + k - pad;
                        if (src < 0 || src >= Tin) continue;
                        const T* px = X2.row_ptr(src);
                        const T* pg = g.row_ptr(to);
                        for (i64 ci = 0; ci < Cin; ++ci) {
                            const T xv = px[ci];
                            T* pw = gw.row_ptr(k * Cin + ci);
                            for (i64 co = 0; co < Cout; ++co) pw[co] += xv * pg[co];
                        }
                    }
                });
            }
            if (t.needs_grad(x)) {
                // Transposed weights make the channel-in loop contiguous.
                Tensor<T> Wt(Cout, K * Cin);
                kern::transpose(W2, Wt);
                auto& gx = t.node(x).grad;
                parallel_for(Tin, [&](i64 s) {
                    T* pa = gx.row_ptr(s);
                    for (i64 k = 0; k < K; ++k) {
                        const i64 num = s + pad - k;
                        if (num < 0 || num % stride != 0) continue;
                        const i64 to = num / stride;
                        if (to >= Tout2) continue;
                        const T* pg = g.row_ptr(to);
                        for (i64 co = 0; co < Cout; ++co) {
                            const T gv = pg[co];
                            const T* pw = Wt.row_ptr(co) + k * Cin;
                            for (i64 ci = 0; ci < Cin; ++ci) pa[ci] += gv * pw[ci];
                        }
                    }
                });
            }
        });
        return o;
    }

    // ---- composite conveniences ----

    // x @ W + b with the bias broadcast over rows.
    VarId affine(VarId x, VarId w, VarId b) {
        VarId y = matmul(x, w);
        return add(y, expand_rows(b, val(y).rows));
    }

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        std::function<void(Tape&)> bwd;
        bool needs = false;
    };

    Node& node(VarId v) {
        LID_CHECK(v.valid() && v.id < size(), "invalid tape handle");
        return nodes_[static_cast<size_t>(v.id)];
    }
    const Node& node(VarId v) const {
        LID_CHECK(v.valid() && v.id < size(), "invalid tape handle");
        return nodes_[static_cast<size_t>(v.id)];
    }

    VarId make(Tensor<T> v, bool needs, std::function<void(Tape&)> bwd) {
        nodes_.push_back(Node{std::move(v), Tensor<T>{}, std::move(bwd), needs});
        return VarId{static_cast<i64>(nodes_.size()) - 1};
    }

    void set_bwd(VarId v, std::function<void(Tape&)> bwd) {
        Node& n = node(v);
        if (n.needs) n.bwd = std::move(bwd);
    }

    void accumulate(VarId target, const Tensor<T>& g) {
        auto& gt = node(target).grad;
        parallel_for(g.rows, [&](i64 i) {
            const T* pg = g.row_ptr(i);
            T* pa = gt.row_ptr(i);
            for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j];
        });
    }

    void accumulate_product(VarId target, const Tensor<T>& g, const Tensor<T>& other) {
        auto& gt = node(target).grad;
        parallel_for(g.rows, [&](i64 i) {
            const T* pg = g.row_ptr(i);
            const T* po = other.row_ptr(i);
            T* pa = gt.row_ptr(i);
            for (i64 j = 0; j < g.cols; ++j) pa[j] += pg[j] * po[j];
        });
    }

    std::vector<Node> nodes_;
};

} // namespace lidkit
