#pragma once

#include <vector>

#include "lidkit/common.hpp"
#include "lidkit/graph.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

// Mean cross-entropy over utterances: -1/B * sum_i log softmax(logits)_i[y_i].
template <class T>
VarId supervised_loss(Tape<T>& t, VarId logits, const std::vector<i64>& labels) {
    const i64 b = t.val(logits).rows;
    LID_CHECK(b > 0 && static_cast<i64>(labels.size()) == b,
              "got ", labels.size(), " labels for ", b, " logit rows");
    VarId lp = t.log_softmax_rows(logits);
    VarId picked = t.gather_cols_per_row(lp, labels);
    return t.scale(t.sum_all(picked), -1.0 / static_cast<double>(b));
}

// Masked-prediction cross-entropy. Logit rows are utterance-major;
// counts[b] says how many rows belong to utterance b (zero allowed). Each
// utterance's masked positions are averaged first, then utterances with at
// least one masked position are averaged, so long and short masks weigh the
// same.
template <class T>
VarId unsupervised_loss(Tape<T>& t, VarId logits, const std::vector<i64>& targets,
                        const std::vector<i64>& counts) {
    const i64 rows = t.val(logits).rows;
    LID_CHECK(static_cast<i64>(targets.size()) == rows,
              "got ", targets.size(), " targets for ", rows, " logit rows");
    i64 total = 0;
    i64 nonempty = 0;
    for (i64 c : counts) {
        LID_CHECK(c >= 0, "negative count");
        total += c;
        if (c > 0) ++nonempty;
    }
    LID_CHECK(total == rows, "counts sum to ", total, ", logits have ", rows, " rows");
    LID_CHECK(nonempty > 0, "no masked positions in any utterance");

    Tensor<T> w(rows, 1);
    i64 r = 0;
    for (i64 c : counts) {
        for (i64 i = 0; i < c; ++i) {
            w.at(r++, 0) = static_cast<T>(-1.0 / (static_cast<double>(c) * static_cast<double>(nonempty)));
        }
    }
    VarId lp = t.log_softmax_rows(logits);
    VarId picked = t.gather_cols_per_row(lp, targets);
    return t.sum_all(t.mul(picked, t.constant(std::move(w))));
}

// (1 - lambda) * supervised + lambda * unsupervised.
template <class T>
VarId combined_loss(Tape<T>& t, VarId sup, VarId unsup, double lambda) {
    LID_CHECK(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0, 1], got ", lambda);
    return t.add(t.scale(sup, 1.0 - lambda), t.scale(unsup, lambda));
}

// Fraction of rows whose argmax equals the target. Ties pick the lowest
// index, matching the quantizer's convention.
template <class T>
double argmax_accuracy(const Tensor<T>& logits, const std::vector<i64>& targets) {
    LID_CHECK(static_cast<i64>(targets.size()) == logits.rows,
              "got ", targets.size(), " targets for ", logits.rows, " logit rows");
    if (logits.rows == 0) return 0.0;
    i64 hits = 0;
    for (i64 r = 0; r < logits.rows; ++r) {
        const T* row = logits.row_ptr(r);
        i64 best = 0;
        for (i64 c = 1; c < logits.cols; ++c) {
            if (row[c] > row[best]) best = c;
        }
        if (best == targets[static_cast<size_t>(r)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

}  // namespace lidkit
