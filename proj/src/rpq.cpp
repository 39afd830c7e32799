#include "lidkit/rpq.hpp"

#include <cmath>

namespace lidkit {

Tensor<float> stack_frames(const Tensor<float>& feats, i64 sub_factor) {
    LID_CHECK(sub_factor > 0, "stack_frames: bad factor");
    LID_CHECK(feats.rows > 0, "stack_frames: empty features");
    const i64 T = feats.rows, F = feats.cols;
    const i64 U = (T + sub_factor - 1) / sub_factor;
    Tensor<float> out(U, F * sub_factor);
    for (i64 u = 0; u < U; ++u) {
        float* dst = out.row_ptr(u);
        for (i64 k = 0; k < sub_factor; ++k) {
            const i64 t = std::min(u * sub_factor + k, T - 1);
            const float* src = feats.row_ptr(t);
            for (i64 j = 0; j < F; ++j) dst[k * F + j] = src[j];
        }
    }
    return out;
}

RandomQuantizer::RandomQuantizer(const QuantizerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
    LID_CHECK(cfg_.input_dim > 0 && cfg_.proj_dim > 0 && cfg_.codebook_size > 0,
              "quantizer config must be positive");
    Rng rng(seed, "quantizer");

    projection_ = Tensor<double>(cfg_.proj_dim, cfg_.input_dim);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(cfg_.input_dim + cfg_.proj_dim));
    for (auto& v : projection_.data) v = rng.uniform(-limit, limit);

    codebook_ = Tensor<double>(cfg_.codebook_size, cfg_.proj_dim);
    for (auto& v : codebook_.data) v = rng.normal();
    for (i64 j = 0; j < cfg_.codebook_size; ++j) {
        double* row = codebook_.row_ptr(j);
        double norm = 0.0;
        for (i64 d = 0; d < cfg_.proj_dim; ++d) norm += row[d] * row[d];
        norm = std::sqrt(norm);
        LID_CHECK(norm > 0.0, "quantizer: degenerate codeword ", j);
        for (i64 d = 0; d < cfg_.proj_dim; ++d) row[d] /= norm;
    }
}

std::vector<i64> RandomQuantizer::quantize(const Tensor<float>& stacked) const {
    LID_CHECK(stacked.cols == cfg_.input_dim, "quantize: input dim ", stacked.cols,
              " does not match projection dim ", cfg_.input_dim);
    calls_.fetch_add(1, std::memory_order_relaxed);
    std::vector<i64> labels(static_cast<size_t>(stacked.rows));
    std::vector<double> v(static_cast<size_t>(cfg_.proj_dim));
    for (i64 u = 0; u < stacked.rows; ++u) {
        const float* x = stacked.row_ptr(u);
        double norm = 0.0;
        for (i64 d = 0; d < cfg_.proj_dim; ++d) {
            const double* a = projection_.row_ptr(d);
            double acc = 0.0;
            for (i64 f = 0; f < cfg_.input_dim; ++f) acc += a[f] * static_cast<double>(x[f]);
            v[static_cast<size_t>(d)] = acc;
            norm += acc * acc;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (auto& vd : v) vd /= norm;

        i64 best = 0;
        double best_d2 = 0.0;
        for (i64 j = 0; j < cfg_.codebook_size; ++j) {
            const double* c = codebook_.row_ptr(j);
            double d2 = 0.0;
            for (i64 d = 0; d < cfg_.proj_dim; ++d) {
                const double diff = v[static_cast<size_t>(d)] - c[d];
                d2 += diff * diff;
            }
            if (j == 0 || d2 < best_d2) {
                best = j;
                best_d2 = d2;
            }
        }
        labels[static_cast<size_t>(u)] = best;
    }
    return labels;
}

} // namespace lidkit
