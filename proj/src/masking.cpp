#include "lidkit/masking.hpp"

#include <cmath>

namespace lidkit {

double mask_probability(double coverage, i64 span_frames) {
    LID_CHECK(coverage >= 0.0 && coverage < 1.0, "mask coverage must be in [0, 1), got ",
              coverage);
    LID_CHECK(span_frames > 0, "mask_probability: span must be positive");
    return 1.0 - std::pow(1.0 - coverage, 1.0 / static_cast<double>(span_frames));
}

std::vector<std::uint8_t> sample_mask(i64 num_frames, i64 span_frames, double coverage,
                                      Rng& rng) {
    LID_CHECK(num_frames > 0, "sample_mask: no frames");
    LID_CHECK(span_frames >= 0, "sample_mask: negative span");
    std::vector<std::uint8_t> mask(static_cast<size_t>(num_frames), 0);
    if (span_frames == 0 || coverage == 0.0) return mask;
    const double p = mask_probability(coverage, span_frames);
    for (i64 s = -(span_frames - 1); s < num_frames; ++s) {
        if (rng.uniform() >= p) continue;
        const i64 lo = std::max<i64>(0, s);
        const i64 hi = std::min(num_frames, s + span_frames);
        for (i64 t = lo; t < hi; ++t) mask[static_cast<size_t>(t)] = 1;
    }
    return mask;
}

Tensor<float> apply_mask_noise(const Tensor<float>& feats,
                               const std::vector<std::uint8_t>& mask, double noise_std,
                               Rng& rng) {
    LID_CHECK(static_cast<i64>(mask.size()) == feats.rows, "apply_mask_noise: mask has ",
              mask.size(), " entries for ", feats.rows, " frames");
    Tensor<float> out = feats;
    for (i64 t = 0; t < feats.rows; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        float* row = out.row_ptr(t);
        for (i64 j = 0; j < feats.cols; ++j)
            row[j] = static_cast<float>(noise_std * rng.normal());
    }
    return out;
}

std::vector<i64> masked_subsampled_positions(const std::vector<std::uint8_t>& mask,
                                             i64 sub_factor, i64 num_sub) {
    LID_CHECK(sub_factor > 0, "masked_subsampled_positions: bad factor");
    std::vector<i64> out;
    for (i64 u = 0; u < num_sub; ++u) {
        const i64 lo = u * sub_factor;
        const i64 hi = std::min<i64>(static_cast<i64>(mask.size()), lo + sub_factor);
        for (i64 t = lo; t < hi; ++t) {
            if (mask[static_cast<size_t>(t)]) {
                out.push_back(u);
                break;
            }
        }
    }
    return out;
}

} // namespace lidkit
