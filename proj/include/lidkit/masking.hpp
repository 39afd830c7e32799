#pragma once

#include <cstdint>
#include <vector>

#include "lidkit/rng.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

// Per-start firing probability that yields the requested expected coverage
// when spans of span_frames consecutive frames may overlap: each frame is
// covered by span starts at up to span_frames positions, so
// p = 1 - (1 - coverage)^(1/span_frames).
double mask_probability(double coverage, i64 span_frames);

// Samples a frame mask of length num_frames. Candidate span starts run over
// [-(span_frames - 1), num_frames) and fire independently with
// mask_probability(); a fired start s covers [max(0, s), min(T, s + span)).
// Letting starts hang off the left edge keeps the per-frame coverage
// probability exactly `coverage` for every frame, including the edges.
// span_frames == 0 disables masking and returns all zeros without consuming
// any randomness.
std::vector<std::uint8_t> sample_mask(i64 num_frames, i64 span_frames, double coverage,
                                      Rng& rng);

// Replaces masked frames with zero-mean Gaussian noise of the given
// standard deviation. Meant to run after normalization, so the noise has
// roughly the scale of the normalized features.
Tensor<float> apply_mask_noise(const Tensor<float>& feats,
                               const std::vector<std::uint8_t>& mask, double noise_std,
                               Rng& rng);

// Positions u in the sub-sampled sequence (factor sub_factor) for which any
// raw frame in [u * sub_factor, (u + 1) * sub_factor) is masked. Sorted
// ascending. num_sub limits the range, matching the encoder output length.
std::vector<i64> masked_subsampled_positions(const std::vector<std::uint8_t>& mask,
                                             i64 sub_factor, i64 num_sub);

} // namespace lidkit
