#pragma once

#include <atomic>
#include <vector>

#include "lidkit/rng.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

// Stacks sub_factor consecutive frames into one row: (T, F) -> (U, F*s)
// with U = ceil(T / s). The tail pads by repeating the last frame so the
// row count matches the encoder's sub-sampled length.
Tensor<float> stack_frames(const Tensor<float>& feats, i64 sub_factor);

struct QuantizerConfig {
    i64 input_dim = 320;     // stacked feature dim, n_mels * sub_factor
    i64 proj_dim = 16;       // projection output dim
    i64 codebook_size = 256; // number of codewords
};

// Frozen random-projection quantizer: a fixed Xavier-uniform projection
// followed by nearest-neighbour lookup in a fixed codebook of unit-norm
// Gaussian vectors. Nothing here ever trains; the tables are fully
// determined by (config, seed) and all math runs in double so codeword
// norms hold to far better than 1e-6.
class RandomQuantizer {
public:
    RandomQuantizer(const QuantizerConfig& cfg, std::uint64_t seed);

    // One label per row of the stacked input: argmin_j of the distance
    // between the L2-normalized projection and codeword j, ties resolved
    // to the lowest index. A zero projection is left at zero (equidistant
    // from every codeword, so the tie rule gives label 0).
    std::vector<i64> quantize(const Tensor<float>& stacked) const;

    const Tensor<double>& projection() const { return projection_; }
    const Tensor<double>& codebook() const { return codebook_; }
    const QuantizerConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    // Number of quantize() calls served, for pipeline accounting.
    u64 calls() const { return calls_.load(std::memory_order_relaxed); }

private:
    QuantizerConfig cfg_;
    std::uint64_t seed_;
    Tensor<double> projection_; // (proj_dim, input_dim)
    Tensor<double> codebook_;   // (codebook_size, proj_dim)
    mutable std::atomic<u64> calls_{0};
};

} // namespace lidkit
