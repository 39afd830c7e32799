#pragma once

#include <complex>
#include <vector>

#include "lidkit/rng.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

struct FeatureConfig {
    i64 sample_rate = 16000;
    i64 win_length = 400;  // 25 ms
    i64 hop_length = 160;  // 10 ms
    i64 n_fft = 512;
    i64 n_mels = 80;
    double fmin_hz = 0.0;
    double fmax_hz = 8000.0;
};

// In-place radix-2 FFT, double precision. Exposed for testing against the
// direct DFT.
void fft_radix2(std::vector<std::complex<double>>& x);

// Log-mel spectrogram front end: periodic Hann window, power spectrum, HTK
// triangular mel filters, natural log with a 1e-6 energy floor. All
// intermediate math runs in double; the output is float32.
class FeatureExtractor {
public:
    explicit FeatureExtractor(FeatureConfig cfg = {});

    // (num_frames, n_mels); num_frames = 1 + floor((S - win) / hop), so
    // only fully covered windows produce frames.
    Tensor<float> logmel(const std::vector<float>& samples) const;

    i64 num_frames(i64 num_samples) const;

    const FeatureConfig& config() const { return cfg_; }
    // (n_mels, n_fft/2 + 1), exposed for tests.
    const Tensor<double>& mel_weights() const { return mel_weights_; }

private:
    FeatureConfig cfg_;
    std::vector<double> window_;
    Tensor<double> mel_weights_;
};

// Fixed-length crop along time. Longer inputs take a window at an offset
// drawn uniformly from [0, T - target]; shorter inputs repeat periodically
// (row t of the output is row t mod T of the input).
Tensor<float> random_crop(const Tensor<float>& feats, i64 target, Rng& rng);

struct FeatureStats {
    Tensor<float> mean; // (1, n_mels)
    Tensor<float> std;  // (1, n_mels)
};

// Per-bin mean and standard deviation over all frames of all utterances,
// accumulated in double and stored as float32. Standard deviations are
// floored at 1e-5 so constant bins stay finite under normalization.
FeatureStats compute_feature_stats(const std::vector<Tensor<float>>& features);

Tensor<float> normalize(const Tensor<float>& feats, const FeatureStats& stats);

} // namespace lidkit
