#include "lidkit/features.hpp"

#include <cmath>

namespace lidkit {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

} // namespace

void fft_radix2(std::vector<std::complex<double>>& x) {
    const size_t n = x.size();
    LID_CHECK(n > 0 && (n & (n - 1)) == 0, "fft: size must be a power of two, got ", n);
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = x[i + k];
                const std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg) : cfg_(cfg) {
    LID_CHECK(cfg_.n_fft >= cfg_.win_length, "n_fft ", cfg_.n_fft,
              " smaller than window ", cfg_.win_length);
    LID_CHECK((cfg_.n_fft & (cfg_.n_fft - 1)) == 0, "n_fft must be a power of two");
    LID_CHECK(cfg_.fmax_hz <= cfg_.sample_rate / 2.0, "fmax above Nyquist");

    // Periodic Hann window.
    window_.resize(static_cast<size_t>(cfg_.win_length));
    for (i64 i = 0; i < cfg_.win_length; ++i)
        window_[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                 static_cast<double>(cfg_.win_length));

    // Triangular filters with edges spaced uniformly on the HTK mel scale.
    const i64 bins = cfg_.n_fft / 2 + 1;
    const i64 npts = cfg_.n_mels + 2;
    std::vector<double> pts_hz(static_cast<size_t>(npts));
    const double mel_lo = hz_to_mel(cfg_.fmin_hz);
    const double mel_hi = hz_to_mel(cfg_.fmax_hz);
    for (i64 p = 0; p < npts; ++p)
        pts_hz[static_cast<size_t>(p)] = mel_to_hz(
            mel_lo + (mel_hi - mel_lo) * static_cast<double>(p) / static_cast<double>(npts - 1));

    mel_weights_ = Tensor<double>(cfg_.n_mels, bins);
    const double bin_hz = static_cast<double>(cfg_.sample_rate) / static_cast<double>(cfg_.n_fft);
    for (i64 m = 0; m < cfg_.n_mels; ++m) {
        const double lo = pts_hz[static_cast<size_t>(m)];
        const double mid = pts_hz[static_cast<size_t>(m + 1)];
        const double hi = pts_hz[static_cast<size_t>(m + 2)];
        for (i64 k = 0; k < bins; ++k) {
            const double f = bin_hz * static_cast<double>(k);
            double w = 0.0;
            if (f >= lo && f <= mid && mid > lo) {
                w = (f - lo) / (mid - lo);
            } else if (f > mid && f <= hi && hi > mid) {
                w = (hi - f) / (hi - mid);
            }
            mel_weights_.at(m, k) = w;
        }
    }
}

i64 FeatureExtractor::num_frames(i64 num_samples) const {
    if (num_samples < cfg_.win_length) return 0;
    return 1 + (num_samples - cfg_.win_length) / cfg_.hop_length;
}

Tensor<float> FeatureExtractor::logmel(const std::vector<float>& samples) const {
    const i64 T = num_frames(static_cast<i64>(samples.size()));
    LID_CHECK(T > 0, "logmel: clip of ", samples.size(),
              " samples is shorter than one window (", cfg_.win_length, ")");
    const i64 bins = cfg_.n_fft / 2 + 1;
    Tensor<float> out(T, cfg_.n_mels);
    std::vector<std::complex<double>> buf(static_cast<size_t>(cfg_.n_fft));
    std::vector<double> power(static_cast<size_t>(bins));

    for (i64 t = 0; t < T; ++t) {
        const i64 start = t * cfg_.hop_length;
        for (i64 i = 0; i < cfg_.win_length; ++i)
            buf[static_cast<size_t>(i)] = {
                static_cast<double>(samples[static_cast<size_t>(start + i)]) *
                    window_[static_cast<size_t>(i)],
                0.0};
        for (i64 i = cfg_.win_length; i < cfg_.n_fft; ++i)
            buf[static_cast<size_t>(i)] = {0.0, 0.0};
        fft_radix2(buf);
        for (i64 k = 0; k < bins; ++k)
            power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
        for (i64 m = 0; m < cfg_.n_mels; ++m) {
            const double* w = mel_weights_.row_ptr(m);
            double e = 0.0;
            for (i64 k = 0; k < bins; ++k) e += w[k] * power[static_cast<size_t>(k)];
            out.at(t, m) = static_cast<float>(std::log(e + 1e-6));
        }
    }
    return out;
}

Tensor<float> random_crop(const Tensor<float>& feats, i64 target, Rng& rng) {
    LID_CHECK(feats.rows > 0, "random_crop: empty features");
    LID_CHECK(target > 0, "random_crop: bad target length ", target);
    Tensor<float> out(target, feats.cols);
    if (feats.rows >= target) {
        const i64 offset = static_cast<i64>(
            rng.uniform_index(static_cast<std::uint64_t>(feats.rows - target + 1)));
        for (i64 t = 0; t < target; ++t) {
            const float* src = feats.row_ptr(offset + t);
            float* dst = out.row_ptr(t);
            for (i64 j = 0; j < feats.cols; ++j) dst[j] = src[j];
        }
    } else {
        for (i64 t = 0; t < target; ++t) {
            const float* src = feats.row_ptr(t % feats.rows);
            float* dst = out.row_ptr(t);
            for (i64 j = 0; j < feats.cols; ++j) dst[j] = src[j];
        }
    }
    return out;
}

FeatureStats compute_feature_stats(const std::vector<Tensor<float>>& features) {
    LID_CHECK(!features.empty(), "compute_feature_stats: no utterances");
    const i64 C = features[0].cols;
    std::vector<double> sum(static_cast<size_t>(C), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(C), 0.0);
    i64 n = 0;
    for (const auto& f : features) {
        LID_CHECK(f.cols == C, "compute_feature_stats: inconsistent bin counts");
        for (i64 t = 0; t < f.rows; ++t) {
            const float* row = f.row_ptr(t);
            for (i64 j = 0; j < C; ++j) {
                const double v = static_cast<double>(row[j]);
                sum[static_cast<size_t>(j)] += v;
                sumsq[static_cast<size_t>(j)] += v * v;
            }
        }
        n += f.rows;
    }
    LID_CHECK(n > 0, "compute_feature_stats: no frames");
    FeatureStats stats;
    stats.mean = Tensor<float>(1, C);
    stats.std = Tensor<float>(1, C);
    for (i64 j = 0; j < C; ++j) {
        const double m = sum[static_cast<size_t>(j)] / static_cast<double>(n);
        const double var =
            std::max(0.0, sumsq[static_cast<size_t>(j)] / static_cast<double>(n) - m * m);
        stats.mean.data[static_cast<size_t>(j)] = static_cast<float>(m);
        stats.std.data[static_cast<size_t>(j)] =
            static_cast<float>(std::max(std::sqrt(var), 1e-5));
    }
    return stats;
}

Tensor<float> normalize(const Tensor<float>& feats, const FeatureStats& stats) {
    LID_CHECK(stats.mean.cols == feats.cols && stats.std.cols == feats.cols,
              "normalize: stats have ", stats.mean.cols, " bins, features have ",
              feats.cols);
    Tensor<float> out(feats.rows, feats.cols);
    for (i64 t = 0; t < feats.rows; ++t) {
        const float* src = feats.row_ptr(t);
        float* dst = out.row_ptr(t);
        for (i64 j = 0; j < feats.cols; ++j)
            dst[j] = (src[j] - stats.mean.data[static_cast<size_t>(j)]) /
                     stats.std.data[static_cast<size_t>(j)];
    }
    return out;
}

} // namespace lidkit
