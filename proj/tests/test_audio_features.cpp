#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lidkit/audio.hpp"
#include "lidkit/features.hpp"
#include "lidkit/rng.hpp"

using namespace lidkit;

namespace {

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * 3.14159265358979323846 *
                               static_cast<double>(k * t) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

} // namespace

TEST_CASE("wav round-trips int16-grid samples exactly") {
    Rng rng(3, "wav");
    std::vector<float> samples(4321);
    for (auto& s : samples) {
        const int q = static_cast<int>(rng.uniform_index(65536)) - 32768;
        s = static_cast<float>(q) / 32768.0f;
    }
    const auto path = temp_file("lidkit_roundtrip.wav");
    write_wav(path.string(), samples, 16000);
    const AudioClip clip = read_wav(path.string());
    CHECK(clip.sample_rate == 16000);
    REQUIRE(clip.samples.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i) CHECK(clip.samples[i] == samples[i]);
    std::filesystem::remove(path);
}

TEST_CASE("wav writer clamps out-of-range samples") {
    const auto path = temp_file("lidkit_clamp.wav");
    write_wav(path.string(), {2.0f, -2.0f, 0.0f}, 16000);
    const AudioClip clip = read_wav(path.string());
    CHECK(clip.samples[0] == doctest::Approx(32767.0f / 32768.0f));
    CHECK(clip.samples[1] == -1.0f);
    CHECK(clip.samples[2] == 0.0f);
    std::filesystem::remove(path);
}

TEST_CASE("wav reader rejects malformed input") {
    const auto path = temp_file("lidkit_bad.wav");

    CHECK_THROWS_AS(read_wav("/nonexistent/file.wav"), Error);

    std::ofstream(path.string(), std::ios::binary) << "not a wav at all";
    CHECK_THROWS_AS(read_wav(path.string()), Error);

    // A valid header claiming stereo.
    {
        std::ofstream f(path.string(), std::ios::binary);
        auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
        auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
        f.write("RIFF", 4);
        u32(36);
        f.write("WAVE", 4);
        f.write("fmt ", 4);
        u32(16);
        u16(1);
        u16(2); // stereo
        u32(16000);
        u32(64000);
        u16(4);
        u16(16);
        f.write("data", 4);
        u32(0);
    }
    CHECK_THROWS_WITH_AS(read_wav(path.string()),
                         doctest::Contains("only mono is supported"), Error);

    // Truncated data chunk.
    {
        std::ofstream f(path.string(), std::ios::binary);
        auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
        auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
        f.write("RIFF", 4);
        u32(36 + 100);
        f.write("WAVE", 4);
        f.write("fmt ", 4);
        u32(16);
        u16(1);
        u16(1);
        u32(16000);
        u32(32000);
        u16(2);
        u16(16);
        f.write("data", 4);
        u32(100);
        u16(0); // only 2 of the promised 100 bytes
    }
    CHECK_THROWS_WITH_AS(read_wav(path.string()), doctest::Contains("truncated"), Error);
    std::filesystem::remove(path);
}

TEST_CASE("wav reader skips unknown chunks") {
    const auto path = temp_file("lidkit_chunks.wav");
    {
        std::ofstream f(path.string(), std::ios::binary);
        auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
        auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
        f.write("RIFF", 4);
        u32(36 + 12 + 4);
        f.write("WAVE", 4);
        f.write("LIST", 4);
        u32(4);
        f.write("info", 4);
        f.write("fmt ", 4);
        u32(16);
        u16(1);
        u16(1);
        u32(16000);
        u32(32000);
        u16(2);
        u16(16);
        f.write("data", 4);
        u32(4);
        std::int16_t a = 1000, b = -1000;
        f.write(reinterpret_cast<char*>(&a), 2);
        f.write(reinterpret_cast<char*>(&b), 2);
    }
    const AudioClip clip = read_wav(path.string());
    REQUIRE(clip.samples.size() == 2);
    CHECK(clip.samples[0] == doctest::Approx(1000.0f / 32768.0f));
    std::filesystem::remove(path);
}

TEST_CASE("fft matches the direct dft") {
    Rng rng(5, "fft");
    for (size_t n : {4u, 8u, 64u, 512u}) {
        std::vector<std::complex<double>> x(n);
        for (auto& v : x) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        auto got = x;
        fft_radix2(got);
        const auto want = naive_dft(x);
        for (size_t k = 0; k < n; ++k)
            CHECK(std::abs(got[k] - want[k]) < 1e-9 * static_cast<double>(n));
    }
}

TEST_CASE("fft of an impulse is flat") {
    std::vector<std::complex<double>> x(16, {0.0, 0.0});
    x[0] = {1.0, 0.0};
    fft_radix2(x);
    for (const auto& v : x) CHECK(std::abs(v - std::complex<double>(1.0, 0.0)) < 1e-12);
}

TEST_CASE("fft rejects non-power-of-two sizes") {
    std::vector<std::complex<double>> x(12);
    CHECK_THROWS_AS(fft_radix2(x), Error);
}

TEST_CASE("frame count follows the full-window rule") {
    FeatureExtractor fe;
    CHECK(fe.num_frames(48000) == 298);
    CHECK(fe.num_frames(400) == 1);
    CHECK(fe.num_frames(399) == 0);
    CHECK(fe.num_frames(560) == 2);
    CHECK(fe.num_frames(559) == 1);
    CHECK_THROWS_AS(fe.logmel(std::vector<float>(399, 0.0f)), Error);
}

TEST_CASE("mel filters are non-empty and bounded") {
    FeatureExtractor fe;
    const auto& w = fe.mel_weights();
    REQUIRE(w.rows == 80);
    REQUIRE(w.cols == 257);
    for (i64 m = 0; m < w.rows; ++m) {
        double total = 0.0, peak = 0.0;
        for (i64 k = 0; k < w.cols; ++k) {
            CHECK(w.at(m, k) >= 0.0);
            total += w.at(m, k);
            peak = std::max(peak, w.at(m, k));
        }
        CHECK(total > 0.0);
        CHECK(peak <= 1.0);
    }
}

TEST_CASE("a 1 kHz tone lands in the matching mel bin") {
    FeatureExtractor fe;
    std::vector<float> sine(16000);
    for (size_t i = 0; i < sine.size(); ++i)
        sine[i] = 0.5f * static_cast<float>(
                             std::sin(2.0 * 3.14159265358979323846 * 1000.0 *
                                      static_cast<double>(i) / 16000.0));
    const auto feats = fe.logmel(sine);
    // On the HTK scale 1000 Hz sits at mel 1000.2; with 80 filters up to
    // 8 kHz the nearest filter centers are indices 27 and 28.
    for (i64 t = 0; t < feats.rows; ++t) {
        i64 argmax = 0;
        for (i64 m = 1; m < feats.cols; ++m)
            if (feats.at(t, m) > feats.at(t, argmax)) argmax = m;
        CHECK(argmax >= 27);
        CHECK(argmax <= 28);
    }
}

TEST_CASE("silence maps to the log floor") {
    FeatureExtractor fe;
    const auto feats = fe.logmel(std::vector<float>(800, 0.0f));
    const float floor_val = std::log(1e-6f);
    for (const auto& v : feats.data) CHECK(v == doctest::Approx(floor_val));
}

TEST_CASE("random_crop windows, repeats, and stays deterministic") {
    Rng fill(9, "crop-fill");
    Tensor<float> feats(400, 5);
    for (auto& v : feats.data) v = static_cast<float>(fill.uniform(-1, 1));

    Rng r1(42, "crop");
    Rng r2(42, "crop");
    const auto a = random_crop(feats, 300, r1);
    const auto b = random_crop(feats, 300, r2);
    REQUIRE(a.rows == 300);
    CHECK(a.data == b.data);

    // The crop must be a contiguous window of the input.
    bool found = false;
    for (i64 off = 0; off <= 100 && !found; ++off) {
        bool match = true;
        for (i64 t = 0; t < 300 && match; ++t)
            for (i64 j = 0; j < 5; ++j)
                if (a.at(t, j) != feats.at(off + t, j)) {
                    match = false;
                    break;
                }
        found = match;
    }
    CHECK(found);

    // Short inputs repeat periodically.
    Tensor<float> small(7, 3);
    for (auto& v : small.data) v = static_cast<float>(fill.uniform(-1, 1));
    Rng r3(42, "crop");
    const auto rep = random_crop(small, 20, r3);
    for (i64 t = 0; t < 20; ++t)
        for (i64 j = 0; j < 3; ++j) CHECK(rep.at(t, j) == small.at(t % 7, j));

    // Exact-length input comes through unchanged.
    Rng r4(42, "crop");
    const auto same = random_crop(small, 7, r4);
    CHECK(same.data == small.data);
}

TEST_CASE("feature stats match hand computation and floor degenerate bins") {
    Tensor<float> a(2, 2);
    a.at(0, 0) = 1.0f;
    a.at(0, 1) = 5.0f;
    a.at(1, 0) = 3.0f;
    a.at(1, 1) = 5.0f;
    Tensor<float> b(1, 2);
    b.at(0, 0) = 5.0f;
    b.at(0, 1) = 5.0f;
    const auto stats = compute_feature_stats({a, b});
    CHECK(stats.mean.at(0, 0) == doctest::Approx(3.0f));
    CHECK(stats.mean.at(0, 1) == doctest::Approx(5.0f));
    // Population std of {1,3,5} is sqrt(8/3).
    CHECK(stats.std.at(0, 0) == doctest::Approx(std::sqrt(8.0f / 3.0f)));
    // Constant bin hits the floor.
    CHECK(stats.std.at(0, 1) == doctest::Approx(1e-5f));
}

TEST_CASE("normalization gives zero mean and unit variance on its own corpus") {
    Rng rng(11, "norm");
    std::vector<Tensor<float>> corpus;
    for (int u = 0; u < 3; ++u) {
        Tensor<float> f(50, 4);
        for (auto& v : f.data) v = static_cast<float>(rng.uniform(-3.0, 7.0));
        corpus.push_back(std::move(f));
    }
    const auto stats = compute_feature_stats(corpus);
    double sum = 0.0, sumsq = 0.0;
    i64 n = 0;
    for (const auto& f : corpus) {
        const auto z = normalize(f, stats);
        for (const auto& v : z.data) {
            sum += v;
            sumsq += static_cast<double>(v) * v;
        }
        n += z.size();
    }
    CHECK(sum / static_cast<double>(n) == doctest::Approx(0.0).epsilon(1).scale(1e-4));
    CHECK(sumsq / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-3));
}
