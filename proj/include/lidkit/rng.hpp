#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "lidkit/common.hpp"

namespace lidkit {

// splitmix64, used to expand a single seed into xoshiro state.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a over a label string; combined with the run seed to derive
// independent substreams (e.g. "mask", "init") that stay stable across
// code changes elsewhere.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256**. Hand-rolled so that streams are bit-identical across
// platforms and standard library versions; std::mt19937 would be portable
// but the std distributions are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64_next(sm);
    }

    Rng(std::uint64_t seed, std::string_view label)
        : Rng(seed ^ fnv1a(label)) {}

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1): top 53 bits scaled, the conventional construction.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). Rejection-free modulo would bias; use Lemire-style
    // rejection for exactness.
    std::uint64_t uniform_index(std::uint64_t n) {
        LID_CHECK(n > 0, "uniform_index: n must be positive");
        std::uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        std::uint64_t l = static_cast<std::uint64_t>(m);
        if (l < n) {
            std::uint64_t t = (0ULL - n) % n;
            while (l < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                l = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Standard normal via Box-Muller. Both values of the pair are used so
    // a stream of normals consumes exactly one uniform pair per two draws.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard against log(0).
        while (u1 == 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace lidkit
