#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lidkit/masking.hpp"

using namespace lidkit;

TEST_CASE("mask probability collapses correctly for unit spans") {
    CHECK(mask_probability(0.35, 1) == doctest::Approx(0.35));
    CHECK(mask_probability(0.0, 10) == doctest::Approx(0.0));
    // General case: survives-all-starts probability must reproduce coverage.
    for (i64 span : {8, 16, 24, 32, 40, 48}) {
        const double p = mask_probability(0.35, span);
        CHECK(std::pow(1.0 - p, static_cast<double>(span)) ==
              doctest::Approx(0.65).epsilon(1e-12));
    }
    CHECK_THROWS_AS(mask_probability(1.0, 4), Error);
    CHECK_THROWS_AS(mask_probability(0.35, 0), Error);
}

TEST_CASE("empirical coverage stays within a percent of the target at every span") {
    const i64 T = 300;
    const int trials = 10000;
    for (i64 span : {8, 16, 24, 32, 40, 48}) {
        Rng rng(1234, "mask-mc");
        i64 covered = 0;
        i64 first_frame = 0, last_frame = 0;
        for (int i = 0; i < trials; ++i) {
            const auto mask = sample_mask(T, span, 0.35, rng);
            for (auto m : mask) covered += m;
            first_frame += mask.front();
            last_frame += mask.back();
        }
        const double mean_cov =
            static_cast<double>(covered) / static_cast<double>(trials * T);
        CHECK_MESSAGE(std::abs(mean_cov - 0.35) < 0.01,
                      "span ", span, " coverage ", mean_cov);
        // Edge frames must not be under-covered; this is what the extended
        // start range buys.
        CHECK(std::abs(static_cast<double>(first_frame) / trials - 0.35) < 0.015);
        CHECK(std::abs(static_cast<double>(last_frame) / trials - 0.35) < 0.015);
    }
}

TEST_CASE("zero span disables masking") {
    Rng rng(7, "mask");
    const auto mask = sample_mask(100, 0, 0.35, rng);
    for (auto m : mask) CHECK(m == 0);
    // And consumes no randomness.
    Rng fresh(7, "mask");
    CHECK(rng.next_u64() == fresh.next_u64());
}

TEST_CASE("masks are deterministic per seed") {
    Rng a(99, "mask");
    Rng b(99, "mask");
    Rng c(100, "mask");
    const auto ma = sample_mask(300, 24, 0.35, a);
    const auto mb = sample_mask(300, 24, 0.35, b);
    const auto mc = sample_mask(300, 24, 0.35, c);
    CHECK(ma == mb);
    CHECK(ma != mc);
}

TEST_CASE("mask noise replaces only masked frames") {
    Rng rng(5, "mask-noise");
    Tensor<float> feats(10, 4, 3.5f);
    std::vector<std::uint8_t> mask(10, 0);
    mask[2] = mask[3] = mask[7] = 1;
    const auto out = apply_mask_noise(feats, mask, 0.1, rng);
    for (i64 t = 0; t < 10; ++t) {
        for (i64 j = 0; j < 4; ++j) {
            if (mask[static_cast<size_t>(t)]) {
                CHECK(out.at(t, j) != 3.5f);
                CHECK(std::abs(out.at(t, j)) < 1.0f); // ~N(0, 0.1^2)
            } else {
                CHECK(out.at(t, j) == 3.5f);
            }
        }
    }
}

TEST_CASE("mask noise has the requested scale") {
    Rng rng(6, "mask-noise");
    Tensor<float> feats(2000, 8, 0.0f);
    std::vector<std::uint8_t> mask(2000, 1);
    const auto out = apply_mask_noise(feats, mask, 0.1, rng);
    double sum = 0.0, sumsq = 0.0;
    for (const auto& v : out.data) {
        sum += v;
        sumsq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(out.size());
    CHECK(sum / n == doctest::Approx(0.0).epsilon(1).scale(0.005));
    CHECK(std::sqrt(sumsq / n) == doctest::Approx(0.1).epsilon(0.03));
}

TEST_CASE("sub-sampled positions flag any touched group") {
    std::vector<std::uint8_t> mask(12, 0);
    SUBCASE("single raw frame") {
        mask[5] = 1;
        CHECK(masked_subsampled_positions(mask, 4, 3) == std::vector<i64>{1});
    }
    SUBCASE("first group") {
        mask[0] = mask[1] = mask[2] = mask[3] = 1;
        CHECK(masked_subsampled_positions(mask, 4, 3) == std::vector<i64>{0});
    }
    SUBCASE("straddling groups") {
        mask[7] = mask[8] = 1;
        CHECK(masked_subsampled_positions(mask, 4, 3) == std::vector<i64>{1, 2});
    }
    SUBCASE("empty mask") {
        CHECK(masked_subsampled_positions(mask, 4, 3).empty());
    }
    SUBCASE("num_sub larger than the mask, tail group untouched") {
        mask[11] = 1;
        CHECK(masked_subsampled_positions(mask, 4, 5) == std::vector<i64>{2});
    }
}
