#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lidkit/rpq.hpp"

using namespace lidkit;

namespace {

// Solves the SPD system M x = b in place by Gaussian elimination with
// partial pivoting. Small systems only; used to construct inputs whose
// projection lands exactly on a codeword.
std::vector<double> solve_dense(Tensor<double> M, std::vector<double> b) {
    const i64 n = M.rows;
    for (i64 col = 0; col < n; ++col) {
        i64 piv = col;
        for (i64 r = col + 1; r < n; ++r)
            if (std::abs(M.at(r, col)) > std::abs(M.at(piv, col))) piv = r;
        if (piv != col) {
            for (i64 c = 0; c < n; ++c) std::swap(M.at(col, c), M.at(piv, c));
            std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(piv)]);
        }
        const double d = M.at(col, col);
        REQUIRE(std::abs(d) > 1e-12);
        for (i64 r = col + 1; r < n; ++r) {
            const double f = M.at(r, col) / d;
            for (i64 c = col; c < n; ++c) M.at(r, c) -= f * M.at(col, c);
            b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<size_t>(n));
    for (i64 r = n - 1; r >= 0; --r) {
        double acc = b[static_cast<size_t>(r)];
        for (i64 c = r + 1; c < n; ++c) acc -= M.at(r, c) * x[static_cast<size_t>(c)];
        x[static_cast<size_t>(r)] = acc / M.at(r, r);
    }
    return x;
}

} // namespace

TEST_CASE("stack_frames groups and pads with the last frame") {
    Tensor<float> f(6, 2);
    for (i64 t = 0; t < 6; ++t) {
        f.at(t, 0) = static_cast<float>(t);
        f.at(t, 1) = static_cast<float>(t) + 0.5f;
    }
    const auto s = stack_frames(f, 4);
    REQUIRE(s.rows == 2);
    REQUIRE(s.cols == 8);
    // Row 0: frames 0..3.
    for (i64 k = 0; k < 4; ++k) {
        CHECK(s.at(0, 2 * k) == static_cast<float>(k));
        CHECK(s.at(0, 2 * k + 1) == static_cast<float>(k) + 0.5f);
    }
    // Row 1: frames 4, 5, then 5 repeated twice.
    const float want[4] = {4.0f, 5.0f, 5.0f, 5.0f};
    for (i64 k = 0; k < 4; ++k) CHECK(s.at(1, 2 * k) == want[k]);

    const auto exact = stack_frames(Tensor<float>(8, 2, 1.0f), 4);
    CHECK(exact.rows == 2);
    const auto single = stack_frames(Tensor<float>(3, 2, 1.0f), 4);
    CHECK(single.rows == 1);
}

TEST_CASE("codewords are unit norm well within tolerance") {
    RandomQuantizer q({320, 16, 256}, 7);
    const auto& cb = q.codebook();
    for (i64 j = 0; j < cb.rows; ++j) {
        double norm = 0.0;
        for (i64 d = 0; d < cb.cols; ++d) norm += cb.at(j, d) * cb.at(j, d);
        CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
    }
}

TEST_CASE("projection entries respect the xavier bound") {
    const QuantizerConfig cfg{320, 16, 64};
    RandomQuantizer q(cfg, 21);
    const double limit = std::sqrt(6.0 / (320.0 + 16.0));
    double mean = 0.0;
    for (const auto& v : q.projection().data) {
        CHECK(std::abs(v) <= limit);
        mean += v;
    }
    mean /= static_cast<double>(q.projection().size());
    CHECK(std::abs(mean) < 0.005);
}

TEST_CASE("tables are a pure function of the seed") {
    RandomQuantizer a({320, 16, 64}, 5);
    RandomQuantizer b({320, 16, 64}, 5);
    RandomQuantizer c({320, 16, 64}, 6);
    CHECK(a.projection().data == b.projection().data);
    CHECK(a.codebook().data == b.codebook().data);
    CHECK(a.projection().data != c.projection().data);
}

TEST_CASE("inputs projecting onto a codeword are labeled with it") {
    const QuantizerConfig cfg{320, 16, 64};
    RandomQuantizer q(cfg, 11);
    const auto& A = q.projection();

    // Gram matrix A A^T (16 x 16).
    Tensor<double> G(cfg.proj_dim, cfg.proj_dim);
    for (i64 r = 0; r < cfg.proj_dim; ++r)
        for (i64 c = 0; c < cfg.proj_dim; ++c) {
            double acc = 0.0;
            for (i64 f = 0; f < cfg.input_dim; ++f) acc += A.at(r, f) * A.at(c, f);
            G.at(r, c) = acc;
        }

    for (i64 j = 0; j < cfg.codebook_size; ++j) {
        // Least-norm preimage x = A^T (A A^T)^{-1} c_j, so A x = c_j exactly
        // (up to float32 storage of x).
        std::vector<double> cj(static_cast<size_t>(cfg.proj_dim));
        for (i64 d = 0; d < cfg.proj_dim; ++d) cj[static_cast<size_t>(d)] = q.codebook().at(j, d);
        const auto y = solve_dense(G, cj);
        Tensor<float> x(1, cfg.input_dim);
        for (i64 f = 0; f < cfg.input_dim; ++f) {
            double acc = 0.0;
            for (i64 d = 0; d < cfg.proj_dim; ++d) acc += A.at(d, f) * y[static_cast<size_t>(d)];
            x.at(0, f) = static_cast<float>(acc);
        }
        const auto labels = q.quantize(x);
        REQUIRE(labels.size() == 1);
        CHECK(labels[0] == j);
    }
}

TEST_CASE("zero projections tie-break to the lowest index") {
    RandomQuantizer q({320, 16, 64}, 3);
    Tensor<float> x(1, 320, 0.0f);
    CHECK(q.quantize(x)[0] == 0);
}

TEST_CASE("labels are deterministic and the call counter advances") {
    RandomQuantizer q({8, 4, 16}, 9);
    Rng rng(1, "rpq-in");
    Tensor<float> x(10, 8);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
    CHECK(q.calls() == 0);
    const auto l1 = q.quantize(x);
    const auto l2 = q.quantize(x);
    CHECK(l1 == l2);
    CHECK(q.calls() == 2);
    for (auto l : l1) {
        CHECK(l >= 0);
        CHECK(l < 16);
    }
}

TEST_CASE("quantize rejects mismatched input width") {
    RandomQuantizer q({8, 4, 16}, 9);
    Tensor<float> x(1, 7);
    CHECK_THROWS_AS(q.quantize(x), Error);
}
