#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidkit/common.hpp"
#include "lidkit/graph.hpp"
#include "lidkit/rng.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

struct EncoderConfig {
    i64 n_mels = 80;
    i64 dim = 64;
    i64 layers = 4;
    i64 heads = 4;
    i64 conv_kernel = 15;
    i64 ffn_mult = 4;
    i64 sub_factor = 4;
    i64 tap_layer = 3;
    double ln_eps = 1e-5;
};

inline void validate(const EncoderConfig& cfg) {
    LID_CHECK(cfg.n_mels > 0, "n_mels must be positive");
    LID_CHECK(cfg.dim > 0, "dim must be positive");
    LID_CHECK(cfg.layers > 0, "layers must be positive");
    LID_CHECK(cfg.heads > 0 && cfg.dim % cfg.heads == 0,
              "dim ", cfg.dim, " must be divisible by heads ", cfg.heads);
    LID_CHECK(cfg.conv_kernel > 0 && cfg.conv_kernel % 2 == 1,
              "conv_kernel must be odd, got ", cfg.conv_kernel);
    LID_CHECK(cfg.ffn_mult > 0, "ffn_mult must be positive");
    LID_CHECK(cfg.sub_factor == 4, "frontend always subsamples by 4, got sub_factor ", cfg.sub_factor);
    LID_CHECK(cfg.tap_layer >= 1 && cfg.tap_layer <= cfg.layers,
              "tap_layer ", cfg.tap_layer, " out of range 1..", cfg.layers);
}

// Number of frontend output rows for an utterance of raw_frames feature rows.
// Two stride-2 convolutions with kernel 3 and padding 1 each halve the length,
// rounding up.
inline i64 subsampled_len(i64 raw_frames) {
    i64 a = (raw_frames + 1) / 2;
    return (a + 1) / 2;
}

// Named parameter tensors in a stable creation order. The order defines both
// the RNG draw sequence at init and the serialization layout.
class ParamStore {
  public:
    Tensor<float>& add(const std::string& name, i64 rows, i64 cols) {
        LID_CHECK(tensors_.find(name) == tensors_.end(), "duplicate parameter ", name);
        names_.push_back(name);
        auto [it, ok] = tensors_.emplace(name, Tensor<float>(rows, cols));
        (void)ok;
        return it->second;
    }

    Tensor<float>& get(const std::string& name) {
        auto it = tensors_.find(name);
        LID_CHECK(it != tensors_.end(), "unknown parameter ", name);
        return it->second;
    }

    const Tensor<float>& get(const std::string& name) const {
        auto it = tensors_.find(name);
        LID_CHECK(it != tensors_.end(), "unknown parameter ", name);
        return it->second;
    }

    bool has(const std::string& name) const { return tensors_.find(name) != tensors_.end(); }

    const std::vector<std::string>& names() const { return names_; }

    i64 total_elements() const {
        i64 n = 0;
        for (const auto& name : names_) {
            const auto& t = tensors_.at(name);
            n += t.rows * t.cols;
        }
        return n;
    }

  private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Tensor<float>> tensors_;
};

namespace detail {

inline void fill_xavier(Tensor<float>& w, i64 fan_in, i64 fan_out, double gain, Rng& rng) {
    double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-limit, limit));
}

inline void fill_const(Tensor<float>& w, float value) {
    for (auto& v : w.data) v = value;
}

// Dense layer: weight uses its own shape as fans, bias starts at zero.
inline void init_linear(ParamStore& ps, const std::string& prefix, i64 in, i64 out, double gain, Rng& rng) {
    fill_xavier(ps.add(prefix + ".w", in, out), in, out, gain, rng);
    fill_const(ps.add(prefix + ".b", 1, out), 0.0f);
}

inline void init_layer_norm(ParamStore& ps, const std::string& prefix, i64 width) {
    fill_const(ps.add(prefix + ".g", 1, width), 1.0f);
    fill_const(ps.add(prefix + ".b", 1, width), 0.0f);
}

}  // namespace detail

// Creates every model parameter and fills it from a single RNG stream. The
// draw sequence is the parameter creation order, so init is reproducible
// from (seed, shapes) alone. The two output heads use a 0.1 gain: pooled
// encoder rows stay O(1) after the final layer norm, and a full-size head
// init would push the untrained losses visibly above the
// uniform-prediction values.
inline ParamStore init_model_params(const EncoderConfig& cfg, i64 n_classes, i64 codebook_size, u64 seed) {
    validate(cfg);
    LID_CHECK(n_classes > 0, "n_classes must be positive");
    LID_CHECK(codebook_size > 0, "codebook_size must be positive");
    Rng rng(seed, "init");
    ParamStore ps;

    const i64 d = cfg.dim;
    const i64 dff = cfg.dim * cfg.ffn_mult;
    const i64 k = cfg.conv_kernel;

    // Frontend: conv weights use kernel*channels fans.
    detail::fill_xavier(ps.add("frontend.conv1.w", 3 * cfg.n_mels, d), 3 * cfg.n_mels, 3 * d, 1.0, rng);
    detail::fill_const(ps.add("frontend.conv1.b", 1, d), 0.0f);
    detail::fill_xavier(ps.add("frontend.conv2.w", 3 * d, d), 3 * d, 3 * d, 1.0, rng);
    detail::fill_const(ps.add("frontend.conv2.b", 1, d), 0.0f);
    detail::init_linear(ps, "frontend.proj", d, d, 1.0, rng);

    for (i64 b = 0; b < cfg.layers; ++b) {
        const std::string p = concat("block", b, ".");
        detail::init_layer_norm(ps, p + "ffn1.ln", d);
        detail::init_linear(ps, p + "ffn1.w1", d, dff, 1.0, rng);
        detail::init_linear(ps, p + "ffn1.w2", dff, d, 1.0, rng);

        detail::init_layer_norm(ps, p + "attn.ln", d);
        detail::init_linear(ps, p + "attn.q", d, d, 1.0, rng);
        detail::init_linear(ps, p + "attn.k", d, d, 1.0, rng);
        detail::init_linear(ps, p + "attn.v", d, d, 1.0, rng);
        detail::init_linear(ps, p + "attn.o", d, d, 1.0, rng);

        detail::init_layer_norm(ps, p + "conv.ln", d);
        detail::init_linear(ps, p + "conv.pw1", d, 2 * d, 1.0, rng);
        detail::fill_xavier(ps.add(p + "conv.dw.w", k, d), k, k, 1.0, rng);
        detail::init_linear(ps, p + "conv.pw2", d, d, 1.0, rng);

        detail::init_layer_norm(ps, p + "ffn2.ln", d);
        detail::init_linear(ps, p + "ffn2.w1", d, dff, 1.0, rng);
        detail::init_linear(ps, p + "ffn2.w2", dff, d, 1.0, rng);

        detail::init_layer_norm(ps, p + "out_ln", d);
    }

    detail::init_linear(ps, "head.cls", d, n_classes, 0.1, rng);
    detail::init_linear(ps, "head.mlm", d, codebook_size, 0.1, rng);
    return ps;
}

// pe[u, 2i] = sin(u / 10000^(2i/dim)), pe[u, 2i+1] = cos of the same angle.
template <class T>
Tensor<T> sinusoidal_encoding(i64 rows, i64 dim) {
    Tensor<T> pe(rows, dim);
    for (i64 u = 0; u < rows; ++u) {
        for (i64 i = 0; 2 * i < dim; ++i) {
            double angle = static_cast<double>(u) *
                           std::exp(-std::log(10000.0) * static_cast<double>(2 * i) / static_cast<double>(dim));
            pe.at(u, 2 * i) = static_cast<T>(std::sin(angle));
            if (2 * i + 1 < dim) pe.at(u, 2 * i + 1) = static_cast<T>(std::cos(angle));
        }
    }
    return pe;
}

// Tape leaves for every parameter, converted to the tape's element type.
template <class T>
std::unordered_map<std::string, VarId> make_param_leaves(Tape<T>& tape, const ParamStore& ps, bool requires_grad = true) {
    std::unordered_map<std::string, VarId> leaves;
    for (const auto& name : ps.names()) {
        const auto& src = ps.get(name);
        Tensor<T> t(src.rows, src.cols);
        for (size_t i = 0; i < src.data.size(); ++i) t.data[i] = static_cast<T>(src.data[i]);
        leaves.emplace(name, tape.leaf(std::move(t), requires_grad));
    }
    return leaves;
}

// Result of one forward build over a batch of utterances. Rows of both
// outputs are utterance-major: utterance b occupies rows
// [offsets[b], offsets[b+1]).
struct EncoderOut {
    VarId final_out;          // after the last block, input to the classifier head
    VarId tap_out;            // after the tap block, input to the mask-prediction head
    std::vector<i64> offsets; // size B+1
};

namespace detail {

template <class T>
VarId param(Tape<T>&, const std::unordered_map<std::string, VarId>& leaves, const std::string& name) {
    auto it = leaves.find(name);
    LID_CHECK(it != leaves.end(), "missing parameter leaf ", name);
    return it->second;
}

// Half-weighted feed-forward residual: x + 0.5 * FFN(LN(x)).
template <class T>
VarId half_ffn(Tape<T>& t, const std::unordered_map<std::string, VarId>& L, const std::string& p, VarId x, double eps) {
    VarId h = t.layer_norm(x, param(t, L, p + ".ln.g"), param(t, L, p + ".ln.b"), eps);
    h = t.swish(t.affine(h, param(t, L, p + ".w1.w"), param(t, L, p + ".w1.b")));
    h = t.affine(h, param(t, L, p + ".w2.w"), param(t, L, p + ".w2.b"));
    return t.add(x, t.scale(h, 0.5));
}

template <class T>
VarId conformer_block(Tape<T>& t, const std::unordered_map<std::string, VarId>& L, const EncoderConfig& cfg,
                      VarId x, const std::vector<i64>& offsets, i64 block_index) {
    const std::string p = concat("block", block_index, ".");
    const i64 n_utts = static_cast<i64>(offsets.size()) - 1;
    const i64 dh = cfg.dim / cfg.heads;

    x = half_ffn(t, L, p + "ffn1", x, cfg.ln_eps);

    // Self-attention. Projections are batched across utterances; the
    // attention itself never crosses utterance boundaries.
    {
        VarId a = t.layer_norm(x, param(t, L, p + "attn.ln.g"), param(t, L, p + "attn.ln.b"), cfg.ln_eps);
        VarId q = t.affine(a, param(t, L, p + "attn.q.w"), param(t, L, p + "attn.q.b"));
        VarId k = t.affine(a, param(t, L, p + "attn.k.w"), param(t, L, p + "attn.k.b"));
        VarId v = t.affine(a, param(t, L, p + "attn.v.w"), param(t, L, p + "attn.v.b"));
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        std::vector<VarId> utt_ctx;
        utt_ctx.reserve(static_cast<size_t>(n_utts));
        for (i64 b = 0; b < n_utts; ++b) {
            VarId qb = t.slice_rows(q, offsets[b], offsets[b + 1]);
            VarId kb = t.slice_rows(k, offsets[b], offsets[b + 1]);
            VarId vb = t.slice_rows(v, offsets[b], offsets[b + 1]);
            std::vector<VarId> head_ctx;
            head_ctx.reserve(static_cast<size_t>(cfg.heads));
            for (i64 h = 0; h < cfg.heads; ++h) {
                VarId qh = t.slice_cols(qb, h * dh, (h + 1) * dh);
                VarId kh = t.slice_cols(kb, h * dh, (h + 1) * dh);
                VarId vh = t.slice_cols(vb, h * dh, (h + 1) * dh);
                VarId scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_dh);
                head_ctx.push_back(t.matmul(t.softmax_rows(scores), vh));
            }
            utt_ctx.push_back(t.concat_cols(head_ctx));
        }
        VarId ctx = n_utts == 1 ? utt_ctx[0] : t.concat_rows(utt_ctx);
        x = t.add(x, t.affine(ctx, param(t, L, p + "attn.o.w"), param(t, L, p + "attn.o.b")));
    }

    // Convolution module: pointwise up, GLU, depthwise per utterance, swish,
    // pointwise down.
    {
        VarId c = t.layer_norm(x, param(t, L, p + "conv.ln.g"), param(t, L, p + "conv.ln.b"), cfg.ln_eps);
        c = t.affine(c, param(t, L, p + "conv.pw1.w"), param(t, L, p + "conv.pw1.b"));
        VarId gated = t.mul(t.slice_cols(c, 0, cfg.dim),
                            t.sigmoid(t.slice_cols(c, cfg.dim, 2 * cfg.dim)));
        VarId dw = param(t, L, p + "conv.dw.w");
        std::vector<VarId> parts;
        parts.reserve(static_cast<size_t>(n_utts));
        for (i64 b = 0; b < n_utts; ++b) {
            parts.push_back(t.conv1d_depthwise(t.slice_rows(gated, offsets[b], offsets[b + 1]), dw));
        }
        VarId d = n_utts == 1 ? parts[0] : t.concat_rows(parts);
        d = t.affine(t.swish(d), param(t, L, p + "conv.pw2.w"), param(t, L, p + "conv.pw2.b"));
        x = t.add(x, d);
    }

    x = half_ffn(t, L, p + "ffn2", x, cfg.ln_eps);
    return t.layer_norm(x, param(t, L, p + "out_ln.g"), param(t, L, p + "out_ln.b"), cfg.ln_eps);
}

}  // namespace detail

// Builds the forward graph for a batch of normalized log-mel utterances,
// each (T_b, n_mels). Inputs enter the tape as constants.
template <class T>
EncoderOut build_encoder(Tape<T>& t, const std::unordered_map<std::string, VarId>& leaves,
                         const EncoderConfig& cfg, const std::vector<Tensor<T>>& inputs) {
    validate(cfg);
    LID_CHECK(!inputs.empty(), "empty batch");
    const i64 n_utts = static_cast<i64>(inputs.size());

    std::vector<VarId> fronts;
    fronts.reserve(static_cast<size_t>(n_utts));
    std::vector<i64> offsets(static_cast<size_t>(n_utts) + 1, 0);
    for (i64 b = 0; b < n_utts; ++b) {
        const auto& feats = inputs[static_cast<size_t>(b)];
        LID_CHECK(feats.cols == cfg.n_mels, "utterance ", b, " has ", feats.cols, " columns, expected ", cfg.n_mels);
        LID_CHECK(feats.rows >= 4, "utterance ", b, " too short: ", feats.rows, " frames");
        VarId x = t.constant(feats);
        x = t.swish(t.conv1d_strided(x, detail::param(t, leaves, "frontend.conv1.w"),
                                     detail::param(t, leaves, "frontend.conv1.b"), 3, 2, 1));
        x = t.swish(t.conv1d_strided(x, detail::param(t, leaves, "frontend.conv2.w"),
                                     detail::param(t, leaves, "frontend.conv2.b"), 3, 2, 1));
        x = t.affine(x, detail::param(t, leaves, "frontend.proj.w"), detail::param(t, leaves, "frontend.proj.b"));
        const i64 rows = t.val(x).rows;
        LID_CHECK(rows == subsampled_len(feats.rows), "frontend length mismatch");
        x = t.add(x, t.constant(sinusoidal_encoding<T>(rows, cfg.dim)));
        fronts.push_back(x);
        offsets[static_cast<size_t>(b) + 1] = offsets[static_cast<size_t>(b)] + rows;
    }

    VarId x = n_utts == 1 ? fronts[0] : t.concat_rows(fronts);
    VarId tap{};
    for (i64 b = 0; b < cfg.layers; ++b) {
        x = detail::conformer_block(t, leaves, cfg, x, offsets, b);
        if (b + 1 == cfg.tap_layer) tap = x;
    }
    return EncoderOut{x, tap, std::move(offsets)};
}

// Language logits, one row per utterance: mean-pool each utterance's final
// rows, then the classifier head.
template <class T>
VarId classifier_logits(Tape<T>& t, const std::unordered_map<std::string, VarId>& leaves, const EncoderOut& enc) {
    const i64 n_utts = static_cast<i64>(enc.offsets.size()) - 1;
    std::vector<VarId> pooled;
    pooled.reserve(static_cast<size_t>(n_utts));
    for (i64 b = 0; b < n_utts; ++b) {
        pooled.push_back(t.mean_rows(t.slice_rows(enc.final_out, enc.offsets[b], enc.offsets[b + 1])));
    }
    VarId p = n_utts == 1 ? pooled[0] : t.concat_rows(pooled);
    return t.affine(p, detail::param(t, leaves, "head.cls.w"), detail::param(t, leaves, "head.cls.b"));
}

// Mask-prediction logits for the selected tap rows. positions[b] holds
// subsampled frame indices local to utterance b; the result is one row per
// position, utterance-major, in the given order.
template <class T>
VarId mlm_logits(Tape<T>& t, const std::unordered_map<std::string, VarId>& leaves, const EncoderOut& enc,
                 const std::vector<std::vector<i64>>& positions) {
    const i64 n_utts = static_cast<i64>(enc.offsets.size()) - 1;
    LID_CHECK(static_cast<i64>(positions.size()) == n_utts, "positions for ", positions.size(),
              " utterances, batch has ", n_utts);
    std::vector<i64> rows;
    for (i64 b = 0; b < n_utts; ++b) {
        const i64 len = enc.offsets[b + 1] - enc.offsets[b];
        for (i64 u : positions[static_cast<size_t>(b)]) {
            LID_CHECK(u >= 0 && u < len, "position ", u, " out of range for utterance ", b, " of length ", len);
            rows.push_back(enc.offsets[b] + u);
        }
    }
    LID_CHECK(!rows.empty(), "no masked positions in batch");
    VarId g = t.gather_rows(enc.tap_out, rows);
    return t.affine(g, detail::param(t, leaves, "head.mlm.w"), detail::param(t, leaves, "head.mlm.b"));
}

}  // namespace lidkit
