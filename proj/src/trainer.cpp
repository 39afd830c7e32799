#include "lidkit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>

#include "lidkit/masking.hpp"
#include "lidkit/objectives.hpp"

namespace fs = std::filesystem;

namespace lidkit {

void Adam::init(const ParamStore& params) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto& name : params.names()) {
        const auto& p = params.get(name);
        m_.emplace(name, Tensor<float>(p.rows, p.cols));
        v_.emplace(name, Tensor<float>(p.rows, p.cols));
    }
}

const Tensor<float>& Adam::m(const std::string& name) const {
    auto it = m_.find(name);
    LID_CHECK(it != m_.end(), "Adam has no moment for ", name);
    return it->second;
}

const Tensor<float>& Adam::v(const std::string& name) const {
    auto it = v_.find(name);
    LID_CHECK(it != v_.end(), "Adam has no moment for ", name);
    return it->second;
}

Tensor<float>& Adam::mutable_m(const std::string& name) {
    return const_cast<Tensor<float>&>(static_cast<const Adam*>(this)->m(name));
}

Tensor<float>& Adam::mutable_v(const std::string& name) {
    return const_cast<Tensor<float>&>(static_cast<const Adam*>(this)->v(name));
}

void Adam::step(ParamStore& params,
                const std::vector<std::pair<std::string, const Tensor<float>*>>& grads,
                double lr, double clip_norm) {
    LID_CHECK(!m_.empty(), "Adam::init was not called");

    // Validate everything before touching any state, so a bad gradient
    // leaves parameters and moments exactly as they were.
    double sumsq = 0.0;
    for (const auto& [name, g] : grads) {
        const auto& p = params.get(name);
        LID_CHECK(p.same_shape(*g), "gradient shape mismatch for ", name);
        for (float x : g->data) {
            LID_CHECK(std::isfinite(x), "non-finite gradient in ", name);
            sumsq += static_cast<double>(x) * static_cast<double>(x);
        }
    }
    double scale = 1.0;
    if (clip_norm > 0.0) {
        const double norm = std::sqrt(sumsq);
        if (norm > clip_norm) scale = clip_norm / norm;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        auto& p = params.get(name);
        auto& m = m_.at(name);
        auto& v = v_.at(name);
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double gi = static_cast<double>(g->data[i]) * scale;
            const double mi = beta1_ * static_cast<double>(m.data[i]) + (1.0 - beta1_) * gi;
            const double vi =
                beta2_ * static_cast<double>(v.data[i]) + (1.0 - beta2_) * gi * gi;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
            p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) - update);
        }
    }
}

namespace {

// Deterministic ordering of training examples: global position g maps to
// epoch g / N, and each epoch gets its own Fisher-Yates permutation seeded
// from (root seed, epoch).
class BatchOrder {
  public:
    BatchOrder(i64 num_items, u64 seed) : n_(num_items), seed_(seed) {}

    i64 index_at(i64 global_pos) {
        const i64 epoch = global_pos / n_;
        const i64 slot = global_pos % n_;
        if (epoch != cached_epoch_) {
            perm_.resize(static_cast<size_t>(n_));
            std::iota(perm_.begin(), perm_.end(), 0);
            Rng rng(seed_ ^ fnv1a(concat("shuffle-", epoch)));
            for (i64 i = n_ - 1; i > 0; --i) {
                const i64 j = static_cast<i64>(rng.uniform_index(static_cast<u64>(i + 1)));
                std::swap(perm_[static_cast<size_t>(i)], perm_[static_cast<size_t>(j)]);
            }
            cached_epoch_ = epoch;
        }
        return perm_[static_cast<size_t>(slot)];
    }

  private:
    i64 n_;
    u64 seed_;
    i64 cached_epoch_ = -1;
    std::vector<i64> perm_;
};

bool any_set(const std::vector<std::uint8_t>& mask) {
    return std::any_of(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; });
}

Tensor<float> to_f32(const Tensor<double>& t) {
    Tensor<float> out(t.rows, t.cols);
    for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<float>(t.data[i]);
    return out;
}

} // namespace

TrainOutcome train(const TrainInput& in) {
    LID_CHECK(in.train_set != nullptr && !in.train_set->features.empty(),
              "empty training set");
    const TrainSettings& ts = in.train;
    validate(in.encoder);
    LID_CHECK(in.features.n_mels == in.encoder.n_mels, "feature bins ",
              in.features.n_mels, " do not match encoder n_mels ", in.encoder.n_mels);
    LID_CHECK(ts.batch_size >= 1, "batch_size must be >= 1");
    LID_CHECK(ts.total_steps >= 1, "total_steps must be >= 1");
    LID_CHECK(ts.warmup_steps >= 1 && ts.total_steps >= ts.warmup_steps,
              "need total_steps >= warmup_steps >= 1, got ", ts.total_steps, " and ",
              ts.warmup_steps);
    LID_CHECK(ts.lambda >= 0.0 && ts.lambda <= 1.0, "lambda must be in [0, 1]");
    LID_CHECK(ts.crop_frames >= 4, "crop_frames must be >= 4 for the frontend");
    LID_CHECK(ts.clip_norm >= 0.0, "clip_norm must be >= 0");
    LID_CHECK(in.mask.coverage >= 0.0 && in.mask.coverage < 1.0,
              "mask coverage must be in [0, 1)");
    LID_CHECK(in.mask.noise_std >= 0.0, "noise_std must be >= 0");

    const i64 n_classes = static_cast<i64>(in.train_set->languages.size());
    LID_CHECK(n_classes >= 2, "need at least two languages, got ", n_classes);

    const i64 sub = in.encoder.sub_factor;
    QuantizerConfig qcfg = in.quantizer;
    qcfg.input_dim = in.features.n_mels * sub;
    const i64 span_frames = span_frames_for_ms(in.mask.span_ms, in.features);
    const bool masking_on = span_frames > 0 && in.mask.coverage > 0.0;

    FeatureStats stats = compute_feature_stats(in.train_set->features);
    ParamStore params =
        init_model_params(in.encoder, n_classes, qcfg.codebook_size, in.seed);
    Adam adam;
    adam.init(params);
    std::unique_ptr<RandomQuantizer> quantizer; // built on first use; never in λ=0 runs

    LID_CHECK(!in.out_dir.empty(), "out_dir is empty");
    fs::create_directories(in.out_dir);
    const std::string log_path = (fs::path(in.out_dir) / "train_log.jsonl").string();
    const std::string ckpt_path = (fs::path(in.out_dir) / "checkpoint.bin").string();
    std::ofstream log(log_path, std::ios::trunc);
    LID_CHECK(log.good(), "cannot open ", log_path, " for writing");
    log << nlohmann::json{{"config", in.config_echo}}.dump() << "\n";

    const i64 num_train = static_cast<i64>(in.train_set->features.size());
    BatchOrder order(num_train, in.seed);

    // End-of-training pseudo-label accuracy: mean over the last tenth of
    // the steps, counting only steps that had masked positions.
    const i64 pl_window_start = ts.total_steps - (ts.total_steps + 9) / 10 + 1;
    double pl_sum = 0.0;
    i64 pl_steps = 0;

    for (i64 step = 1; step <= ts.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_schedule(step, ts.peak_lr, ts.warmup_steps);
        Rng srng(in.seed ^ fnv1a(concat("step-", step)));

        std::vector<Tensor<float>> inputs;
        std::vector<i64> labels;
        std::vector<std::vector<i64>> positions(static_cast<size_t>(ts.batch_size));
        std::vector<i64> targets;
        std::vector<i64> counts(static_cast<size_t>(ts.batch_size), 0);
        inputs.reserve(static_cast<size_t>(ts.batch_size));
        labels.reserve(static_cast<size_t>(ts.batch_size));

        for (i64 b = 0; b < ts.batch_size; ++b) {
            const i64 idx = order.index_at((step - 1) * ts.batch_size + b);
            labels.push_back(in.train_set->labels[static_cast<size_t>(idx)]);
            Tensor<float> x = random_crop(in.train_set->features[static_cast<size_t>(idx)],
                                          ts.crop_frames, srng);
            x = normalize(x, stats);

            std::vector<std::uint8_t> mask;
            if (masking_on) {
                mask = sample_mask(ts.crop_frames, span_frames, in.mask.coverage, srng);
                if (!any_set(mask)) {
                    // One retry for the rare empty draw; a second empty
                    // result is accepted as-is.
                    mask = sample_mask(ts.crop_frames, span_frames, in.mask.coverage, srng);
                }
            }

            if (ts.lambda > 0.0 && !mask.empty() && any_set(mask)) {
                const i64 num_sub = subsampled_len(ts.crop_frames);
                std::vector<i64> pos = masked_subsampled_positions(mask, sub, num_sub);
                if (!pos.empty()) {
                    if (!quantizer) {
                        quantizer = std::make_unique<RandomQuantizer>(qcfg, in.seed);
                    }
                    // Pseudo-labels come from the clean features; noise goes
                    // in afterwards.
                    const std::vector<i64> z = quantizer->quantize(stack_frames(x, sub));
                    counts[static_cast<size_t>(b)] = static_cast<i64>(pos.size());
                    for (i64 u : pos) targets.push_back(z[static_cast<size_t>(u)]);
                    positions[static_cast<size_t>(b)] = std::move(pos);
                }
            }

            if (!mask.empty()) x = apply_mask_noise(x, mask, in.mask.noise_std, srng);
            inputs.push_back(std::move(x));
        }

        Tape<float> tape;
        auto leaves = make_param_leaves(tape, params, true);
        EncoderOut enc = build_encoder(tape, leaves, in.encoder, inputs);
        VarId sup = supervised_loss(tape, classifier_logits(tape, leaves, enc), labels);

        const bool has_unsup = ts.lambda > 0.0 && !targets.empty();
        double lu = 0.0;
        double pl = 0.0;
        VarId loss;
        if (has_unsup) {
            VarId mlm = mlm_logits(tape, leaves, enc, positions);
            VarId uns = unsupervised_loss(tape, mlm, targets, counts);
            lu = static_cast<double>(tape.val(uns).data[0]);
            pl = argmax_accuracy(tape.val(mlm), targets);
            loss = combined_loss(tape, sup, uns, ts.lambda);
        } else {
            // No masked positions this step: the unsupervised term is 0.
            loss = tape.scale(sup, 1.0 - ts.lambda);
        }
        const double ls = static_cast<double>(tape.val(sup).data[0]);
        const double total = static_cast<double>(tape.val(loss).data[0]);

        tape.backward(loss);
        std::vector<std::pair<std::string, const Tensor<float>*>> grads;
        grads.reserve(params.names().size());
        for (const auto& name : params.names()) {
            grads.emplace_back(name, &tape.grad(leaves.at(name)));
        }
        adam.step(params, grads, lr, ts.clip_norm);

        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        nlohmann::json rec{{"step", step}, {"lr", lr}, {"l_s", ls}, {"loss", total}};
        if (has_unsup) {
            rec["l_u"] = lu;
            rec["pl_acc"] = pl;
        }
        rec["wall_ms"] = wall_ms;
        log << rec.dump() << "\n";

        if (has_unsup && step >= pl_window_start) {
            pl_sum += pl;
            ++pl_steps;
        }
    }

    CheckpointData ck;
    ck.meta = nlohmann::json{{"step", ts.total_steps},
                             {"languages", in.train_set->languages},
                             {"config", in.config_echo}};
    for (const auto& name : params.names()) ck.add("params/" + name, params.get(name));
    for (const auto& name : params.names()) ck.add("adam_m/" + name, adam.m(name));
    for (const auto& name : params.names()) ck.add("adam_v/" + name, adam.v(name));
    ck.add("stats/mean", stats.mean);
    ck.add("stats/std", stats.std);
    if (quantizer) {
        // Inspection copies; loading reconstructs the tables from the seed
        // in the config echo.
        ck.add("quantizer/projection", to_f32(quantizer->projection()));
        ck.add("quantizer/codebook", to_f32(quantizer->codebook()));
    }
    save_checkpoint(ckpt_path, ck);

    TrainOutcome out;
    out.checkpoint_path = ckpt_path;
    out.log_path = log_path;
    out.quantizer_calls = quantizer ? static_cast<i64>(quantizer->calls()) : 0;
    if (pl_steps > 0) {
        out.has_final_pl = true;
        out.final_pl_acc = pl_sum / static_cast<double>(pl_steps);
    }

    nlohmann::json final_rec{{"final", nlohmann::json{{"checkpoint", ckpt_path}}}};
    if (in.eval_set != nullptr && !in.eval_set->features.empty()) {
        // Evaluate what was saved, not what is in memory, so the logged
        // number is exactly reproducible from the file.
        const ModelState st = state_from_checkpoint(load_checkpoint(ckpt_path));
        out.final_eval = evaluate(st.params, in.encoder, st.stats, *in.eval_set, st.languages);
        out.has_final_eval = true;
        final_rec["final"]["error_rate"] = out.final_eval.error_rate;
        final_rec["final"]["macro_f1"] = out.final_eval.macro_f1;
    }
    if (out.has_final_pl) final_rec["final"]["pl_acc"] = out.final_pl_acc;
    log << final_rec.dump() << "\n";
    log.flush();
    LID_CHECK(log.good(), "write failed for ", log_path);
    return out;
}

ModelState state_from_checkpoint(const CheckpointData& ck) {
    ModelState st;
    LID_CHECK(ck.meta.contains("languages") && ck.meta["languages"].is_array(),
              "checkpoint meta lists no languages");
    st.languages = ck.meta["languages"].get<std::vector<std::string>>();
    LID_CHECK(!st.languages.empty(), "checkpoint language inventory is empty");
    st.step = ck.meta.value("step", i64{0});
    st.config_echo = ck.meta.value("config", nlohmann::json::object());
    const std::string prefix = "params/";
    for (const auto& name : ck.order) {
        if (name.rfind(prefix, 0) == 0) {
            const auto& t = ck.get(name);
            st.params.add(name.substr(prefix.size()), t.rows, t.cols) = t;
        }
    }
    LID_CHECK(!st.params.names().empty(), "checkpoint holds no parameters");
    st.stats.mean = ck.get("stats/mean");
    st.stats.std = ck.get("stats/std");
    return st;
}

} // namespace lidkit
