#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lidkit/checkpoint.hpp"
#include "lidkit/datasets.hpp"
#include "lidkit/encoder.hpp"
#include "lidkit/eval.hpp"
#include "lidkit/features.hpp"
#include "lidkit/rpq.hpp"

namespace lidkit {

// Linear warmup to peak_lr, then inverse-square-root decay. Steps count
// from 1.
inline double lr_schedule(i64 step, double peak_lr, i64 warmup_steps) {
    LID_CHECK(step >= 1, "lr schedule is defined for step >= 1, got ", step);
    LID_CHECK(warmup_steps >= 1, "warmup_steps must be >= 1, got ", warmup_steps);
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return peak_lr * std::min(s / w, std::sqrt(w / s));
}

// Adam with bias correction. Moments are stored as float32 to match the
// checkpoint format; per-element arithmetic runs in double. Updates are
// serial in parameter order, so results do not depend on thread count.
class Adam {
  public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void init(const ParamStore& params);

    // Applies one update. Gradients are keyed by parameter name, in the
    // store's order. A non-finite gradient aborts the step with an error
    // naming the parameter. clip_norm > 0 rescales the global gradient
    // norm down to that value first.
    void step(ParamStore& params,
              const std::vector<std::pair<std::string, const Tensor<float>*>>& grads,
              double lr, double clip_norm = 0.0);

    i64 steps_taken() const { return t_; }
    const Tensor<float>& m(const std::string& name) const;
    const Tensor<float>& v(const std::string& name) const;
    Tensor<float>& mutable_m(const std::string& name);
    Tensor<float>& mutable_v(const std::string& name);

  private:
    double beta1_, beta2_, eps_;
    i64 t_ = 0;
    std::unordered_map<std::string, Tensor<float>> m_, v_;
};

struct MaskSettings {
    double coverage = 0.35;
    double span_ms = 240.0;
    double noise_std = 0.1;
};

struct TrainSettings {
    double peak_lr = 1e-3;
    i64 warmup_steps = 500;
    i64 batch_size = 32;
    i64 total_steps = 2000;
    double lambda = 0.5; // 0 trains supervised-only and never touches the quantizer
    double clip_norm = 0.0;
    i64 crop_frames = 300;
};

struct TrainInput {
    const FeatureDataset* train_set = nullptr;
    const FeatureDataset* eval_set = nullptr; // optional final evaluation
    FeatureConfig features;
    EncoderConfig encoder;
    QuantizerConfig quantizer;
    MaskSettings mask;
    TrainSettings train;
    u64 seed = 1;
    nlohmann::json config_echo; // embedded in the checkpoint and log
    std::string out_dir;
};

struct TrainOutcome {
    std::string checkpoint_path;
    std::string log_path;
    i64 quantizer_calls = 0;
    bool has_final_eval = false;
    EvalReport final_eval;
    // Mean pseudo-label accuracy over the last tenth of the steps that
    // produced one.
    bool has_final_pl = false;
    double final_pl_acc = 0.0;
};

// Runs the full loop: per step, sample a batch, crop, normalize, quantize
// the clean features (joint mode), mask and noise, forward, combined loss,
// backward, Adam. Writes out_dir/train_log.jsonl (config echo first, one
// record per step, final summary last) and out_dir/checkpoint.bin, then
// reloads the checkpoint and evaluates it so the logged final error is the
// saved model's, not the in-memory one's.
TrainOutcome train(const TrainInput& in);

// Model state reassembled from a checkpoint.
struct ModelState {
    ParamStore params;
    FeatureStats stats;
    std::vector<std::string> languages;
    i64 step = 0;
    nlohmann::json config_echo;
};

ModelState state_from_checkpoint(const CheckpointData& ck);

// Raw-frame mask span for a span given in milliseconds.
inline i64 span_frames_for_ms(double span_ms, const FeatureConfig& cfg) {
    LID_CHECK(span_ms >= 0.0, "negative mask span ", span_ms);
    return static_cast<i64>(std::llround(span_ms * static_cast<double>(cfg.sample_rate) /
                                         (1000.0 * static_cast<double>(cfg.hop_length))));
}

} // namespace lidkit
