#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidkit/datasets.hpp"
#include "lidkit/encoder.hpp"
#include "lidkit/features.hpp"

namespace lidkit {

struct LanguageMetrics {
    std::string code;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    i64 support = 0;
};

struct EvalReport {
    double error_rate = 0.0;
    std::vector<LanguageMetrics> per_language;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<i64> confusion; // N*N row-major; rows true label, cols predicted
    i64 num_utts = 0;
    std::vector<std::string> languages;
};

// Builds the full report from aligned prediction/label index vectors.
// Precision and recall of a class with an empty column or row are 0, as is
// F1 whenever P + R == 0. Macro averages run over the whole inventory.
EvalReport report_from_predictions(const std::vector<i64>& predicted,
                                   const std::vector<i64>& labels,
                                   const std::vector<std::string>& languages);

// Mask-free argmax predictions, one full-length forward per utterance.
std::vector<i64> predict(const ParamStore& params, const EncoderConfig& cfg,
                         const FeatureStats& stats, const FeatureDataset& data);

// predict + report. The model's language inventory must equal the dataset's.
EvalReport evaluate(const ParamStore& params, const EncoderConfig& cfg,
                    const FeatureStats& stats, const FeatureDataset& data,
                    const std::vector<std::string>& model_languages);

// Fixed-width text table: one row per language plus a macro-average row.
std::string f1_table(const EvalReport& report);

nlohmann::json report_json(const EvalReport& report);

// CSV of pooled pre-classifier vectors: id, lang, then `dim` feature
// columns. Starts with a config-echo comment line; identical state and data
// give identical bytes.
void export_embeddings(const ParamStore& params, const EncoderConfig& cfg,
                       const FeatureStats& stats, const FeatureDataset& data,
                       const std::string& path, const nlohmann::json& config_echo);

struct SweepRow {
    std::string mode; // "supervised" or "joint"
    double span_ms = 0.0;
    u64 seed = 0;
    double error_rate = 0.0;
    bool has_pl = false;
    double pl_acc = 0.0;
};

struct SweepRunOutcome {
    double error_rate = 0.0;
    bool has_pl = false;
    double pl_acc = 0.0;
};

// One full training run at (mode, span, seed), returning the eval error and
// the end-of-training pseudo-label accuracy when the mode produces one.
using SweepTrainFn =
    std::function<SweepRunOutcome(const std::string& mode, double span_ms, u64 seed)>;

// Trains one model per (seed, mode, span) combination. Supervised-only rows
// cover every span including 0; joint rows skip span 0, which would leave
// the masked-prediction loss without any positions.
std::vector<SweepRow> masking_sweep(const SweepTrainFn& train_fn,
                                    const std::vector<double>& spans_ms,
                                    const std::vector<u64>& seeds,
                                    bool run_supervised = true, bool run_joint = true);

// Header: mode,span_ms,seed,error_rate,pseudo_label_acc. The accuracy field
// is empty for rows without one. Starts with a config-echo comment line.
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     const nlohmann::json& config_echo);

} // namespace lidkit
