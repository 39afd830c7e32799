#include "lidkit/eval.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lidkit/graph.hpp"

namespace lidkit {

namespace {

// Shortest representation that round-trips a float exactly, for byte-stable
// file output.
std::string fmt_float(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

EvalReport report_from_predictions(const std::vector<i64>& predicted,
                                   const std::vector<i64>& labels,
                                   const std::vector<std::string>& languages) {
    const i64 n = static_cast<i64>(languages.size());
    LID_CHECK(n > 0, "empty language inventory");
    LID_CHECK(predicted.size() == labels.size(), "got ", predicted.size(),
              " predictions for ", labels.size(), " labels");
    LID_CHECK(!labels.empty(), "empty evaluation set");

    EvalReport rep;
    rep.languages = languages;
    rep.num_utts = static_cast<i64>(labels.size());
    rep.confusion.assign(static_cast<size_t>(n * n), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        const i64 y = labels[i];
        const i64 p = predicted[i];
        LID_CHECK(y >= 0 && y < n, "label ", y, " out of range");
        LID_CHECK(p >= 0 && p < n, "prediction ", p, " out of range");
        rep.confusion[static_cast<size_t>(y * n + p)]++;
    }

    i64 correct = 0;
    for (i64 c = 0; c < n; ++c) correct += rep.confusion[static_cast<size_t>(c * n + c)];
    rep.error_rate = 1.0 - static_cast<double>(correct) / static_cast<double>(rep.num_utts);

    for (i64 c = 0; c < n; ++c) {
        i64 row = 0;
        i64 col = 0;
        for (i64 j = 0; j < n; ++j) {
            row += rep.confusion[static_cast<size_t>(c * n + j)];
            col += rep.confusion[static_cast<size_t>(j * n + c)];
        }
        const i64 diag = rep.confusion[static_cast<size_t>(c * n + c)];
        LanguageMetrics m;
        m.code = languages[static_cast<size_t>(c)];
        m.support = row;
        m.precision = col > 0 ? static_cast<double>(diag) / static_cast<double>(col) : 0.0;
        m.recall = row > 0 ? static_cast<double>(diag) / static_cast<double>(row) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        rep.macro_precision += m.precision;
        rep.macro_recall += m.recall;
        rep.macro_f1 += m.f1;
        rep.per_language.push_back(std::move(m));
    }
    rep.macro_precision /= static_cast<double>(n);
    rep.macro_recall /= static_cast<double>(n);
    rep.macro_f1 /= static_cast<double>(n);
    return rep;
}

namespace {

// Forward one utterance and return its pooled pre-classifier vector and
// language logits.
struct UttForward {
    Tensor<float> pooled;
    Tensor<float> logits;
};

UttForward forward_utterance(const ParamStore& params, const EncoderConfig& cfg,
                             const FeatureStats& stats, const Tensor<float>& raw) {
    Tape<float> tape;
    auto leaves = make_param_leaves(tape, params, false);
    std::vector<Tensor<float>> batch;
    batch.push_back(normalize(raw, stats));
    EncoderOut enc = build_encoder(tape, leaves, cfg, batch);
    VarId pooled = tape.mean_rows(enc.final_out);
    VarId logits = classifier_logits(tape, leaves, enc);
    return UttForward{tape.val(pooled), tape.val(logits)};
}

i64 argmax_row(const Tensor<float>& row_tensor) {
    const float* row = row_tensor.row_ptr(0);
    i64 best = 0;
    for (i64 c = 1; c < row_tensor.cols; ++c) {
        if (row[c] > row[best]) best = c;
    }
    return best;
}

} // namespace

std::vector<i64> predict(const ParamStore& params, const EncoderConfig& cfg,
                         const FeatureStats& stats, const FeatureDataset& data) {
    std::vector<i64> out;
    out.reserve(data.features.size());
    for (const auto& feats : data.features) {
        out.push_back(argmax_row(forward_utterance(params, cfg, stats, feats).logits));
    }
    return out;
}

EvalReport evaluate(const ParamStore& params, const EncoderConfig& cfg,
                    const FeatureStats& stats, const FeatureDataset& data,
                    const std::vector<std::string>& model_languages) {
    LID_CHECK(model_languages == data.languages,
              "model language inventory does not match the evaluation set");
    return report_from_predictions(predict(params, cfg, stats, data), data.labels,
                                   data.languages);
}

std::string f1_table(const EvalReport& rep) {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "%-8s %10s %10s %10s %8s\n", "lang", "precision",
                  "recall", "f1", "support");
    os << line;
    i64 total = 0;
    for (const auto& m : rep.per_language) {
        std::snprintf(line, sizeof(line), "%-8s %10.4f %10.4f %10.4f %8lld\n",
                      m.code.c_str(), m.precision, m.recall, m.f1,
                      static_cast<long long>(m.support));
        os << line;
        total += m.support;
    }
    std::snprintf(line, sizeof(line), "%-8s %10.4f %10.4f %10.4f %8lld\n", "Avg",
                  rep.macro_precision, rep.macro_recall, rep.macro_f1,
                  static_cast<long long>(total));
    os << line;
    return os.str();
}

nlohmann::json report_json(const EvalReport& rep) {
    nlohmann::json j;
    j["error_rate"] = rep.error_rate;
    j["num_utts"] = rep.num_utts;
    j["languages"] = rep.languages;
    j["per_language"] = nlohmann::json::array();
    for (const auto& m : rep.per_language) {
        j["per_language"].push_back({{"code", m.code},
                                     {"precision", m.precision},
                                     {"recall", m.recall},
                                     {"f1", m.f1},
                                     {"support", m.support}});
    }
    j["macro"] = {{"precision", rep.macro_precision},
                  {"recall", rep.macro_recall},
                  {"f1", rep.macro_f1}};
    const i64 n = static_cast<i64>(rep.languages.size());
    nlohmann::json conf = nlohmann::json::array();
    for (i64 r = 0; r < n; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (i64 c = 0; c < n; ++c) row.push_back(rep.confusion[static_cast<size_t>(r * n + c)]);
        conf.push_back(std::move(row));
    }
    j["confusion"] = std::move(conf);
    return j;
}

void export_embeddings(const ParamStore& params, const EncoderConfig& cfg,
                       const FeatureStats& stats, const FeatureDataset& data,
                       const std::string& path, const nlohmann::json& config_echo) {
    std::ofstream out(path, std::ios::trunc);
    LID_CHECK(out.good(), "cannot open ", path, " for writing");
    out << "# config " << config_echo.dump() << "\n";
    out << "id,lang";
    for (i64 d = 0; d < cfg.dim; ++d) out << ",e" << d;
    out << "\n";
    for (size_t i = 0; i < data.features.size(); ++i) {
        const auto fwd = forward_utterance(params, cfg, stats, data.features[i]);
        out << data.ids[i] << ","
            << data.languages[static_cast<size_t>(data.labels[i])];
        for (i64 d = 0; d < cfg.dim; ++d) out << "," << fmt_float(fwd.pooled.at(0, d));
        out << "\n";
    }
    out.flush();
    LID_CHECK(out.good(), "write failed for ", path);
}

std::vector<SweepRow> masking_sweep(const SweepTrainFn& train_fn,
                                    const std::vector<double>& spans_ms,
                                    const std::vector<u64>& seeds,
                                    bool run_supervised, bool run_joint) {
    LID_CHECK(!spans_ms.empty() && !seeds.empty(), "empty sweep grid");
    std::vector<SweepRow> rows;
    for (u64 seed : seeds) {
        for (const char* mode : {"supervised", "joint"}) {
            const bool joint = std::string(mode) == "joint";
            if (joint && !run_joint) continue;
            if (!joint && !run_supervised) continue;
            for (double span : spans_ms) {
                LID_CHECK(span >= 0.0, "negative mask span ", span);
                if (joint && span == 0.0) continue; // no positions to predict
                const SweepRunOutcome o = train_fn(mode, span, seed);
                rows.push_back(SweepRow{mode, span, seed, o.error_rate, o.has_pl, o.pl_acc});
            }
        }
    }
    return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     const nlohmann::json& config_echo) {
    std::ofstream out(path, std::ios::trunc);
    LID_CHECK(out.good(), "cannot open ", path, " for writing");
    out << "# config " << config_echo.dump() << "\n";
    out << "mode,span_ms,seed,error_rate,pseudo_label_acc\n";
    for (const auto& r : rows) {
        out << r.mode << "," << fmt_float(r.span_ms) << "," << r.seed << ","
            << fmt_float(r.error_rate) << ",";
        if (r.has_pl) out << fmt_float(r.pl_acc);
        out << "\n";
    }
    out.flush();
    LID_CHECK(out.good(), "write failed for ", path);
}

} // namespace lidkit
