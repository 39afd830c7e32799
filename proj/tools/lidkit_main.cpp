#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lidkit/audio.hpp"
#include "lidkit/config.hpp"
#include "lidkit/datasets.hpp"
#include "lidkit/eval.hpp"
#include "lidkit/gradcheck.hpp"
#include "lidkit/graph.hpp"
#include "lidkit/masking.hpp"
#include "lidkit/objectives.hpp"
#include "lidkit/rpq.hpp"
#include "lidkit/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lidkit;

namespace {

std::string resolve_out_dir(const RunConfig& cfg, const std::string& flag_out) {
    if (!flag_out.empty()) return flag_out;
    LID_CHECK(!cfg.out_dir.empty(), "no output directory: set --out or config out_dir");
    return cfg.out_dir;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    LID_CHECK(out.good(), "cannot write ", path);
    out << j.dump(2) << "\n";
}

// Returns the manifest, synthesizing the corpus under <dir>/corpus first when
// the config has no manifest path. An existing synthesized corpus is reused,
// which keeps eval-after-train reading the exact same audio files.
Manifest materialize_manifest(const RunConfig& cfg, const std::string& dir) {
    if (!cfg.data.manifest.empty()) return load_manifest(cfg.data.manifest);
    const std::string corpus_dir = (fs::path(dir) / "corpus").string();
    const std::string manifest_path = (fs::path(corpus_dir) / "manifest.jsonl").string();
    if (fs::exists(manifest_path)) return load_manifest(manifest_path);
    return generate_corpus(cfg.data.synth, cfg.seed, corpus_dir);
}

struct LoadedSplits {
    FeatureDataset train_set;
    FeatureDataset eval_set;
};

LoadedSplits load_splits(const RunConfig& cfg, const Manifest& man) {
    Rng split_rng(cfg.seed, "split");
    const SplitIndices split = stratified_split(man, cfg.data.eval_fraction, split_rng);
    LoadedSplits out;
    out.train_set = load_features(man, cfg.features, split.train);
    out.eval_set = load_features(man, cfg.features, split.eval);
    return out;
}

TrainOutcome run_training(const RunConfig& cfg, const LoadedSplits& splits,
                          const std::string& out_dir, u64 seed, double lambda,
                          double span_ms) {
    TrainInput in;
    in.train_set = &splits.train_set;
    in.eval_set = &splits.eval_set;
    in.features = cfg.features;
    in.encoder = cfg.encoder;
    in.quantizer = cfg.quantizer;
    in.mask = cfg.mask;
    in.mask.span_ms = span_ms;
    in.train = cfg.train;
    in.train.lambda = lambda;
    in.seed = seed;
    in.out_dir = out_dir;
    json echo = cfg.to_json();
    echo["seed"] = seed;
    echo["mask"]["span_ms"] = span_ms;
    echo["train"]["lambda"] = lambda;
    in.config_echo = std::move(echo);
    return train(in);
}

int cmd_synth(const RunConfig& cfg, const std::string& flag_out) {
    LID_CHECK(cfg.data.manifest.empty(),
              "synth needs a synthetic data source, but the config names a manifest");
    const std::string out_dir = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out_dir);
    const Manifest man = generate_corpus(cfg.data.synth, cfg.seed, out_dir);
    write_json_file((fs::path(out_dir) / "config.json").string(), cfg.to_json());
    json summary = {{"manifest", (fs::path(out_dir) / "manifest.jsonl").string()},
                    {"languages", man.languages},
                    {"utterances", man.utts.size()}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& flag_out) {
    const std::string out_dir = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out_dir);
    const Manifest man = materialize_manifest(cfg, out_dir);
    const LoadedSplits splits = load_splits(cfg, man);
    const TrainOutcome out = run_training(cfg, splits, out_dir, cfg.seed, cfg.train.lambda,
                                          cfg.mask.span_ms);
    json summary = {{"checkpoint", out.checkpoint_path},
                    {"log", out.log_path},
                    {"error_rate", out.final_eval.error_rate},
                    {"macro_f1", out.final_eval.macro_f1}};
    if (out.has_final_pl) summary["pseudo_label_acc"] = out.final_pl_acc;
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& report_path, const std::string& embeddings_path) {
    const ModelState st = state_from_checkpoint(load_checkpoint(checkpoint_path));
    // A synthetic source lives next to the checkpoint, where train put it.
    const Manifest man =
        materialize_manifest(cfg, fs::path(checkpoint_path).parent_path().string());
    const LoadedSplits splits = load_splits(cfg, man);
    const EvalReport rep = evaluate(st.params, cfg.encoder, st.stats, splits.eval_set,
                                    st.languages);
    json j = report_json(rep);
    j["config"] = cfg.to_json();
    j["checkpoint"] = checkpoint_path;
    if (!report_path.empty()) write_json_file(report_path, j);
    if (!embeddings_path.empty()) {
        export_embeddings(st.params, cfg.encoder, st.stats, splits.eval_set, embeddings_path,
                          cfg.to_json());
    }
    std::cout << f1_table(rep);
    std::cout << json{{"error_rate", rep.error_rate}, {"macro_f1", rep.macro_f1}}.dump() << "\n";
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& flag_out) {
    const std::string out_dir = resolve_out_dir(cfg, flag_out);
    fs::create_directories(out_dir);
    const Manifest man = materialize_manifest(cfg, out_dir);
    const LoadedSplits splits = load_splits(cfg, man);

    SweepTrainFn train_fn = [&](const std::string& mode, double span_ms, u64 seed) {
        const double lambda = mode == "joint" ? cfg.train.lambda : 0.0;
        char leaf[64];
        std::snprintf(leaf, sizeof(leaf), "%s_span%03.0f_seed%llu", mode.c_str(), span_ms,
                      static_cast<unsigned long long>(seed));
        const std::string run_dir = (fs::path(out_dir) / "runs" / leaf).string();
        fs::create_directories(run_dir);
        const TrainOutcome out = run_training(cfg, splits, run_dir, seed, lambda, span_ms);
        SweepRunOutcome r;
        r.error_rate = out.final_eval.error_rate;
        r.has_pl = out.has_final_pl;
        r.pl_acc = out.final_pl_acc;
        json progress = {{"mode", mode}, {"span_ms", span_ms}, {"seed", seed},
                         {"error_rate", r.error_rate}};
        if (r.has_pl) progress["pseudo_label_acc"] = r.pl_acc;
        std::cout << progress.dump() << "\n";
        return r;
    };
    // Joint runs reuse the configured lambda; a joint sweep with lambda 0
    // would silently duplicate the supervised rows.
    LID_CHECK(cfg.train.lambda > 0.0, "sweep: train.lambda must be positive");
    const std::vector<SweepRow> rows = masking_sweep(train_fn, cfg.sweep.spans_ms,
                                                     cfg.sweep.seeds);
    const std::string csv_path = (fs::path(out_dir) / "sweep.csv").string();
    write_sweep_csv(csv_path, rows, cfg.to_json());
    std::cout << json{{"csv", csv_path}, {"rows", rows.size()}}.dump() << "\n";
    return 0;
}

// Finite-difference check of the full joint loss at a reduced geometry that
// keeps the f64 probe fast; the architecture and loss path are the real ones.
int cmd_gradcheck(const RunConfig& cfg) {
    EncoderConfig ec = cfg.encoder;
    ec.n_mels = 6;
    ec.dim = 8;
    ec.layers = 2;
    ec.heads = 2;
    ec.conv_kernel = 3;
    ec.ffn_mult = 2;
    ec.tap_layer = 1;
    validate(ec);
    const i64 n_classes = 3;
    const i64 codebook = 8;
    const i64 T = 32;
    const i64 B = 2;

    const ParamStore params = init_model_params(ec, n_classes, codebook, cfg.seed);
    Rng rng(cfg.seed, "gradcheck");
    std::vector<Tensor<float>> feats;
    std::vector<i64> labels;
    for (i64 b = 0; b < B; ++b) {
        Tensor<float> f(T, ec.n_mels);
        for (auto& x : f.data) x = static_cast<float>(rng.normal());
        feats.push_back(std::move(f));
        labels.push_back(b % n_classes);
    }
    const i64 Tsub = subsampled_len(T);
    std::vector<std::vector<i64>> positions(static_cast<size_t>(B));
    std::vector<i64> targets;
    std::vector<i64> counts;
    for (i64 b = 0; b < B; ++b) {
        for (i64 u = b; u < Tsub; u += 2) {
            positions[static_cast<size_t>(b)].push_back(u);
            targets.push_back(static_cast<i64>(rng.uniform_index(codebook)));
        }
        counts.push_back(static_cast<i64>(positions[static_cast<size_t>(b)].size()));
    }

    std::vector<std::string> names = params.names();
    std::vector<Tensor<double>> inputs;
    for (const auto& n : names) {
        const Tensor<float>& t = params.get(n);
        Tensor<double> d(t.rows, t.cols);
        for (size_t i = 0; i < t.data.size(); ++i) d.data[i] = static_cast<double>(t.data[i]);
        inputs.push_back(std::move(d));
    }

    auto build = [&](Tape<double>& tape, const std::vector<VarId>& leaves) {
        std::unordered_map<std::string, VarId> leafmap;
        for (size_t i = 0; i < names.size(); ++i) leafmap[names[i]] = leaves[i];
        std::vector<Tensor<double>> dfeats;
        for (const auto& f : feats) {
            Tensor<double> d(f.rows, f.cols);
            for (size_t i = 0; i < f.data.size(); ++i) d.data[i] = static_cast<double>(f.data[i]);
            dfeats.push_back(std::move(d));
        }
        EncoderOut enc = build_encoder(tape, leafmap, ec, dfeats);
        VarId ls = supervised_loss(tape, classifier_logits(tape, leafmap, enc), labels);
        VarId lu = unsupervised_loss(tape, mlm_logits(tape, leafmap, enc, positions), targets,
                                     counts);
        return combined_loss(tape, ls, lu, 0.5);
    };

    const GradCheckReport rep = gradcheck(inputs, build);
    std::printf("%s max_rel_err=%.3g (tolerance 1e-4, %lld elements)\n",
                rep.max_rel_err < 1e-4 ? "PASS" : "FAIL", rep.max_rel_err,
                static_cast<long long>(rep.elements_checked));
    return rep.max_rel_err < 1e-4 ? 0 : 2;
}

int cmd_quantize(const RunConfig& cfg, const std::string& audio_path) {
    const AudioClip wav = read_wav(audio_path);
    LID_CHECK(wav.sample_rate == cfg.features.sample_rate, "quantize: ", audio_path, " is ",
              wav.sample_rate, " Hz but the config expects ", cfg.features.sample_rate);
    FeatureExtractor fx(cfg.features);
    const Tensor<float> feats = fx.logmel(wav.samples);
    const Tensor<float> stacked = stack_frames(feats, cfg.encoder.sub_factor);
    const RandomQuantizer quant(cfg.quantizer, cfg.seed);
    const std::vector<i64> labels = quant.quantize(stacked);
    std::cout << json{{"config", cfg.to_json()}, {"audio", audio_path},
                      {"positions", labels.size()}}
                     .dump()
              << "\n";
    for (size_t i = 0; i < labels.size(); ++i) {
        std::cout << i << " " << labels[i] << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint masked pseudo-label and supervised training for spoken language ID"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_flag;
    std::string checkpoint_flag;
    std::string report_flag;
    std::string embeddings_flag;
    std::string audio_flag;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic WAV corpus + manifest");
    add_config(synth);
    synth->add_option("--out", out_flag, "Output directory");

    CLI::App* train_cmd = app.add_subcommand("train", "Train a model, write checkpoint + log");
    add_config(train_cmd);
    train_cmd->add_option("--out", out_flag, "Output directory");

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
    add_config(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_flag, "Checkpoint file")->required();
    eval_cmd->add_option("--report", report_flag, "Write the JSON report here");
    eval_cmd->add_option("--embeddings", embeddings_flag, "Write pooled embeddings CSV here");

    CLI::App* sweep = app.add_subcommand("sweep", "Mask-span sweep across modes and seeds");
    add_config(sweep);
    sweep->add_option("--out", out_flag, "Output directory");

    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of the joint loss");
    add_config(gradcheck_cmd);

    CLI::App* quantize =
        app.add_subcommand("quantize", "Print pseudo-labels for one audio file");
    add_config(quantize);
    quantize->add_option("--audio", audio_flag, "WAV file to quantize")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        const RunConfig cfg = RunConfig::from_file(config_path);
        if (app.got_subcommand(synth)) return cmd_synth(cfg, out_flag);
        if (app.got_subcommand(train_cmd)) return cmd_train(cfg, out_flag);
        if (app.got_subcommand(eval_cmd)) {
            return cmd_eval(cfg, checkpoint_flag, report_flag, embeddings_flag);
        }
        if (app.got_subcommand(sweep)) return cmd_sweep(cfg, out_flag);
        if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(cfg);
        if (app.got_subcommand(quantize)) return cmd_quantize(cfg, audio_flag);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 2;
    }
}
