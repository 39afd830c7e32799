#include "lidkit/config.hpp"

#include <fstream>
#include <set>

namespace lidkit {

namespace {

using nlohmann::json;

// Collects dotted paths of keys the schema does not know, so one error can
// name all of them at once.
struct KeyAudit {
    std::vector<std::string> unknown;

    void check(const json& obj, const std::string& prefix,
               const std::set<std::string>& allowed) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (!allowed.count(it.key())) {
                unknown.push_back(prefix.empty() ? it.key() : prefix + "." + it.key());
            }
        }
    }
};

const json* object_at(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) return nullptr;
    LID_CHECK(it->is_object(), "config: \"", key, "\" must be an object");
    return &*it;
}

template <class T>
void read_int(const json& j, const char* key, const std::string& where, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    LID_CHECK(it->is_number_integer(), "config: \"", where, ".", key, "\" must be an integer");
    out = it->get<T>();
}

void read_double(const json& j, const char* key, const std::string& where, double& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    LID_CHECK(it->is_number(), "config: \"", where, ".", key, "\" must be a number");
    out = it->get<double>();
}

void read_string(const json& j, const char* key, const std::string& where, std::string& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    LID_CHECK(it->is_string(), "config: \"", where, ".", key, "\" must be a string");
    out = it->get<std::string>();
}

template <class T>
void read_array(const json& j, const char* key, const std::string& where, std::vector<T>& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    LID_CHECK(it->is_array(), "config: \"", where, ".", key, "\" must be an array");
    out.clear();
    for (const auto& v : *it) {
        LID_CHECK(v.is_number(), "config: \"", where, ".", key, "\" entries must be numbers");
        out.push_back(v.get<T>());
    }
}

} // namespace

void RunConfig::validate() const {
    LID_CHECK(features.sample_rate > 0 && features.hop_length > 0 && features.win_length > 0,
              "config: feature sizes must be positive");
    LID_CHECK(features.n_fft >= features.win_length, "config: n_fft must cover win_length");
    LID_CHECK(features.n_mels > 0, "config: n_mels must be positive");
    lidkit::validate(encoder);
    LID_CHECK(encoder.n_mels == features.n_mels,
              "config: encoder n_mels must match features");
    LID_CHECK(quantizer.proj_dim > 0 && quantizer.codebook_size > 0,
              "config: quantizer dims must be positive");
    LID_CHECK(quantizer.input_dim == features.n_mels * encoder.sub_factor,
              "config: quantizer input_dim is derived, not settable");
    LID_CHECK(mask.coverage >= 0.0 && mask.coverage < 1.0,
              "config: mask coverage must be in [0, 1)");
    LID_CHECK(mask.span_ms >= 0.0, "config: mask span_ms must be non-negative");
    LID_CHECK(mask.noise_std >= 0.0, "config: mask noise_std must be non-negative");
    LID_CHECK(train.lambda >= 0.0 && train.lambda <= 1.0,
              "config: lambda must be in [0, 1]");
    LID_CHECK(train.batch_size > 0 && train.total_steps > 0 && train.warmup_steps > 0,
              "config: train sizes must be positive");
    LID_CHECK(train.total_steps >= train.warmup_steps,
              "config: total_steps must cover warmup_steps");
    LID_CHECK(train.crop_frames > 0, "config: crop_frames must be positive");
    LID_CHECK(data.eval_fraction > 0.0 && data.eval_fraction < 1.0,
              "config: eval_fraction must be in (0, 1)");
    if (data.manifest.empty()) {
        LID_CHECK(data.synth.num_languages >= 2, "config: synth needs at least 2 languages");
        LID_CHECK(data.synth.utts_per_language > 0, "config: synth utts_per_language");
        LID_CHECK(data.synth.sample_rate == features.sample_rate,
                  "config: synth sample_rate must match features");
    }
    LID_CHECK(!sweep.seeds.empty(), "config: sweep needs at least one seed");
    for (double s : sweep.spans_ms) {
        LID_CHECK(s >= 0.0, "config: sweep spans must be non-negative");
    }
}

nlohmann::json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["data"] = {{"manifest", data.manifest},
                 {"eval_fraction", data.eval_fraction},
                 {"synth",
                  {{"num_languages", data.synth.num_languages},
                   {"utts_per_language", data.synth.utts_per_language},
                   {"min_seconds", data.synth.min_seconds},
                   {"max_seconds", data.synth.max_seconds},
                   {"sample_rate", data.synth.sample_rate}}}};
    j["features"] = {{"sample_rate", features.sample_rate}, {"win_length", features.win_length},
                     {"hop_length", features.hop_length},   {"n_fft", features.n_fft},
                     {"n_mels", features.n_mels},           {"fmin_hz", features.fmin_hz},
                     {"fmax_hz", features.fmax_hz}};
    j["encoder"] = {{"dim", encoder.dim},
                    {"layers", encoder.layers},
                    {"heads", encoder.heads},
                    {"conv_kernel", encoder.conv_kernel},
                    {"ffn_mult", encoder.ffn_mult},
                    {"tap_layer", encoder.tap_layer}};
    j["quantizer"] = {{"proj_dim", quantizer.proj_dim},
                      {"codebook_size", quantizer.codebook_size}};
    j["mask"] = {{"coverage", mask.coverage},
                 {"span_ms", mask.span_ms},
                 {"noise_std", mask.noise_std}};
    j["train"] = {{"peak_lr", train.peak_lr},       {"warmup_steps", train.warmup_steps},
                  {"batch_size", train.batch_size}, {"total_steps", train.total_steps},
                  {"lambda", train.lambda},         {"clip_norm", train.clip_norm},
                  {"crop_frames", train.crop_frames}};
    j["sweep"] = {{"spans_ms", sweep.spans_ms}, {"seeds", sweep.seeds}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    LID_CHECK(j.is_object(), "config: document root must be a JSON object");
    RunConfig cfg;

    KeyAudit audit;
    audit.check(j, "", {"seed", "out_dir", "data", "features", "encoder", "quantizer", "mask",
                        "train", "sweep"});

    if (auto it = j.find("seed"); it != j.end()) {
        LID_CHECK(it->is_number_integer() && (it->is_number_unsigned() || it->get<i64>() >= 0),
                  "config: \"seed\" must be a non-negative integer");
        cfg.seed = it->get<u64>();
    }
    if (auto it = j.find("out_dir"); it != j.end()) {
        LID_CHECK(it->is_string(), "config: \"out_dir\" must be a string");
        cfg.out_dir = it->get<std::string>();
    }

    if (const json* d = object_at(j, "data")) {
        audit.check(*d, "data", {"manifest", "synth", "eval_fraction"});
        read_string(*d, "manifest", "data", cfg.data.manifest);
        read_double(*d, "eval_fraction", "data", cfg.data.eval_fraction);
        if (const json* s = object_at(*d, "synth")) {
            LID_CHECK(cfg.data.manifest.empty(),
                      "config: give either data.manifest or data.synth, not both");
            audit.check(*s, "data.synth",
                        {"num_languages", "utts_per_language", "min_seconds", "max_seconds",
                         "sample_rate"});
            read_int(*s, "num_languages", "data.synth", cfg.data.synth.num_languages);
            read_int(*s, "utts_per_language", "data.synth", cfg.data.synth.utts_per_language);
            read_double(*s, "min_seconds", "data.synth", cfg.data.synth.min_seconds);
            read_double(*s, "max_seconds", "data.synth", cfg.data.synth.max_seconds);
            read_int(*s, "sample_rate", "data.synth", cfg.data.synth.sample_rate);
        }
    }

    if (const json* f = object_at(j, "features")) {
        audit.check(*f, "features",
                    {"sample_rate", "win_length", "hop_length", "n_fft", "n_mels", "fmin_hz",
                     "fmax_hz"});
        read_int(*f, "sample_rate", "features", cfg.features.sample_rate);
        read_int(*f, "win_length", "features", cfg.features.win_length);
        read_int(*f, "hop_length", "features", cfg.features.hop_length);
        read_int(*f, "n_fft", "features", cfg.features.n_fft);
        read_int(*f, "n_mels", "features", cfg.features.n_mels);
        read_double(*f, "fmin_hz", "features", cfg.features.fmin_hz);
        read_double(*f, "fmax_hz", "features", cfg.features.fmax_hz);
    }

    if (const json* e = object_at(j, "encoder")) {
        audit.check(*e, "encoder",
                    {"dim", "layers", "heads", "conv_kernel", "ffn_mult", "tap_layer"});
        read_int(*e, "dim", "encoder", cfg.encoder.dim);
        read_int(*e, "layers", "encoder", cfg.encoder.layers);
        read_int(*e, "heads", "encoder", cfg.encoder.heads);
        read_int(*e, "conv_kernel", "encoder", cfg.encoder.conv_kernel);
        read_int(*e, "ffn_mult", "encoder", cfg.encoder.ffn_mult);
        read_int(*e, "tap_layer", "encoder", cfg.encoder.tap_layer);
    }

    if (const json* q = object_at(j, "quantizer")) {
        audit.check(*q, "quantizer", {"proj_dim", "codebook_size"});
        read_int(*q, "proj_dim", "quantizer", cfg.quantizer.proj_dim);
        read_int(*q, "codebook_size", "quantizer", cfg.quantizer.codebook_size);
    }

    if (const json* m = object_at(j, "mask")) {
        audit.check(*m, "mask", {"coverage", "span_ms", "noise_std"});
        read_double(*m, "coverage", "mask", cfg.mask.coverage);
        read_double(*m, "span_ms", "mask", cfg.mask.span_ms);
        read_double(*m, "noise_std", "mask", cfg.mask.noise_std);
    }

    if (const json* t = object_at(j, "train")) {
        audit.check(*t, "train",
                    {"peak_lr", "warmup_steps", "batch_size", "total_steps", "lambda",
                     "clip_norm", "crop_frames"});
        read_double(*t, "peak_lr", "train", cfg.train.peak_lr);
        read_int(*t, "warmup_steps", "train", cfg.train.warmup_steps);
        read_int(*t, "batch_size", "train", cfg.train.batch_size);
        read_int(*t, "total_steps", "train", cfg.train.total_steps);
        read_double(*t, "lambda", "train", cfg.train.lambda);
        read_double(*t, "clip_norm", "train", cfg.train.clip_norm);
        read_int(*t, "crop_frames", "train", cfg.train.crop_frames);
    }

    if (const json* s = object_at(j, "sweep")) {
        audit.check(*s, "sweep", {"spans_ms", "seeds"});
        read_array(*s, "spans_ms", "sweep", cfg.sweep.spans_ms);
        if (auto it = s->find("seeds"); it != s->end()) {
            LID_CHECK(it->is_array(), "config: \"sweep.seeds\" must be an array");
            cfg.sweep.seeds.clear();
            for (const auto& v : *it) {
                LID_CHECK(v.is_number_integer() && (v.is_number_unsigned() || v.get<i64>() >= 0),
                          "config: \"sweep.seeds\" entries must be non-negative integers");
                cfg.sweep.seeds.push_back(v.get<u64>());
            }
        }
    }

    if (!audit.unknown.empty()) {
        std::string joined;
        for (size_t i = 0; i < audit.unknown.size(); ++i) {
            if (i) joined += ", ";
            joined += audit.unknown[i];
        }
        LID_FAIL("config: unknown keys: ", joined);
    }

    cfg.encoder.n_mels = cfg.features.n_mels;
    cfg.quantizer.input_dim = cfg.features.n_mels * cfg.encoder.sub_factor;
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    LID_CHECK(in.good(), "config: cannot open ", path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        LID_FAIL("config: ", path, " is not valid JSON: ", e.what());
    }
    return from_json(j);
}

} // namespace lidkit
