#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lidkit/datasets.hpp"
#include "lidkit/encoder.hpp"
#include "lidkit/features.hpp"
#include "lidkit/rpq.hpp"
#include "lidkit/trainer.hpp"

namespace lidkit {

// Where the audio comes from: an existing manifest, or a synthetic corpus
// generated on demand from `synth`.
struct DataConfig {
    std::string manifest; // empty means synthesize
    SynthConfig synth;
    double eval_fraction = 2.0 / 7.0; // 280 utterances -> 200 train / 80 eval
};

struct SweepConfig {
    std::vector<double> spans_ms = {0.0, 80.0, 160.0, 240.0, 320.0, 400.0, 480.0};
    std::vector<u64> seeds = {1, 2, 3};
};

// One document drives every subcommand. Defaults are the desk-scale setup;
// the full-scale counterparts are noted next to the fields they shrink.
struct RunConfig {
    u64 seed = 1;
    std::string out_dir;
    DataConfig data;
    FeatureConfig features;   // window 400 / hop 160 at 16 kHz, 80 mels
    EncoderConfig encoder;    // desk 4 layers x dim 64; full scale Conformer(S) 16 x 144
    QuantizerConfig quantizer; // codeword dim 16, 256 codewords
    MaskSettings mask;        // 35% coverage, 240 ms spans
    TrainSettings train;      // desk batch 32 / warmup 500; full scale 256 / 5000
    SweepConfig sweep;

    // Cross-field checks beyond what each module validates itself.
    void validate() const;

    // Full effective config, defaults materialized; embedded in artifacts.
    nlohmann::json to_json() const;

    // Strict parse: any key not named in the schema fails, listing every
    // offender by dotted path.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
};

} // namespace lidkit
