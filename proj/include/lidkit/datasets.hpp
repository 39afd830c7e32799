#pragma once

#include <string>
#include <vector>

#include "lidkit/features.hpp"
#include "lidkit/rng.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

struct Utterance {
    std::string path;
    std::string language;
};

// A labeled corpus listing. Language names are collected, deduplicated, and
// sorted, so label indices are stable regardless of manifest line order.
struct Manifest {
    std::vector<Utterance> utts;
    std::vector<std::string> languages;

    i64 label_of(const std::string& language) const;
    void rebuild_language_index();
};

// Reads a JSONL manifest: one object per line with string fields "path" and
// "lang". Unknown fields are ignored; missing or mistyped ones are errors
// naming the line. Relative paths resolve against the manifest's directory.
Manifest load_manifest(const std::string& path);

void save_manifest(const Manifest& manifest, const std::string& path);

struct SplitIndices {
    std::vector<i64> train;
    std::vector<i64> eval;
};

// Per-language shuffle-and-cut split. Every language contributes
// round(eval_fraction * count), at least 1 when it has at least 2
// utterances, to the eval side.
SplitIndices stratified_split(const Manifest& manifest, double eval_fraction, Rng& rng);

struct SynthConfig {
    i64 num_languages = 4;
    i64 utts_per_language = 70;
    double min_seconds = 3.0;
    double max_seconds = 3.0;
    i64 sample_rate = 16000;
};

// Generates a synthetic spoken-language corpus under `dir` and writes
// dir/manifest.jsonl. Each language is a Markov chain over a private
// inventory of harmonic units (two-formant voiced sounds with a
// language-specific spectral tilt), which gives classes that are separable
// from long-term spectra but still vary frame to frame. Returns the
// manifest with paths resolved under `dir`. Fully deterministic in
// (config, seed).
Manifest generate_corpus(const SynthConfig& cfg, std::uint64_t seed,
                         const std::string& dir);

// Raw (un-normalized) log-mel features plus integer labels for a set of
// utterances, loaded once up front. ids carry the audio file stem for
// reporting.
struct FeatureDataset {
    std::vector<Tensor<float>> features;
    std::vector<i64> labels;
    std::vector<std::string> ids;
    std::vector<std::string> languages;
};

// Extracts features for the selected manifest entries (all of them when
// `indices` is empty). Read or decode failures name the offending file.
FeatureDataset load_features(const Manifest& manifest, const FeatureConfig& cfg,
                             const std::vector<i64>& indices = {});

} // namespace lidkit
