#include "lidkit/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "lidkit/audio.hpp"

namespace lidkit {

namespace fs = std::filesystem;
using nlohmann::json;

i64 Manifest::label_of(const std::string& language) const {
    const auto it = std::lower_bound(languages.begin(), languages.end(), language);
    LID_CHECK(it != languages.end() && *it == language, "unknown language '", language,
              "'");
    return static_cast<i64>(it - languages.begin());
}

void Manifest::rebuild_language_index() {
    std::set<std::string> uniq;
    for (const auto& u : utts) uniq.insert(u.language);
    languages.assign(uniq.begin(), uniq.end());
}

Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    LID_CHECK(f.is_open(), path, ": cannot open manifest");
    const fs::path base = fs::path(path).parent_path();

    Manifest m;
    std::string line;
    i64 lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            LID_FAIL(path, ":", lineno, ": invalid JSON: ", e.what());
        }
        LID_CHECK(obj.is_object(), path, ":", lineno, ": manifest line is not an object");
        LID_CHECK(obj.contains("path") && obj["path"].is_string(), path, ":", lineno,
                  ": missing string field 'path'");
        LID_CHECK(obj.contains("lang") && obj["lang"].is_string(), path, ":",
                  lineno, ": missing string field 'lang'");
        Utterance u;
        u.path = obj["path"].get<std::string>();
        u.language = obj["lang"].get<std::string>();
        if (!fs::path(u.path).is_absolute()) u.path = (base / u.path).string();
        m.utts.push_back(std::move(u));
    }
    LID_CHECK(!m.utts.empty(), path, ": manifest is empty");
    m.rebuild_language_index();
    return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream f(path);
    LID_CHECK(f.is_open(), path, ": cannot open manifest for writing");
    const fs::path base = fs::path(path).parent_path();
    for (const auto& u : manifest.utts) {
        json obj;
        // Store paths relative to the manifest when possible, so the
        // corpus directory can be moved as a unit.
        const fs::path p(u.path);
        std::error_code ec;
        const fs::path rel = fs::relative(p, base, ec);
        obj["path"] = (!ec && !rel.empty() && rel.native()[0] != '.') ? rel.string()
                                                                      : u.path;
        obj["lang"] = u.language;
        f << obj.dump() << "\n";
    }
    LID_CHECK(f.good(), path, ": manifest write failed");
}

SplitIndices stratified_split(const Manifest& manifest, double eval_fraction, Rng& rng) {
    LID_CHECK(eval_fraction > 0.0 && eval_fraction < 1.0,
              "eval fraction must be in (0, 1), got ", eval_fraction);
    SplitIndices out;
    for (const auto& lang : manifest.languages) {
        std::vector<i64> idx;
        for (i64 i = 0; i < static_cast<i64>(manifest.utts.size()); ++i)
            if (manifest.utts[static_cast<size_t>(i)].language == lang) idx.push_back(i);
        // Fisher-Yates with our own rng; std::shuffle is not bit-portable.
        for (i64 i = static_cast<i64>(idx.size()) - 1; i > 0; --i) {
            const i64 j = static_cast<i64>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        i64 n_eval = static_cast<i64>(
            std::llround(eval_fraction * static_cast<double>(idx.size())));
        if (idx.size() >= 2) n_eval = std::max<i64>(1, n_eval);
        n_eval = std::min<i64>(n_eval, static_cast<i64>(idx.size()) - 1);
        for (size_t k = 0; k < idx.size(); ++k) {
            if (static_cast<i64>(k) < n_eval)
                out.eval.push_back(idx[k]);
            else
                out.train.push_back(idx[k]);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.eval.begin(), out.eval.end());
    return out;
}

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

struct UnitSpec {
    double f0;
    double fc1, bw1;
    double fc2, bw2;
};

struct LanguageSpec {
    std::vector<UnitSpec> units;
    std::vector<double> trans; // row-stochastic, units x units
    double dur_lo, dur_hi;     // seconds per unit
    double tilt_db_per_oct;
};

std::vector<LanguageSpec> build_languages(i64 n_langs, Rng& rng) {
    // Shared pool of voiced units; each language draws a private inventory.
    constexpr i64 kPool = 20;
    constexpr i64 kInventory = 6;
    std::vector<UnitSpec> pool(kPool);
    for (auto& u : pool) {
        u.f0 = rng.uniform(90.0, 220.0);
        u.fc1 = rng.uniform(300.0, 900.0);
        u.bw1 = rng.uniform(80.0, 160.0);
        u.fc2 = rng.uniform(1200.0, 2800.0);
        u.bw2 = rng.uniform(120.0, 240.0);
    }

    std::vector<LanguageSpec> langs(static_cast<size_t>(n_langs));
    for (auto& lang : langs) {
        std::vector<i64> order(kPool);
        for (i64 i = 0; i < kPool; ++i) order[static_cast<size_t>(i)] = i;
        for (i64 i = kPool - 1; i > 0; --i) {
            const i64 j = static_cast<i64>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        for (i64 k = 0; k < kInventory; ++k)
            lang.units.push_back(pool[static_cast<size_t>(order[static_cast<size_t>(k)])]);

        lang.trans.resize(kInventory * kInventory);
        for (i64 r = 0; r < kInventory; ++r) {
            double total = 0.0;
            for (i64 c = 0; c < kInventory; ++c) {
                const double w = rng.uniform(0.05, 1.0);
                lang.trans[static_cast<size_t>(r * kInventory + c)] = w;
                total += w;
            }
            for (i64 c = 0; c < kInventory; ++c)
                lang.trans[static_cast<size_t>(r * kInventory + c)] /= total;
        }

        lang.dur_lo = rng.uniform(0.11, 0.16);
        lang.dur_hi = lang.dur_lo + rng.uniform(0.05, 0.08);
        lang.tilt_db_per_oct = rng.uniform(-4.0, 4.0);
    }
    return langs;
}

void synth_unit(const UnitSpec& u, double tilt_db_per_oct, i64 len, i64 rate, Rng& rng,
                std::vector<double>& out) {
    out.assign(static_cast<size_t>(len), 0.0);
    const double f0 = u.f0 * rng.uniform(0.96, 1.04);
    const i64 H = static_cast<i64>(0.45 * static_cast<double>(rate) / f0);
    std::vector<std::complex<double>> phasor(static_cast<size_t>(H));
    std::vector<std::complex<double>> step(static_cast<size_t>(H));
    std::vector<double> amp(static_cast<size_t>(H));
    for (i64 h = 1; h <= H; ++h) {
        const double f = static_cast<double>(h) * f0;
        const double r1 = 1.0 / (1.0 + std::pow((f - u.fc1) / u.bw1, 2.0));
        const double r2 = 1.0 / (1.0 + std::pow((f - u.fc2) / u.bw2, 2.0));
        double a = r1 + 0.7 * r2;
        a *= std::pow(f / 100.0, tilt_db_per_oct / 6.0206);
        amp[static_cast<size_t>(h - 1)] = a;
        phasor[static_cast<size_t>(h - 1)] = std::polar(1.0, rng.uniform(0.0, kTwoPi));
        step[static_cast<size_t>(h - 1)] =
            std::polar(1.0, kTwoPi * f / static_cast<double>(rate));
    }
    const double fade = 160.0; // 10 ms edge ramps against clicks
    for (i64 t = 0; t < len; ++t) {
        double s = 0.0;
        for (i64 h = 0; h < H; ++h) {
            s += amp[static_cast<size_t>(h)] * phasor[static_cast<size_t>(h)].imag();
            phasor[static_cast<size_t>(h)] *= step[static_cast<size_t>(h)];
        }
        const double env = std::min(
            1.0, std::min(static_cast<double>(t) / fade,
                          static_cast<double>(len - 1 - t) / fade));
        out[static_cast<size_t>(t)] = s * std::max(env, 0.0);
    }
}

std::vector<float> synth_utterance(const LanguageSpec& lang, i64 target_samples,
                                   i64 rate, Rng& rng) {
    const i64 n_units = static_cast<i64>(lang.units.size());
    std::vector<double> buf;
    buf.reserve(static_cast<size_t>(target_samples) + 4096);
    std::vector<double> seg;
    i64 state = static_cast<i64>(rng.uniform_index(static_cast<std::uint64_t>(n_units)));
    while (static_cast<i64>(buf.size()) < target_samples) {
        const double dur = rng.uniform(lang.dur_lo, lang.dur_hi);
        const i64 len = static_cast<i64>(std::llround(dur * static_cast<double>(rate)));
        synth_unit(lang.units[static_cast<size_t>(state)], lang.tilt_db_per_oct, len,
                   rate, rng, seg);
        buf.insert(buf.end(), seg.begin(), seg.end());
        // Next state from the Markov row.
        const double roll = rng.uniform();
        double cdf = 0.0;
        i64 next = n_units - 1;
        for (i64 c = 0; c < n_units; ++c) {
            cdf += lang.trans[static_cast<size_t>(state * n_units + c)];
            if (roll < cdf) {
                next = c;
                break;
            }
        }
        state = next;
    }
    buf.resize(static_cast<size_t>(target_samples));

    double peak = 0.0;
    for (const double v : buf) peak = std::max(peak, std::abs(v));
    const double gain = peak > 0.0 ? 0.85 / peak : 0.0;

    // Quantize onto the int16 grid up front so the in-memory signal equals
    // what a wav round-trip returns.
    std::vector<float> out(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        const double q = std::round(buf[i] * gain * 32768.0);
        out[i] = static_cast<float>(std::min(32767.0, std::max(-32768.0, q)) / 32768.0);
    }
    return out;
}

} // namespace

Manifest generate_corpus(const SynthConfig& cfg, std::uint64_t seed,
                         const std::string& dir) {
    LID_CHECK(cfg.num_languages >= 2, "need at least two languages, got ",
              cfg.num_languages);
    LID_CHECK(cfg.utts_per_language >= 1, "need at least one utterance per language");
    LID_CHECK(cfg.min_seconds > 0.0 && cfg.max_seconds >= cfg.min_seconds,
              "bad duration range");
    fs::create_directories(dir);

    Rng lang_rng(seed, "synth");
    const auto langs = build_languages(cfg.num_languages, lang_rng);

    Manifest m;
    for (i64 li = 0; li < cfg.num_languages; ++li) {
        const std::string lang_name = concat("L", li < 10 ? "0" : "", li);
        for (i64 ui = 0; ui < cfg.utts_per_language; ++ui) {
            // Every utterance gets its own stream so corpora of different
            // sizes agree on their common prefix.
            Rng rng(seed ^ fnv1a(concat("synth-utt-", li, "-", ui)));
            const double secs = rng.uniform(cfg.min_seconds, cfg.max_seconds);
            const i64 samples =
                static_cast<i64>(std::llround(secs * static_cast<double>(cfg.sample_rate)));
            const auto wave = synth_utterance(langs[static_cast<size_t>(li)], samples,
                                              cfg.sample_rate, rng);
            const std::string name =
                concat(lang_name, "_", ui < 10 ? "00" : (ui < 100 ? "0" : ""), ui, ".wav");
            const std::string path = (fs::path(dir) / name).string();
            write_wav(path, wave, cfg.sample_rate);
            m.utts.push_back({path, lang_name});
        }
    }
    m.rebuild_language_index();
    save_manifest(m, (fs::path(dir) / "manifest.jsonl").string());
    return m;
}

FeatureDataset load_features(const Manifest& manifest, const FeatureConfig& cfg,
                             const std::vector<i64>& indices) {
    std::vector<i64> sel = indices;
    if (sel.empty()) {
        sel.resize(manifest.utts.size());
        for (size_t i = 0; i < sel.size(); ++i) sel[i] = static_cast<i64>(i);
    }
    FeatureExtractor fx(cfg);
    FeatureDataset ds;
    ds.languages = manifest.languages;
    ds.features.reserve(sel.size());
    ds.labels.reserve(sel.size());
    ds.ids.reserve(sel.size());
    for (i64 i : sel) {
        LID_CHECK(i >= 0 && i < static_cast<i64>(manifest.utts.size()),
                  "utterance index ", i, " out of range");
        const auto& u = manifest.utts[static_cast<size_t>(i)];
        AudioClip clip;
        try {
            clip = read_wav(u.path);
        } catch (const Error& e) {
            LID_FAIL(u.path, ": ", e.what());
        }
        LID_CHECK(clip.sample_rate == cfg.sample_rate, u.path, ": sample rate ",
                  clip.sample_rate, ", expected ", cfg.sample_rate);
        Tensor<float> feats = fx.logmel(clip.samples);
        LID_CHECK(feats.rows > 0, u.path, ": too short for one analysis window");
        ds.features.push_back(std::move(feats));
        ds.labels.push_back(manifest.label_of(u.language));
        ds.ids.push_back(fs::path(u.path).stem().string());
    }
    return ds;
}

} // namespace lidkit
