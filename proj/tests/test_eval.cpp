#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidkit/eval.hpp"

using namespace lidkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// Random features posing as a dataset, for evaluation plumbing tests.
FeatureDataset fake_dataset(i64 n_langs, i64 per_lang, i64 frames, i64 n_mels, u64 seed) {
    FeatureDataset ds;
    Rng rng(seed);
    for (i64 l = 0; l < n_langs; ++l) {
        ds.languages.push_back("lang" + std::to_string(l));
    }
    for (i64 l = 0; l < n_langs; ++l) {
        for (i64 u = 0; u < per_lang; ++u) {
            Tensor<float> f(frames, n_mels);
            for (auto& x : f.data) x = static_cast<float>(rng.normal());
            ds.features.push_back(std::move(f));
            ds.labels.push_back(l);
            ds.ids.push_back(ds.languages[static_cast<size_t>(l)] + "_" + std::to_string(u));
        }
    }
    return ds;
}

FeatureStats unit_stats(i64 n_mels) {
    FeatureStats st;
    st.mean = Tensor<float>(1, n_mels);
    st.std = Tensor<float>(1, n_mels);
    for (auto& x : st.std.data) x = 1.0f;
    return st;
}

} // namespace

TEST_CASE("perfect predictions give zero error and unit F1") {
    const std::vector<std::string> langs = {"aa", "bb", "cc"};
    std::vector<i64> truth = {0, 1, 2, 0, 1, 2};
    const EvalReport rep = report_from_predictions(truth, truth, langs);
    CHECK(rep.error_rate == 0.0);
    CHECK(rep.macro_f1 == doctest::Approx(1.0));
    CHECK(rep.num_utts == 6);
    for (const auto& m : rep.per_language) {
        CHECK(m.precision == doctest::Approx(1.0));
        CHECK(m.recall == doctest::Approx(1.0));
        CHECK(m.f1 == doctest::Approx(1.0));
        CHECK(m.support == 2);
    }
    for (i64 r = 0; r < 3; ++r) {
        for (i64 c = 0; c < 3; ++c) {
            CHECK(rep.confusion[static_cast<size_t>(r * 3 + c)] == (r == c ? 2 : 0));
        }
    }
}

TEST_CASE("collapsed predictor on a balanced set") {
    // 4 classes, 20 utterances each, everything predicted as class 0.
    const std::vector<std::string> langs = {"l0", "l1", "l2", "l3"};
    std::vector<i64> truth;
    std::vector<i64> pred;
    for (i64 l = 0; l < 4; ++l) {
        for (i64 u = 0; u < 20; ++u) {
            truth.push_back(l);
            pred.push_back(0);
        }
    }
    const EvalReport rep = report_from_predictions(pred, truth, langs);
    CHECK(rep.error_rate == doctest::Approx(0.75));
    CHECK(rep.per_language[0].recall == doctest::Approx(1.0));
    CHECK(rep.per_language[0].precision == doctest::Approx(0.25));
    CHECK(rep.per_language[0].f1 == doctest::Approx(2.0 * 0.25 / 1.25));
    for (size_t l = 1; l < 4; ++l) {
        // Empty predicted column: precision 0 by convention, recall 0, F1 0.
        CHECK(rep.per_language[l].precision == 0.0);
        CHECK(rep.per_language[l].recall == 0.0);
        CHECK(rep.per_language[l].f1 == 0.0);
    }
    CHECK(rep.macro_f1 == doctest::Approx(2.0 * 0.25 / 1.25 / 4.0));
    i64 total = 0;
    for (i64 x : rep.confusion) total += x;
    CHECK(total == 80);
}

TEST_CASE("macro F1 averages the per-language scores over the full inventory") {
    const std::vector<std::string> langs = {"x", "y", "z"};
    // "z" never appears in truth or predictions: it still dilutes the macro.
    std::vector<i64> truth = {0, 0, 1, 1};
    std::vector<i64> pred = {0, 1, 1, 0};
    const EvalReport rep = report_from_predictions(pred, truth, langs);
    double mean = 0.0;
    for (const auto& m : rep.per_language) mean += m.f1;
    mean /= static_cast<double>(langs.size());
    CHECK(rep.macro_f1 == doctest::Approx(mean));
    CHECK(rep.per_language[2].support == 0);
    CHECK(rep.per_language[2].f1 == 0.0);
    CHECK(rep.error_rate == doctest::Approx(0.5));
}

TEST_CASE("confusion matrix counts rows as truth and columns as prediction") {
    const std::vector<std::string> langs = {"a", "b"};
    std::vector<i64> truth = {0, 0, 0, 1};
    std::vector<i64> pred = {0, 1, 1, 1};
    const EvalReport rep = report_from_predictions(pred, truth, langs);
    CHECK(rep.confusion[0] == 1); // true a, predicted a
    CHECK(rep.confusion[1] == 2); // true a, predicted b
    CHECK(rep.confusion[2] == 0);
    CHECK(rep.confusion[3] == 1);
    CHECK(rep.error_rate == doctest::Approx(0.5));
}

TEST_CASE("report rejects inconsistent inputs") {
    const std::vector<std::string> langs = {"a", "b"};
    CHECK_THROWS_AS((void)report_from_predictions({0, 1}, {0}, langs), Error);
    CHECK_THROWS_AS((void)report_from_predictions({0, 2}, {0, 0}, langs), Error);
    CHECK_THROWS_AS((void)report_from_predictions({0, 1}, {0, -1}, langs), Error);
    CHECK_THROWS_AS((void)report_from_predictions({}, {}, langs), Error);
}

TEST_CASE("f1 table lists every language plus an average row") {
    const std::vector<std::string> langs = {"qq", "rr"};
    const EvalReport rep = report_from_predictions({0, 1, 1}, {0, 1, 0}, langs);
    const std::string table = f1_table(rep);
    CHECK(table.find("qq") != std::string::npos);
    CHECK(table.find("rr") != std::string::npos);
    CHECK(table.find("Avg") != std::string::npos);
    CHECK(table.find("precision") != std::string::npos);

    const json j = report_json(rep);
    CHECK(j["error_rate"].get<double>() == doctest::Approx(rep.error_rate));
    CHECK(j["macro"]["f1"].get<double>() == doctest::Approx(rep.macro_f1));
    CHECK(j["num_utts"].get<i64>() == 3);
    CHECK(j["per_language"].size() == 2);
    CHECK(j["confusion"].size() == 2);
}

TEST_CASE("evaluation runs an untrained model end to end") {
    const FeatureDataset ds = fake_dataset(3, 4, 60, 20, 11);
    EncoderConfig cfg;
    cfg.n_mels = 20;
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.conv_kernel = 7;
    cfg.ffn_mult = 2;
    cfg.tap_layer = 1;
    const ParamStore params = init_model_params(cfg, 3, 16, 9);
    const FeatureStats stats = unit_stats(20);

    const EvalReport rep = evaluate(params, cfg, stats, ds, ds.languages);
    CHECK(rep.num_utts == 12);
    CHECK(rep.error_rate >= 0.0);
    CHECK(rep.error_rate <= 1.0);

    const EvalReport rep2 = evaluate(params, cfg, stats, ds, ds.languages);
    CHECK(rep.error_rate == rep2.error_rate);
    CHECK(rep.confusion == rep2.confusion);

    const std::vector<std::string> other = {"lang0", "lang1", "other"};
    CHECK_THROWS_AS((void)evaluate(params, cfg, stats, ds, other), Error);
}

TEST_CASE("embedding export writes one row per utterance") {
    const FeatureDataset ds = fake_dataset(2, 3, 50, 20, 12);
    EncoderConfig cfg;
    cfg.n_mels = 20;
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.conv_kernel = 7;
    cfg.ffn_mult = 2;
    cfg.tap_layer = 1;
    const ParamStore params = init_model_params(cfg, 2, 16, 9);
    const FeatureStats stats = unit_stats(20);

    const auto dir = fs::temp_directory_path() / "lidkit_embed_test";
    fs::create_directories(dir);
    const std::string path = (dir / "emb.csv").string();
    export_embeddings(params, cfg, stats, ds, path, json{{"run", 1}});

    const auto lines = read_lines(path);
    REQUIRE(lines.size() == 2 + ds.features.size());
    CHECK(lines[0].rfind("# config", 0) == 0);
    CHECK(lines[1].rfind("id,lang,e0,", 0) == 0);
    // header: id + lang + dim columns
    CHECK(std::count(lines[1].begin(), lines[1].end(), ',') == 1 + cfg.dim);
    CHECK(lines[2].rfind("lang0_0,lang0,", 0) == 0);

    export_embeddings(params, cfg, stats, ds, (dir / "emb2.csv").string(), json{{"run", 1}});
    CHECK(file_bytes(path) == file_bytes((dir / "emb2.csv").string()));
    fs::remove_all(dir);
}

TEST_CASE("masking sweep enumerates modes, spans, and seeds") {
    const std::vector<double> spans = {0.0, 80.0, 160.0, 240.0, 320.0, 400.0, 480.0};
    const std::vector<u64> seeds = {1, 2};
    std::vector<std::tuple<std::string, double, u64>> calls;
    SweepTrainFn fake = [&](const std::string& mode, double span_ms, u64 seed) {
        calls.emplace_back(mode, span_ms, seed);
        SweepRunOutcome o;
        o.error_rate = span_ms / 1000.0;
        o.has_pl = mode == "joint";
        o.pl_acc = 0.5;
        return o;
    };
    const std::vector<SweepRow> rows = masking_sweep(fake, spans, seeds);

    // 7 supervised spans (incl. 0) + 6 joint spans, per seed.
    REQUIRE(rows.size() == 2 * (7 + 6));
    REQUIRE(calls.size() == rows.size());
    i64 joint = 0;
    i64 sup = 0;
    for (const auto& r : rows) {
        if (r.mode == "joint") {
            ++joint;
            CHECK(r.span_ms > 0.0);
            CHECK(r.has_pl);
        } else {
            CHECK(r.mode == "supervised");
            ++sup;
            CHECK_FALSE(r.has_pl);
        }
        CHECK(r.error_rate == doctest::Approx(r.span_ms / 1000.0));
    }
    CHECK(joint == 12);
    CHECK(sup == 14);

    SUBCASE("csv serialization is stable and leaves missing fields empty") {
        const auto dir = fs::temp_directory_path() / "lidkit_sweep_test";
        fs::create_directories(dir);
        const std::string path = (dir / "sweep.csv").string();
        write_sweep_csv(path, rows, json{{"tag", "t"}});
        const auto lines = read_lines(path);
        REQUIRE(lines.size() == 2 + rows.size());
        CHECK(lines[0].rfind("# config", 0) == 0);
        CHECK(lines[1] == "mode,span_ms,seed,error_rate,pseudo_label_acc");
        bool saw_empty_pl = false;
        for (size_t i = 2; i < lines.size(); ++i) {
            if (lines[i].back() == ',') saw_empty_pl = true;
        }
        CHECK(saw_empty_pl);
        write_sweep_csv((dir / "sweep2.csv").string(), rows, json{{"tag", "t"}});
        CHECK(file_bytes(path) == file_bytes((dir / "sweep2.csv").string()));
        fs::remove_all(dir);
    }

    SUBCASE("explicit span list is honored verbatim") {
        calls.clear();
        const auto rows2 = masking_sweep(fake, {80.0, 240.0}, {7});
        CHECK(rows2.size() == 4); // 2 supervised + 2 joint
        std::set<u64> seen;
        for (const auto& r : rows2) seen.insert(r.seed);
        CHECK(seen == std::set<u64>{7});
    }

    SUBCASE("mode toggles restrict the runs") {
        calls.clear();
        const auto only_joint = masking_sweep(fake, {240.0}, {1}, false, true);
        CHECK(only_joint.size() == 1);
        CHECK(only_joint[0].mode == "joint");
        const auto only_sup = masking_sweep(fake, {240.0}, {1}, true, false);
        CHECK(only_sup.size() == 1);
        CHECK(only_sup[0].mode == "supervised");
    }
}
