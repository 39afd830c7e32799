#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidkit/datasets.hpp"
#include "lidkit/trainer.hpp"

using namespace lidkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / (tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Step records with the volatile timing field removed and the final record's
// run-specific checkpoint path blanked.
std::vector<json> step_records_without_wall(const std::string& log_path) {
    std::vector<json> recs;
    for (const auto& line : read_lines(log_path)) {
        json j = json::parse(line);
        j.erase("wall_ms");
        if (j.contains("final")) j["final"].erase("checkpoint");
        recs.push_back(std::move(j));
    }
    return recs;
}

struct TinySetup {
    fs::path dir;
    Manifest manifest;
    FeatureDataset train_set;
    FeatureDataset eval_set;
    TrainInput input;
};

// Small real pipeline: 4 synthetic languages, short utterances, a reduced
// encoder. Shared across the training tests to avoid regenerating audio.
TinySetup& tiny_setup() {
    static TinySetup s = [] {
        TinySetup t;
        t.dir = temp_dir("lidkit_trainer");
        SynthConfig sc;
        sc.num_languages = 4;
        sc.utts_per_language = 6;
        sc.min_seconds = 1.2;
        sc.max_seconds = 1.6;
        t.manifest = generate_corpus(sc, 77, (t.dir / "corpus").string());

        Rng split_rng(77, "split");
        const SplitIndices split = stratified_split(t.manifest, 0.25, split_rng);
        FeatureConfig fc;
        t.train_set = load_features(t.manifest, fc, split.train);
        t.eval_set = load_features(t.manifest, fc, split.eval);

        TrainInput in;
        in.train_set = &t.train_set;
        in.eval_set = &t.eval_set;
        in.features = fc;
        in.encoder.dim = 16;
        in.encoder.layers = 2;
        in.encoder.heads = 2;
        in.encoder.conv_kernel = 7;
        in.encoder.ffn_mult = 2;
        in.encoder.tap_layer = 1;
        in.quantizer.proj_dim = 8;
        in.quantizer.codebook_size = 32;
        in.train.batch_size = 4;
        in.train.total_steps = 200;
        in.train.warmup_steps = 50;
        in.train.crop_frames = 100;
        in.seed = 5;
        in.config_echo = json{{"note", "trainer test"}};
        t.input = in;
        return t;
    }();
    return s;
}

} // namespace

TEST_CASE("lr schedule warms up linearly and decays as inverse sqrt") {
    const double peak = 1e-3;
    CHECK(lr_schedule(500, peak, 500) == doctest::Approx(peak));
    CHECK(lr_schedule(250, peak, 500) == doctest::Approx(peak / 2));
    CHECK(lr_schedule(2000, peak, 500) == doctest::Approx(peak / 2));
    CHECK(lr_schedule(1, peak, 500) == doctest::Approx(peak / 500));
    CHECK_THROWS_AS((void)lr_schedule(0, peak, 500), Error);
    for (i64 s = 2; s < 2000; ++s) {
        const double prev = lr_schedule(s - 1, peak, 500);
        const double cur = lr_schedule(s, peak, 500);
        if (s <= 500) {
            CHECK(cur > prev);
        } else {
            CHECK(cur < prev);
        }
    }
}

TEST_CASE("Adam first step moves a constant-gradient scalar by -lr") {
    ParamStore ps;
    ps.add("w", 1, 1).data[0] = 1.0f;
    Adam adam;
    adam.init(ps);
    Tensor<float> g(1, 1);
    g.data[0] = 1.0f;
    adam.step(ps, {{"w", &g}}, 0.01);
    CHECK(ps.get("w").data[0] - 1.0f == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(adam.steps_taken() == 1);
}

TEST_CASE("Adam leaves parameters alone under zero gradients") {
    ParamStore ps;
    auto& w = ps.add("w", 3, 4);
    Rng rng(2);
    for (auto& x : w.data) x = static_cast<float>(rng.normal());
    const auto before = w.data;
    Adam adam;
    adam.init(ps);
    Tensor<float> g(3, 4);
    for (int i = 0; i < 5; ++i) adam.step(ps, {{"w", &g}}, 0.1);
    CHECK(ps.get("w").data == before);
}

TEST_CASE("Adam is deterministic across runs") {
    auto run = [] {
        ParamStore ps;
        auto& w = ps.add("w", 8, 8);
        Rng init(3);
        for (auto& x : w.data) x = static_cast<float>(init.normal());
        Adam adam;
        adam.init(ps);
        Rng gr(4);
        for (int s = 0; s < 50; ++s) {
            Tensor<float> g(8, 8);
            for (auto& x : g.data) x = static_cast<float>(gr.normal());
            adam.step(ps, {{"w", &g}}, 1e-3);
        }
        return ps.get("w").data;
    };
    CHECK(run() == run());
}

TEST_CASE("Adam rejects non-finite gradients naming the parameter") {
    ParamStore ps;
    ps.add("block0.ffn1.w1.w", 2, 2).data[0] = 1.0f;
    const auto before = ps.get("block0.ffn1.w1.w").data;
    Adam adam;
    adam.init(ps);
    Tensor<float> g(2, 2);
    g.data[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(adam.step(ps, {{"block0.ffn1.w1.w", &g}}, 0.1),
                         doctest::Contains("block0.ffn1.w1.w"), Error);
    CHECK(ps.get("block0.ffn1.w1.w").data == before);
    CHECK(adam.steps_taken() == 0);
}

TEST_CASE("gradient clipping equals pre-scaling the gradients") {
    auto make = [] {
        ParamStore ps;
        auto& w = ps.add("w", 4, 4);
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] = static_cast<float>(i) * 0.1f;
        return ps;
    };
    Tensor<float> g(4, 4);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = 3.0f;
    double norm = 0.0;
    for (float x : g.data) norm += static_cast<double>(x) * static_cast<double>(x);
    norm = std::sqrt(norm);
    const double clip = norm / 2.0;

    ParamStore a = make();
    Adam adam_a;
    adam_a.init(a);
    adam_a.step(a, {{"w", &g}}, 0.05, clip);

    Tensor<float> scaled(4, 4);
    for (size_t i = 0; i < g.data.size(); ++i) {
        scaled.data[i] = static_cast<float>(static_cast<double>(g.data[i]) * (clip / norm));
    }
    ParamStore b = make();
    Adam adam_b;
    adam_b.init(b);
    adam_b.step(b, {{"w", &scaled}}, 0.05, 0.0);

    for (size_t i = 0; i < a.get("w").data.size(); ++i) {
        CHECK(a.get("w").data[i] == doctest::Approx(b.get("w").data[i]).epsilon(1e-6));
    }

    // Below the threshold the clip must be a no-op.
    ParamStore c = make();
    Adam adam_c;
    adam_c.init(c);
    adam_c.step(c, {{"w", &g}}, 0.05, norm * 10.0);
    ParamStore d = make();
    Adam adam_d;
    adam_d.init(d);
    adam_d.step(d, {{"w", &g}}, 0.05, 0.0);
    CHECK(c.get("w").data == d.get("w").data);
}

TEST_CASE("mask spans convert from milliseconds to frames") {
    FeatureConfig fc; // 16 kHz, hop 160 -> 10 ms per frame
    CHECK(span_frames_for_ms(240.0, fc) == 24);
    CHECK(span_frames_for_ms(80.0, fc) == 8);
    CHECK(span_frames_for_ms(480.0, fc) == 48);
    CHECK(span_frames_for_ms(0.0, fc) == 0);
    CHECK_THROWS_AS((void)span_frames_for_ms(-1.0, fc), Error);
}

TEST_CASE("training runs, logs every step, and improves the supervised loss") {
    auto& setup = tiny_setup();
    TrainInput in = setup.input;
    in.out_dir = (setup.dir / "run_a").string();
    const TrainOutcome out = train(in);

    CHECK(fs::exists(out.checkpoint_path));
    CHECK(out.quantizer_calls > 0);
    REQUIRE(out.has_final_eval);
    CHECK(out.final_eval.error_rate >= 0.0);
    CHECK(out.final_eval.error_rate <= 1.0);
    REQUIRE(out.has_final_pl);
    CHECK(out.final_pl_acc >= 0.0);
    CHECK(out.final_pl_acc <= 1.0);

    const auto lines = read_lines(out.log_path);
    REQUIRE(static_cast<i64>(lines.size()) == in.train.total_steps + 2);
    const json head = json::parse(lines.front());
    CHECK(head.contains("config"));
    CHECK(head["config"]["note"] == "trainer test");

    double first_ls = 0.0;
    double last_ls = 0.0;
    for (size_t i = 1; i + 1 < lines.size(); ++i) {
        const json rec = json::parse(lines[i]);
        REQUIRE(rec.contains("step"));
        REQUIRE(rec.contains("lr"));
        REQUIRE(rec.contains("l_s"));
        REQUIRE(rec.contains("loss"));
        REQUIRE(rec.contains("wall_ms"));
        CHECK(rec["step"].get<i64>() == static_cast<i64>(i));
        CHECK(std::isfinite(rec["loss"].get<double>()));
        if (i == 1) first_ls = rec["l_s"].get<double>();
        if (i + 2 == lines.size()) last_ls = rec["l_s"].get<double>();
        if (rec.contains("l_u")) {
            CHECK(rec.contains("pl_acc"));
            CHECK(rec["l_u"].get<double>() > 0.0);
        }
    }
    CHECK(last_ls < first_ls);

    const json tail = json::parse(lines.back());
    REQUIRE(tail.contains("final"));
    CHECK(tail["final"]["error_rate"].get<double>() ==
          doctest::Approx(out.final_eval.error_rate).epsilon(1e-12));

    SUBCASE("identical invocations give byte-identical checkpoints") {
        TrainInput in2 = setup.input;
        in2.out_dir = (setup.dir / "run_b").string();
        const TrainOutcome out2 = train(in2);
        CHECK(file_bytes(out.checkpoint_path) == file_bytes(out2.checkpoint_path));
        CHECK(step_records_without_wall(out.log_path) ==
              step_records_without_wall(out2.log_path));
        CHECK(out2.final_eval.error_rate == out.final_eval.error_rate);
    }

    SUBCASE("checkpoint round-trip reproduces the logged evaluation exactly") {
        const ModelState st = state_from_checkpoint(load_checkpoint(out.checkpoint_path));
        CHECK(st.step == in.train.total_steps);
        CHECK(st.languages == setup.train_set.languages);
        const EvalReport rep =
            evaluate(st.params, in.encoder, st.stats, setup.eval_set, st.languages);
        CHECK(rep.error_rate == out.final_eval.error_rate);
        CHECK(rep.confusion == out.final_eval.confusion);
    }
}

TEST_CASE("supervised-only training never touches the quantizer") {
    auto& setup = tiny_setup();
    TrainInput in = setup.input;
    in.train.lambda = 0.0;
    in.train.total_steps = 20;
    in.train.warmup_steps = 5;
    in.out_dir = (setup.dir / "run_sup").string();
    const TrainOutcome out = train(in);
    CHECK(out.quantizer_calls == 0);
    CHECK_FALSE(out.has_final_pl);

    const auto lines = read_lines(out.log_path);
    for (size_t i = 1; i + 1 < lines.size(); ++i) {
        const json rec = json::parse(lines[i]);
        CHECK_FALSE(rec.contains("l_u"));
        CHECK_FALSE(rec.contains("pl_acc"));
        // Masking still runs as augmentation; the loss is pure L_s.
        CHECK(rec["loss"].get<double>() == doctest::Approx(rec["l_s"].get<double>()));
    }
    const CheckpointData ck = load_checkpoint(out.checkpoint_path);
    CHECK_FALSE(ck.has("quantizer/projection"));
}

TEST_CASE("zero coverage leaves the unsupervised term empty") {
    auto& setup = tiny_setup();
    TrainInput in = setup.input;
    in.mask.coverage = 0.0;
    in.train.total_steps = 10;
    in.train.warmup_steps = 2;
    in.out_dir = (setup.dir / "run_nomask").string();
    const TrainOutcome out = train(in);
    CHECK(out.quantizer_calls == 0);

    const auto lines = read_lines(out.log_path);
    for (size_t i = 1; i + 1 < lines.size(); ++i) {
        const json rec = json::parse(lines[i]);
        CHECK_FALSE(rec.contains("l_u"));
        // lambda = 0.5 with an absent unsupervised term halves the loss.
        CHECK(rec["loss"].get<double>() ==
              doctest::Approx(0.5 * rec["l_s"].get<double>()).epsilon(1e-6));
    }
}

TEST_CASE("train rejects bad settings") {
    auto& setup = tiny_setup();
    TrainInput in = setup.input;
    in.out_dir = (setup.dir / "run_bad").string();

    in.train.warmup_steps = 300; // exceeds total_steps 200
    CHECK_THROWS_AS((void)train(in), Error);
    in = setup.input;
    in.out_dir = (setup.dir / "run_bad").string();
    in.train.lambda = 1.5;
    CHECK_THROWS_AS((void)train(in), Error);
    in = setup.input;
    in.out_dir = (setup.dir / "run_bad").string();
    in.mask.coverage = 1.0;
    CHECK_THROWS_AS((void)train(in), Error);
    in = setup.input;
    in.train_set = nullptr;
    CHECK_THROWS_AS((void)train(in), Error);
}

TEST_CASE("checkpoint loader validates structure") {
    const auto dir = temp_dir("lidkit_ckpt");
    CheckpointData ck;
    ck.meta = json{{"languages", json::array({"a", "b"})}, {"step", 3}};
    auto& w = ck.add("params/w", Tensor<float>(2, 3));
    for (size_t i = 0; i < w.data.size(); ++i) w.data[i] = static_cast<float>(i);
    ck.add("stats/mean", Tensor<float>(1, 4));
    ck.add("stats/std", Tensor<float>(1, 4));

    const std::string path = (dir / "c.bin").string();
    save_checkpoint(path, ck);
    const CheckpointData back = load_checkpoint(path);
    CHECK(back.order == ck.order);
    CHECK(back.get("params/w").data == w.data);
    CHECK(back.meta["step"].get<i64>() == 3);

    const ModelState st = state_from_checkpoint(back);
    CHECK(st.params.names() == std::vector<std::string>{"w"});
    CHECK(st.languages == std::vector<std::string>{"a", "b"});

    // Truncated file
    {
        const std::string bytes = file_bytes(path);
        std::ofstream out((dir / "trunc.bin").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
    }
    CHECK_THROWS_AS((void)load_checkpoint((dir / "trunc.bin").string()), Error);

    // Trailing garbage
    {
        std::ofstream out((dir / "extra.bin").string(), std::ios::binary);
        const std::string bytes = file_bytes(path);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out << "x";
    }
    CHECK_THROWS_AS((void)load_checkpoint((dir / "extra.bin").string()), Error);

    CheckpointData no_stats;
    no_stats.meta = json{{"languages", json::array({"a"})}};
    no_stats.add("params/w", Tensor<float>(1, 1));
    CHECK_THROWS_AS((void)state_from_checkpoint(no_stats), Error);
    fs::remove_all(dir);
}
