#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "svt/experiment.hpp"

using namespace svt;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "svt_experiment_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_experiment(const fs::path& root, const std::string& manifest) {
    ExperimentConfig cfg;
    cfg.mode = SystemMode::kAudio;
    cfg.name = "t";
    cfg.manifest = manifest;
    cfg.seed = 11;
    cfg.output_root = (root / "runs").string();
    cfg.model.audio_channels = 6;
    cfg.model.model_dim = 8;
    cfg.model.transformer_blocks = 1;
    cfg.model.attention_heads = 2;
    cfg.model.ffn_dim = 16;
    cfg.model.video_channels = 3;
    cfg.schedule.lp_epochs = 1;
    cfg.schedule.ft_epochs = 1;
    cfg.schedule.batch_size_train = 2;
    cfg.noise_families = {NoiseFamily::kWhite};
    cfg.noise_snrs_db = {0.0, std::numeric_limits<double>::infinity()};
    cfg.train_snrs_db = {0.0, std::numeric_limits<double>::infinity()};
    return cfg;
}

}  // namespace

TEST_CASE("experiment config round trips through JSON") {
    ExperimentConfig cfg;
    cfg.mode = SystemMode::kAudioVisual;
    cfg.manifest = "m.csv";
    cfg.seed = 42;
    cfg.zero_video = true;
    cfg.noise_snrs_db = {-10.0, std::numeric_limits<double>::infinity()};
    nlohmann::json j = cfg;
    const ExperimentConfig back = j.get<ExperimentConfig>();
    CHECK(back.mode == SystemMode::kAudioVisual);
    CHECK(back.manifest == "m.csv");
    CHECK(back.seed == 42);
    CHECK(back.zero_video);
    REQUIRE(back.noise_snrs_db.size() == 2);
    CHECK(back.noise_snrs_db[0] == -10.0);
    CHECK(std::isinf(back.noise_snrs_db[1]));

    // the hash keys the experiment directory: stable and config-sensitive
    CHECK(config_hash(cfg) == config_hash(back));
    ExperimentConfig other = cfg;
    other.seed = 43;
    CHECK(config_hash(cfg) != config_hash(other));
}

TEST_CASE("synth_dataset writes a loadable multimodal dataset") {
    const auto dir = fresh_dir("synth");
    SynthDatasetOptions opts;
    opts.num_songs = 5;
    opts.duration = 6.0;
    opts.seed = 9;
    opts.train_fraction = 0.6;
    opts.valid_fraction = 0.2;
    const std::string manifest = synth_dataset(dir.string(), opts);

    ModelConfig cfg;
    const Dataset data = load_dataset(manifest, cfg);
    REQUIRE(data.songs.size() == 5);
    CHECK(data.train.size() == 3);
    CHECK(data.valid.size() == 1);
    CHECK(data.test.size() == 1);
    for (const auto& song : data.songs) {
        CHECK(song.audio.sample_rate == kAudioRate);
        CHECK(song.audio.duration() == Catch::Approx(6.0).margin(0.01));
        CHECK(song.visual.rows() == 300);  // 50 Hz
        CHECK(!song.labels.notes.empty());
        CHECK(validate_sequence(song.labels).empty());
    }

    // same seed regenerates byte-identical files
    const auto dir2 = fresh_dir("synth2");
    synth_dataset(dir2.string(), opts);
    CHECK(slurp(dir / "audio" / "song_000.wav") == slurp(dir2 / "audio" / "song_000.wav"));
    CHECK(slurp(dir / "labels" / "song_000.json") == slurp(dir2 / "labels" / "song_000.json"));
    CHECK(slurp(dir / "visual" / "song_000.feat") == slurp(dir2 / "visual" / "song_000.feat"));
}

TEST_CASE("run_experiment produces the documented directory and is deterministic") {
    const auto root = fresh_dir("run_det");
    SynthDatasetOptions dopts;
    dopts.num_songs = 5;
    dopts.duration = 6.0;
    dopts.seed = 21;
    dopts.train_fraction = 0.6;
    dopts.valid_fraction = 0.2;
    const std::string manifest = synth_dataset((root / "data").string(), dopts);

    const ExperimentConfig cfg = tiny_experiment(root, manifest);
    const std::string dir1 = run_experiment(cfg);
    REQUIRE(fs::exists(fs::path(dir1) / "DONE"));
    REQUIRE(fs::exists(fs::path(dir1) / "eval" / "metrics.csv"));
    REQUIRE(fs::exists(fs::path(dir1) / "eval" / "per_song.csv"));
    REQUIRE(fs::exists(fs::path(dir1) / "config.json"));
    const std::string metrics1 = slurp(fs::path(dir1) / "eval" / "metrics.csv");

    // idempotent re-run: byte-identical metric CSV
    const std::string dir2 = run_experiment(cfg);
    CHECK(dir2 == dir1);
    CHECK(slurp(fs::path(dir2) / "eval" / "metrics.csv") == metrics1);

    // rows cover clean + white@0 on valid and test, both tolerances, 4 metrics
    const auto rows = read_metrics_csv((fs::path(dir1) / "eval" / "metrics.csv").string());
    CHECK(rows.size() == 2 * 2 * 2 * 4);

    // a changed config forks a new directory
    ExperimentConfig fork = cfg;
    fork.seed = 12;
    const std::string dir3 = run_experiment(fork);
    CHECK(dir3 != dir1);
}

TEST_CASE("run_experiment validates before side effects and marks failures") {
    const auto root = fresh_dir("run_fail");

    ExperimentConfig bad = tiny_experiment(root, (root / "missing.csv").string());
    CHECK_THROWS_AS(run_experiment(bad), ValidationError);
    CHECK(!fs::exists(root / "runs"));  // nothing was created

    // enumerated validation problems
    bad.decoder.onset_threshold = 1.5;
    bad.model.model_dim = 7;  // not divisible by heads
    try {
        run_experiment(bad);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("manifest does not exist") != std::string::npos);
        CHECK(msg.find("onset threshold") != std::string::npos);
        CHECK(msg.find("attention heads") != std::string::npos);
    }

    // a mid-run failure leaves a FAILED marker
    const auto manifest = root / "broken.csv";
    {
        std::ofstream out(manifest);
        out << "song_id,split,audio_path,video_feature_path,label_path\n";
        out << "s0,train,missing.wav,,missing.json\n";
        out << "s1,test,missing.wav,,missing.json\n";
    }
    ExperimentConfig broken = tiny_experiment(root, manifest.string());
    CHECK_THROWS(run_experiment(broken));
    bool found_failed = false;
    for (const auto& entry : fs::directory_iterator(root / "runs")) {
        if (fs::exists(entry.path() / "FAILED")) found_failed = true;
    }
    CHECK(found_failed);
}

TEST_CASE("report overlays experiments and rejects mismatched grids") {
    const auto root = fresh_dir("report");
    SynthDatasetOptions dopts;
    dopts.num_songs = 5;
    dopts.duration = 6.0;
    dopts.seed = 33;
    dopts.train_fraction = 0.6;
    dopts.valid_fraction = 0.2;
    const std::string manifest = synth_dataset((root / "data").string(), dopts);

    ExperimentConfig a = tiny_experiment(root, manifest);
    const std::string dir_a = run_experiment(a);
    ExperimentConfig b = a;
    b.seed = 101;
    const std::string dir_b = run_experiment(b);

    const std::string rep = report({dir_a, dir_b}, (root / "rep").string());
    CHECK(fs::exists(fs::path(rep) / "combined.csv"));
    CHECK(fs::exists(fs::path(rep) / "white_COn_tol1.svg"));
    const std::string combined = slurp(fs::path(rep) / "combined.csv");
    CHECK(combined.find("gap_vs_first") != std::string::npos);

    // single experiment also reports
    const std::string rep1 = report({dir_a}, (root / "rep1").string());
    CHECK(fs::exists(fs::path(rep1) / "white_COnPOff_tol2.svg"));

    // mismatched grids are an error that names the difference
    ExperimentConfig c = a;
    c.noise_snrs_db = {-5.0, std::numeric_limits<double>::infinity()};
    const std::string dir_c = run_experiment(c);
    try {
        report({dir_a, dir_c}, (root / "rep2").string());
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("grids differ") != std::string::npos);
    }

    CHECK_THROWS_AS(report({}, (root / "rep3").string()), ValidationError);
    CHECK_THROWS_AS(report({(root / "nope").string()}, (root / "rep4").string()),
                    ValidationError);
}

TEST_CASE("label_convert round trips and rejects bad rows") {
    const auto dir = fresh_dir("labels");
    NoteSequence seq;
    seq.duration = 2.0;
    seq.notes = {{0.125, 0.5, Pitch::from_midi(60)}, {0.75, 1.9375, Pitch::from_midi(72)}};
    const auto json1 = (dir / "a.json").string();
    write_label_file(json1, seq);

    const auto tsv = (dir / "a.tsv").string();
    const auto json2 = (dir / "a2.json").string();
    label_convert(json1, tsv, "tsv");
    label_convert(tsv, json2, "json");
    CHECK(slurp(json1) == slurp(json2));  // byte-identical round trip

    // out-of-range midi names the row
    const auto bad = (dir / "bad.json").string();
    {
        std::ofstream out(bad);
        out << "[[0.1, 0.5, 60], [0.6, 0.9, 90]]\n";
    }
    try {
        label_convert(bad, (dir / "x.tsv").string(), "tsv");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }

    // unordered rows name the violation
    const auto unordered = (dir / "unordered.json").string();
    {
        std::ofstream out(unordered);
        out << "[[0.5, 1.0, 60], [0.1, 0.4, 62]]\n";
    }
    try {
        label_convert(unordered, (dir / "y.tsv").string(), "tsv");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("overlaps previous note") != std::string::npos);
    }

    CHECK_THROWS_AS(label_convert(json1, (dir / "z.bin").string(), "parquet"), ValidationError);
}

TEST_CASE("eval conditions cover the grid and collapse for video mode") {
    ExperimentConfig cfg;
    cfg.noise_families = {NoiseFamily::kWhite, NoiseFamily::kBabble};
    cfg.noise_snrs_db = {-10.0, 0.0, std::numeric_limits<double>::infinity()};
    const auto conds = eval_conditions(cfg);
    REQUIRE(conds.size() == 1 + 2 * 2);  // clean + 2 families x 2 finite SNRs
    CHECK(conds.front().family_label() == "clean");

    cfg.mode = SystemMode::kVideo;
    const auto vconds = eval_conditions(cfg);
    REQUIRE(vconds.size() == 1);
    CHECK(vconds.front().family_label() == "clean");
}
