// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "svt/dataset.hpp"
#include "svt/metrics.hpp"
#include "svt/training.hpp"

namespace svt {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    SystemMode mode = SystemMode::kAudio;
    ModelConfig model;
    TrainSchedule schedule;
    std::string manifest;
    std::uint64_t seed = 0;
    std::string output_root;  // falls back to $SVTKIT_OUTPUT_ROOT, then "runs"
    std::string name = "exp";

    // evaluation noise grid; snr +inf stands for the clean condition
    std::vector<NoiseFamily> noise_families{NoiseFamily::kAccompaniment, NoiseFamily::kBabble,
                                            NoiseFamily::kWhite, NoiseFamily::kNatural};
    std::vector<double> noise_snrs_db{-10.0, -5.0, 0.0, 5.0, 10.0,
                                      std::numeric_limits<double>::infinity()};

    // training-time noise: multi-condition augmentation for the fusion stage
    bool stage2_multi_condition = true;
    std::vector<double> train_snrs_db{-10.0, -5.0, 0.0, 5.0, 10.0,
                                      std::numeric_limits<double>::infinity()};

    bool zero_video = false;  // AV architecture with zeroed video inputs
    std::string stage1_audio_checkpoint;  // empty: train stage 1 in this run
    std::string stage1_video_checkpoint;
    DecoderConfig decoder;
};

namespace detail {

inline double snr_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "clean") return std::numeric_limits<double>::infinity();
        throw ValidationError("bad SNR value: " + s);
    }
    return j.get<double>();
}

inline nlohmann::json snr_to_json(double snr) {
    if (std::isinf(snr)) return "inf";
    return snr;
}

inline std::string snr_label(double snr) {
    if (std::isinf(snr)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", snr);
    return buf;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json families = nlohmann::json::array();
    for (auto f : c.noise_families) families.push_back(noise_family_name(f));
    nlohmann::json snrs = nlohmann::json::array();
    for (double s : c.noise_snrs_db) snrs.push_back(detail::snr_to_json(s));
    nlohmann::json train_snrs = nlohmann::json::array();
    for (double s : c.train_snrs_db) train_snrs.push_back(detail::snr_to_json(s));
    j = {{"mode", system_mode_name(c.mode)},
         {"model", c.model},
         {"schedule", c.schedule},
         {"manifest", c.manifest},
         {"seed", c.seed},
         {"output_root", c.output_root},
         {"name", c.name},
         {"noise_families", families},
         {"noise_snrs_db", snrs},
         {"stage2_multi_condition", c.stage2_multi_condition},
         {"train_snrs_db", train_snrs},
         {"zero_video", c.zero_video},
         {"stage1_audio_checkpoint", c.stage1_audio_checkpoint},
         {"stage1_video_checkpoint", c.stage1_video_checkpoint},
         {"decoder",
          {{"onset_threshold", c.decoder.onset_threshold},
           {"silence_threshold", c.decoder.silence_threshold},
           {"close_on_next_onset", c.decoder.close_on_next_onset}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c = ExperimentConfig{};
    c.mode = system_mode_from_name(j.value("mode", "A"));
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("schedule")) c.schedule = j["schedule"].get<TrainSchedule>();
    c.manifest = j.value("manifest", "");
    c.seed = j.value("seed", 0ull);
    c.output_root = j.value("output_root", "");
    c.name = j.value("name", "exp");
    if (j.contains("noise_families")) {
        c.noise_families.clear();
        for (const auto& f : j["noise_families"]) {
            c.noise_families.push_back(noise_family_from_name(f.get<std::string>()));
        }
    }
    if (j.contains("noise_snrs_db")) {
        c.noise_snrs_db.clear();
        for (const auto& s : j["noise_snrs_db"]) c.noise_snrs_db.push_back(detail::snr_from_json(s));
    }
    c.stage2_multi_condition = j.value("stage2_multi_condition", true);
    if (j.contains("train_snrs_db")) {
        c.train_snrs_db.clear();
        for (const auto& s : j["train_snrs_db"]) c.train_snrs_db.push_back(detail::snr_from_json(s));
    }
    c.zero_video = j.value("zero_video", false);
    c.stage1_audio_checkpoint = j.value("stage1_audio_checkpoint", "");
    c.stage1_video_checkpoint = j.value("stage1_video_checkpoint", "");
    if (j.contains("decoder")) {
        const auto& d = j["decoder"];
        c.decoder.onset_threshold = d.value("onset_threshold", 0.4);
        c.decoder.silence_threshold = d.value("silence_threshold", 0.5);
        c.decoder.close_on_next_onset = d.value("close_on_next_onset", false);
    }
}

inline ExperimentConfig read_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed config " + path + ": " + e.what());
    }
    return j.get<ExperimentConfig>();
}

/// FNV-1a over the canonical JSON dump; one experiment directory per hash.
inline std::string config_hash(const ExperimentConfig& cfg) {
    nlohmann::json j = cfg;
    const std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf).substr(0, 12);
}

inline std::string default_output_root() {
    if (const char* env = std::getenv("SVTKIT_OUTPUT_ROOT")) return env;
    return "runs";
}

// ---------------------------------------------------------------------------
// Evaluation over the noise grid
// ---------------------------------------------------------------------------

struct EvalCondition {
    std::optional<NoiseFamily> family;  // nullopt = clean
    double snr_db = std::numeric_limits<double>::infinity();

    std::string family_label() const {
        return family ? noise_family_name(*family) : "clean";
    }
};

/// Clean + every (family, finite snr) pair, in a fixed order.
inline std::vector<EvalCondition> eval_conditions(const ExperimentConfig& cfg) {
    std::vector<EvalCondition> out;
    bool want_clean = false;
    for (double s : cfg.noise_snrs_db) {
        if (std::isinf(s)) want_clean = true;
    }
    if (want_clean || cfg.mode == SystemMode::kVideo) out.push_back({});
    if (cfg.mode == SystemMode::kVideo) return out;  // noise touches audio only
    for (NoiseFamily family : cfg.noise_families) {
        for (double s : cfg.noise_snrs_db) {
            if (!std::isinf(s)) out.push_back({family, s});
        }
    }
    return out;
}

struct ConditionResult {
    EvalCondition condition;
    std::string split;
    DatasetReport tol1;
    DatasetReport tol2;
    std::vector<std::pair<std::string, EvalReport>> per_song_tol1;
    std::vector<std::pair<std::string, EvalReport>> per_song_tol2;
};

inline std::uint64_t eval_noise_seed(std::uint64_t base, const EvalCondition& cond,
                                     const std::string& song_id) {
    std::uint64_t h = 1469598103934665603ull ^ base;
    auto mix = [&h](const std::string& s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 1099511628211ull;
        }
    };
    mix(cond.family_label());
    mix(detail::snr_label(cond.snr_db));
    mix(song_id);
    return h;
}

inline ConditionResult evaluate_condition(SvtModel& model, const Dataset& data,
                                          const std::string& split, const EvalCondition& cond,
                                          const ExperimentConfig& cfg) {
    ConditionResult out;
    out.condition = cond;
    out.split = split;
    std::vector<EvalReport> r1, r2;
    for (int idx : data.split_indices(split)) {
        const Song& song = data.songs[idx];
        std::optional<NoiseSpec> noise;
        if (cond.family) {
            noise = NoiseSpec{*cond.family, cond.snr_db, eval_noise_seed(cfg.seed, cond, song.id)};
        }
        const SongPrediction pred =
            predict_song(model, song, cfg.decoder, noise ? &*noise : nullptr, cfg.zero_video);
        EvalReport e1 = evaluate(song.labels, pred.decoded, ToleranceProfile::tolerance1());
        EvalReport e2 = evaluate(song.labels, pred.decoded, ToleranceProfile::tolerance2());
        out.per_song_tol1.emplace_back(song.id, e1);
        out.per_song_tol2.emplace_back(song.id, e2);
        r1.push_back(std::move(e1));
        r2.push_back(std::move(e2));
    }
    out.tol1 = aggregate(r1);
    out.tol2 = aggregate(r2);
    return out;
}

// ---------------------------------------------------------------------------
// CSV emission (schema v1; fixed float formatting keeps reruns byte-identical)
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsCsvHeader =
    "mode,split,noise_family,snr_db,tolerance,metric,mean_f1,mean_precision,mean_recall,"
    "pooled_f1,n_songs";

inline void write_metrics_csv(const std::string& path, SystemMode mode,
                              const std::vector<ConditionResult>& results) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write metrics csv: " + path);
    out << "# svt-metrics-v1\n" << kMetricsCsvHeader << "\n";
    char buf[320];
    for (const auto& r : results) {
        for (const char* tol : {"tol1", "tol2"}) {
            const DatasetReport& rep = (std::string(tol) == "tol1") ? r.tol1 : r.tol2;
            for (MatchMode m : kAllMatchModes) {
                const AggregateScore& s = rep.by_mode(m);
                std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%d\n",
                              system_mode_name(mode), r.split.c_str(),
                              r.condition.family_label().c_str(),
                              detail::snr_label(r.condition.snr_db).c_str(), tol,
                              match_mode_name(m), s.mean_f1, s.mean_precision, s.mean_recall,
                              s.pooled_f1, rep.num_songs);
                out << buf;
            }
        }
    }
}

inline void write_per_song_csv(const std::string& path, SystemMode mode,
                               const std::vector<ConditionResult>& results) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write per-song csv: " + path);
    out << "# svt-per-song-v1\n";
    out << "mode,split,noise_family,snr_db,tolerance,metric,song_id,f1,precision,recall,"
           "n_ref,n_est\n";
    char buf[320];
    for (const auto& r : results) {
        for (const char* tol : {"tol1", "tol2"}) {
            const auto& rows = (std::string(tol) == "tol1") ? r.per_song_tol1 : r.per_song_tol2;
            for (const auto& [song_id, rep] : rows) {
                for (MatchMode m : kAllMatchModes) {
                    const MetricScore& s = rep.by_mode(m);
                    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%s,%s,%.6f,%.6f,%.6f,%d,%d\n",
                                  system_mode_name(mode), r.split.c_str(),
                                  r.condition.family_label().c_str(),
                                  detail::snr_label(r.condition.snr_db).c_str(), tol,
                                  match_mode_name(m), song_id.c_str(), s.f1, s.precision, s.recall,
                                  rep.num_ref, rep.num_est);
                    out << buf;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

inline std::vector<NoiseSpec> stage2_noise_grid(const ExperimentConfig& cfg) {
    std::vector<NoiseSpec> grid;
    if (!cfg.stage2_multi_condition) return grid;
    for (double s : cfg.train_snrs_db) {
        if (std::isinf(s)) {
            grid.push_back({NoiseFamily::kWhite, std::numeric_limits<double>::infinity(), 0});
            continue;
        }
        for (NoiseFamily family : cfg.noise_families) {
            grid.push_back({family, s, 0});
        }
    }
    return grid;
}

/// Validates the whole config up front, trains per mode, evaluates valid and
/// test splits across the noise grid under both tolerance presets, and writes
/// metrics.csv / per_song.csv plus per-stage logs and checkpoints. A DONE or
/// FAILED marker always terminates the directory.
inline std::string run_experiment(const ExperimentConfig& config) {
    ExperimentConfig cfg = config;
    if (cfg.output_root.empty()) cfg.output_root = default_output_root();

    // full validation pass before any side effects
    {
        std::vector<std::string> problems;
        if (cfg.manifest.empty()) {
            problems.push_back("manifest path is empty");
        } else if (!std::filesystem::exists(cfg.manifest)) {
            problems.push_back("manifest does not exist: " + cfg.manifest);
        }
        if (cfg.model.model_dim % cfg.model.attention_heads != 0) {
            problems.push_back("model_dim must divide into attention heads");
        }
        if (!(cfg.decoder.onset_threshold > 0.0 && cfg.decoder.onset_threshold < 1.0)) {
            problems.push_back("onset threshold must lie in (0, 1)");
        }
        if (!(cfg.decoder.silence_threshold > 0.0 && cfg.decoder.silence_threshold < 1.0)) {
            problems.push_back("silence threshold must lie in (0, 1)");
        }
        if (cfg.noise_snrs_db.empty()) problems.push_back("noise SNR grid is empty");
        if (cfg.mode == SystemMode::kAudioVisual) {
            const bool have = !cfg.stage1_audio_checkpoint.empty();
            const bool have_v = !cfg.stage1_video_checkpoint.empty();
            if (have != have_v) {
                problems.push_back("AV mode needs both stage-1 checkpoints or neither");
            }
            if (have && !std::filesystem::exists(cfg.stage1_audio_checkpoint)) {
                problems.push_back("missing stage-1 audio checkpoint: " +
                                   cfg.stage1_audio_checkpoint);
            }
            if (have_v && !std::filesystem::exists(cfg.stage1_video_checkpoint)) {
                problems.push_back("missing stage-1 video checkpoint: " +
                                   cfg.stage1_video_checkpoint);
            }
        }
        if (!problems.empty()) {
            std::string msg = "invalid experiment config:";
            for (const auto& p : problems) msg += "\n  - " + p;
            throw ValidationError(msg);
        }
    }

    const auto dir = std::filesystem::path(cfg.output_root) / (cfg.name + "-" + config_hash(cfg));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    try {
        {
            nlohmann::json j = cfg;
            std::ofstream out(dir / "config.json");
            out << j.dump(2) << "\n";
        }

        Warnings warnings;
        const Dataset data = load_dataset(cfg.manifest, cfg.model, &warnings);
        if (data.train.empty()) throw ValidationError("manifest has no train songs");
        if (data.test.empty() && data.valid.empty()) {
            throw ValidationError("manifest has no valid or test songs");
        }
        if (!warnings.empty()) {
            std::ofstream out(dir / "warnings.txt");
            for (const auto& w : warnings) out << w << "\n";
        }

        std::optional<SvtModel> model;
        switch (cfg.mode) {
            case SystemMode::kAudio:
            case SystemMode::kVideo: {
                model.emplace(cfg.mode, cfg.model, cfg.seed);
                TrainOptions opts;
                opts.output_dir =
                    (dir / (cfg.mode == SystemMode::kAudio ? "stage1_audio" : "stage1_video"))
                        .string();
                opts.seed = cfg.seed;
                opts.decoder = cfg.decoder;
                lp_ft_train(*model, data, cfg.schedule, opts);
                break;
            }
            case SystemMode::kAudioVisual: {
                std::string audio_ckpt = cfg.stage1_audio_checkpoint;
                std::string video_ckpt = cfg.stage1_video_checkpoint;
                if (audio_ckpt.empty()) {
                    // joint plan: train both stage-1 systems here
                    SvtModel audio_model(SystemMode::kAudio, cfg.model, cfg.seed);
                    TrainOptions a_opts;
                    a_opts.output_dir = (dir / "stage1_audio").string();
                    a_opts.seed = cfg.seed;
                    a_opts.decoder = cfg.decoder;
                    audio_ckpt = lp_ft_train(audio_model, data, cfg.schedule, a_opts).last_checkpoint;

                    SvtModel video_model(SystemMode::kVideo, cfg.model, cfg.seed + 1);
                    TrainOptions v_opts;
                    v_opts.output_dir = (dir / "stage1_video").string();
                    v_opts.seed = cfg.seed + 1;
                    v_opts.decoder = cfg.decoder;
                    video_ckpt = lp_ft_train(video_model, data, cfg.schedule, v_opts).last_checkpoint;
                }

                model.emplace(SystemMode::kAudioVisual, cfg.model, cfg.seed + 2);
                load_params(*model, read_checkpoint(audio_ckpt), "audio.");
                load_params(*model, read_checkpoint(video_ckpt), "video.");

                TrainOptions opts;
                opts.output_dir = (dir / "stage2").string();
                opts.seed = cfg.seed + 2;
                opts.decoder = cfg.decoder;
                opts.zero_video = cfg.zero_video;
                for (auto& spec : stage2_noise_grid(cfg)) opts.train_noise.push_back(spec);
                train_av(*model, data, cfg.schedule, opts);
                break;
            }
        }

        std::vector<ConditionResult> results;
        for (const std::string split : {"valid", "test"}) {
            if (data.split_indices(split).empty()) continue;
            for (const EvalCondition& cond : eval_conditions(cfg)) {
                results.push_back(evaluate_condition(*model, data, split, cond, cfg));
            }
        }
        std::filesystem::create_directories(dir / "eval");
        write_metrics_csv((dir / "eval" / "metrics.csv").string(), cfg.mode, results);
        write_per_song_csv((dir / "eval" / "per_song.csv").string(), cfg.mode, results);

        std::ofstream done(dir / "DONE");
        done << "ok\n";
    } catch (...) {
        std::ofstream failed(dir / "FAILED");
        failed << "experiment failed; see logs\n";
        throw;
    }
    return dir.string();
}

// ---------------------------------------------------------------------------
// report: curves and tables from one or more experiment directories
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string mode, split, family, snr, tolerance, metric;
    double mean_f1 = 0.0, mean_precision = 0.0, mean_recall = 0.0, pooled_f1 = 0.0;
    int n_songs = 0;
};

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open metrics csv: " + path);
    std::vector<MetricsRow> out;
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto f = svt::detail::split_csv_line(line);
        if (!saw_header) {
            if (line != kMetricsCsvHeader) {
                throw ValidationError(path + ": unexpected metrics csv schema");
            }
            saw_header = true;
            continue;
        }
        if (f.size() != 11) throw ValidationError(path + ": bad metrics row: " + line);
        MetricsRow r;
        r.mode = f[0];
        r.split = f[1];
        r.family = f[2];
        r.snr = f[3];
        r.tolerance = f[4];
        r.metric = f[5];
        r.mean_f1 = std::stod(f[6]);
        r.mean_precision = std::stod(f[7]);
        r.mean_recall = std::stod(f[8]);
        r.pooled_f1 = std::stod(f[9]);
        r.n_songs = std::stoi(f[10]);
        out.push_back(std::move(r));
    }
    if (!saw_header) throw ValidationError(path + ": empty metrics csv");
    return out;
}

namespace detail {

/// Minimal SVG line chart: F1 (y, 0..1) against the SNR grid (x), one
/// polyline per experiment.
inline void write_svg_curve(const std::string& path, const std::string& title,
                            const std::vector<std::string>& snr_ticks,
                            const std::vector<std::pair<std::string, std::vector<double>>>& curves) {
    const int width = 640, height = 420;
    const double left = 70, right = 610, top = 50, bottom = 370;
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write svg: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << (width / 2) << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
    // axes
    out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double f1 = i / 5.0;
        const double y = bottom - f1 * (bottom - top);
        out << "<line x1=\"" << (left - 4) << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\""
            << y << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << (left - 8) << "\" y=\"" << (y + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << f1
            << "</text>\n";
    }
    const std::size_t n = snr_ticks.size();
    auto x_of = [&](std::size_t i) {
        return n <= 1 ? (left + right) / 2
                      : left + (right - left) * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    for (std::size_t i = 0; i < n; ++i) {
        out << "<text x=\"" << x_of(i) << "\" y=\"" << (bottom + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << (snr_ticks[i] == "inf" ? "clean" : snr_ticks[i]) << "</text>\n";
    }
    out << "<text x=\"" << (left + right) / 2 << "\" y=\"" << (bottom + 40)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">SNR (dB)"
        << "</text>\n";
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto& [label, values] = curves[c];
        out << "<polyline fill=\"none\" stroke=\"" << kColors[c % 5]
            << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < values.size() && i < n; ++i) {
            const double y = bottom - std::clamp(values[i], 0.0, 1.0) * (bottom - top);
            out << x_of(i) << "," << y << " ";
        }
        out << "\"/>\n";
        const double ly = top + 16 * static_cast<double>(c);
        out << "<rect x=\"" << (right - 150) << "\" y=\"" << (ly - 9)
            << "\" width=\"12\" height=\"4\" fill=\"" << kColors[c % 5] << "\"/>\n";
        out << "<text x=\"" << (right - 132) << "\" y=\"" << ly
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace detail

/// Builds F1-vs-SNR curves (one SVG per family x metric x tolerance on the
/// test split) plus a flat combined CSV; with two or more experiments the
/// CSV carries a gap column relative to the first experiment.
inline std::string report(const std::vector<std::string>& experiment_dirs,
                          const std::string& out_dir) {
    if (experiment_dirs.empty()) throw ValidationError("report: no experiment directories");
    struct Exp {
        std::string label;
        std::vector<MetricsRow> rows;
    };
    std::vector<Exp> exps;
    for (const auto& d : experiment_dirs) {
        const auto metrics = std::filesystem::path(d) / "eval" / "metrics.csv";
        if (!std::filesystem::exists(metrics)) {
            throw ValidationError("report: " + d + " has no eval/metrics.csv");
        }
        Exp e;
        e.rows = read_metrics_csv(metrics.string());
        std::string label = std::filesystem::path(d).filename().string();
        if (!e.rows.empty()) label = e.rows.front().mode + ":" + label;
        e.label = label;
        exps.push_back(std::move(e));
    }

    // grids must agree across experiments
    auto grid_of = [](const Exp& e) {
        std::set<std::string> grid;
        for (const auto& r : e.rows) grid.insert(r.family + "@" + r.snr + "@" + r.split);
        return grid;
    };
    const auto base_grid = grid_of(exps.front());
    for (std::size_t i = 1; i < exps.size(); ++i) {
        const auto grid = grid_of(exps[i]);
        if (grid != base_grid) {
            std::string msg = "report: experiment grids differ:";
            for (const auto& g : base_grid) {
                if (!grid.count(g)) msg += "\n  missing in " + exps[i].label + ": " + g;
            }
            for (const auto& g : grid) {
                if (!base_grid.count(g)) msg += "\n  extra in " + exps[i].label + ": " + g;
            }
            throw ValidationError(msg);
        }
    }

    std::filesystem::create_directories(out_dir);
    auto find_row = [](const Exp& e, const std::string& split, const std::string& family,
                       const std::string& snr, const std::string& tol,
                       const std::string& metric) -> const MetricsRow* {
        for (const auto& r : e.rows) {
            if (r.split == split && r.family == family && r.snr == snr && r.tolerance == tol &&
                r.metric == metric) {
                return &r;
            }
        }
        return nullptr;
    };

    // combined flat CSV with a gap column versus the first experiment
    {
        std::ofstream out(std::filesystem::path(out_dir) / "combined.csv");
        out << "# svt-report-v1\n";
        out << "experiment,mode,split,noise_family,snr_db,tolerance,metric,mean_f1,"
               "gap_vs_first\n";
        char buf[320];
        for (const auto& e : exps) {
            for (const auto& r : e.rows) {
                const MetricsRow* base =
                    find_row(exps.front(), r.split, r.family, r.snr, r.tolerance, r.metric);
                std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%s,%s,%.6f,%.6f\n",
                              e.label.c_str(), r.mode.c_str(), r.split.c_str(), r.family.c_str(),
                              r.snr.c_str(), r.tolerance.c_str(), r.metric.c_str(), r.mean_f1,
                              base ? r.mean_f1 - base->mean_f1 : 0.0);
                out << buf;
            }
        }
    }

    // per-family curves on the test split (valid if no test rows exist)
    const std::string split =
        std::any_of(exps.front().rows.begin(), exps.front().rows.end(),
                    [](const MetricsRow& r) { return r.split == "test"; })
            ? "test"
            : "valid";
    std::set<std::string> families;
    std::vector<std::string> snrs;  // ordered: finite ascending then clean
    {
        std::set<double> finite;
        bool has_clean = false;
        for (const auto& r : exps.front().rows) {
            if (r.split != split) continue;
            if (r.family == "clean") {
                has_clean = true;
            } else {
                families.insert(r.family);
                finite.insert(std::stod(r.snr));
            }
        }
        for (double s : finite) snrs.push_back(detail::snr_label(s));
        if (has_clean) snrs.push_back("inf");
    }
    for (const auto& family : families) {
        for (const char* tol : {"tol1", "tol2"}) {
            for (MatchMode m : kAllMatchModes) {
                const std::string metric = match_mode_name(m);
                std::vector<std::pair<std::string, std::vector<double>>> curves;
                for (const auto& e : exps) {
                    std::vector<double> values;
                    for (const auto& snr : snrs) {
                        const MetricsRow* r =
                            (snr == "inf") ? find_row(e, split, "clean", "inf", tol, metric)
                                           : find_row(e, split, family, snr, tol, metric);
                        values.push_back(r ? r->mean_f1 : 0.0);
                    }
                    curves.emplace_back(e.label, std::move(values));
                }
                const std::string name = family + "_" + metric + "_" + tol + ".svg";
                detail::write_svg_curve((std::filesystem::path(out_dir) / name).string(),
                                        metric + " vs SNR (" + family + ", " + tol + ", " + split +
                                            ")",
                                        snrs, curves);
            }
        }
    }
    return out_dir;
}

// ---------------------------------------------------------------------------
// Synthetic dataset directories
// ---------------------------------------------------------------------------

struct SynthDatasetOptions {
    int num_songs = 60;
    double duration = 30.0;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    double valid_fraction = 0.1;
    bool with_video = true;
    RandomSongOptions song;
};

/// Writes {audio/, visual/, labels/, manifest.csv} of seeded synthetic songs.
inline std::string synth_dataset(const std::string& out_dir, const SynthDatasetOptions& opts) {
    if (opts.num_songs <= 0) throw ValidationError("synth-data: num_songs must be positive");
    if (opts.duration <= 1.0) throw ValidationError("synth-data: duration must exceed 1 s");
    const std::filesystem::path root(out_dir);
    std::filesystem::create_directories(root / "audio");
    std::filesystem::create_directories(root / "visual");
    std::filesystem::create_directories(root / "labels");

    Rng rng(opts.seed);
    std::vector<ManifestEntry> entries;
    const int n_train = static_cast<int>(std::llround(opts.num_songs * opts.train_fraction));
    const int n_valid = static_cast<int>(std::llround(opts.num_songs * opts.valid_fraction));
    for (int i = 0; i < opts.num_songs; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "song_%03d", i);
        Rng song_rng = rng.fork(static_cast<std::uint64_t>(i));
        RandomSongOptions song_opts = opts.song;
        song_opts.duration = opts.duration;
        const NoteSequence seq = random_note_sequence(song_rng, song_opts);
        const SynthSong song = synth_song(seq, opts.seed * 7919 + static_cast<std::uint64_t>(i));

        ManifestEntry e;
        e.song_id = id;
        e.split = i < n_train ? "train" : (i < n_train + n_valid ? "valid" : "test");
        e.audio_path = std::string("audio/") + id + ".wav";
        e.label_path = std::string("labels/") + id + ".json";
        write_wav((root / e.audio_path).string(), song.audio);
        write_label_file((root / e.label_path).string(), song.labels);
        if (opts.with_video) {
            e.video_feature_path = std::string("visual/") + id + ".feat";
            write_feature_file((root / e.video_feature_path).string(), song.visual, kVisualRate);
        }
        entries.push_back(std::move(e));
    }
    const auto manifest = (root / "manifest.csv").string();
    write_manifest(manifest, entries);
    return manifest;
}

// ---------------------------------------------------------------------------
// label_convert: JSON triple list <-> tab-separated internal format
// ---------------------------------------------------------------------------

inline std::vector<LabelTriple> read_label_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open label file: " + path);
    std::vector<LabelTriple> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        LabelTriple t;
        char extra;
        if (std::sscanf(line.c_str(), "%lf\t%lf\t%lf %c", &t.onset, &t.offset, &t.midi, &extra) !=
            3) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected onset<TAB>offset<TAB>midi");
        }
        out.push_back(t);
    }
    return out;
}

inline void write_label_tsv(const std::string& path, const std::vector<LabelTriple>& triples) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write label file: " + path);
    char buf[128];
    for (const auto& t : triples) {
        std::snprintf(buf, sizeof(buf), "%.17g\t%.17g\t%.17g\n", t.onset, t.offset, t.midi);
        out << buf;
    }
}

/// Validates and converts between the JSON triple-list format and the
/// tab-separated internal format. Rejections name the offending rows.
inline void label_convert(const std::string& input_path, const std::string& output_path,
                          const std::string& to_format) {
    std::vector<LabelTriple> triples;
    std::ifstream probe(input_path);
    if (!probe) throw RuntimeFailure("cannot open label file: " + input_path);
    char first = 0;
    probe >> first;
    probe.close();
    if (first == '[') {
        triples = read_label_triples(input_path);
    } else {
        triples = read_label_tsv(input_path);
    }

    // validation: integer midi in range, ordered rows
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        const auto& t = triples[i];
        if (std::abs(t.midi - std::round(t.midi)) > 1e-9 || t.midi < kMidiMin ||
            t.midi > kMidiMax) {
            problems.push_back("row " + std::to_string(i) + ": MIDI " + std::to_string(t.midi) +
                               " outside [36, 83]");
        }
        if (!(t.offset > t.onset)) {
            problems.push_back("row " + std::to_string(i) + ": non-positive duration");
        }
        if (i > 0 && t.onset < triples[i - 1].offset) {
            problems.push_back("row " + std::to_string(i) + ": overlaps previous note");
        }
    }
    if (!problems.empty()) {
        std::string msg = input_path + " failed validation:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }

    if (to_format == "tsv") {
        write_label_tsv(output_path, triples);
    } else if (to_format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& t : triples) {
            j.push_back({t.onset, t.offset, static_cast<int>(std::llround(t.midi))});
        }
        std::ofstream out(output_path);
        if (!out) throw RuntimeFailure("cannot write label file: " + output_path);
        out << j.dump(2) << "\n";
    } else {
        throw ValidationError("unknown label format: " + to_format + " (expected json or tsv)");
    }
}

}  // namespace svt
