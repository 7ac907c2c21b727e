// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "svt/experiment.hpp"

namespace {

using namespace svt;

int cmd_synth_data(const std::string& out_dir, const SynthDatasetOptions& opts) {
    const std::string manifest = synth_dataset(out_dir, opts);
    std::printf("wrote %d songs (%.1f s each), manifest at %s\n", opts.num_songs, opts.duration,
                manifest.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& output_root) {
    ExperimentConfig cfg = read_experiment_config(config_path);
    if (!output_root.empty()) cfg.output_root = output_root;
    const std::string dir = run_experiment(cfg);
    std::printf("experiment finished: %s\n", dir.c_str());
    return 0;
}

int cmd_decode(const std::string& logits_path, const std::string& out_path,
               const DecoderConfig& cfg) {
    FrameGrid grid;
    const FrameLogits logits = read_logits_file(logits_path, &grid);
    const NoteSequence seq = decode(logits, grid, cfg);
    write_label_file(out_path, seq);
    std::printf("decoded %zu notes from %d frames -> %s\n", seq.notes.size(), grid.num_frames,
                out_path.c_str());
    return 0;
}

ToleranceProfile tolerance_from_name(const std::string& name) {
    if (name == "tol1") return ToleranceProfile::tolerance1();
    if (name == "tol2") return ToleranceProfile::tolerance2();
    throw ValidationError("unknown tolerance preset: " + name + " (expected tol1 or tol2)");
}

std::vector<ScoredNote> scored_from_file(const std::string& path) {
    std::vector<ScoredNote> out;
    for (const auto& t : read_label_triples(path)) out.push_back({t.onset, t.offset, t.midi});
    return out;
}

int cmd_eval(const std::string& ref_path, const std::string& est_path, const ToleranceProfile& tol,
             const std::string& csv_path) {
    struct Pair {
        std::string id;
        std::string ref, est;
    };
    std::vector<Pair> pairs;
    if (ref_path.size() > 4 && ref_path.substr(ref_path.size() - 4) == ".csv") {
        // manifest mode: est_path is a directory of <song_id>.json estimates
        const auto root = std::filesystem::path(ref_path).parent_path();
        for (const auto& e : read_manifest(ref_path)) {
            const auto label = std::filesystem::path(e.label_path).is_absolute()
                                   ? e.label_path
                                   : (root / e.label_path).string();
            pairs.push_back({e.song_id, label,
                             (std::filesystem::path(est_path) / (e.song_id + ".json")).string()});
        }
    } else {
        pairs.push_back({std::filesystem::path(ref_path).stem().string(), ref_path, est_path});
    }

    std::vector<EvalReport> reports;
    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path);
        if (!csv) throw RuntimeFailure("cannot write csv: " + csv_path);
        csv << "# svt-eval-v1\nsong_id,metric,precision,recall,f1\n";
    }
    for (const auto& p : pairs) {
        const EvalReport r = evaluate(scored_from_file(p.ref), scored_from_file(p.est), tol);
        reports.push_back(r);
        for (MatchMode m : kAllMatchModes) {
            const MetricScore& s = r.by_mode(m);
            std::printf("%-12s %-8s P %.4f  R %.4f  F1 %.4f\n", p.id.c_str(), match_mode_name(m),
                        s.precision, s.recall, s.f1);
            if (csv.is_open()) {
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f\n", p.id.c_str(),
                              match_mode_name(m), s.precision, s.recall, s.f1);
                csv << buf;
            }
        }
    }
    if (reports.size() > 1) {
        const DatasetReport agg = aggregate(reports);
        std::printf("---\n");
        for (MatchMode m : kAllMatchModes) {
            const AggregateScore& s = agg.by_mode(m);
            std::printf("%-12s %-8s mean F1 %.4f  (pooled %.4f over %d songs)\n", "dataset",
                        match_mode_name(m), s.mean_f1, s.pooled_f1, agg.num_songs);
        }
    }
    return 0;
}

int cmd_mix_noise(const std::string& in_path, const std::string& out_path,
                  const std::string& family, const std::string& noise_wav, double snr_db,
                  std::uint64_t seed, double duty) {
    const Waveform clean = resample_to_16k_mono(read_wav(in_path));
    Waveform noise;
    if (!noise_wav.empty()) {
        noise = resample_to_16k_mono(read_wav(noise_wav));
    } else {
        NoiseSpec spec{noise_family_from_name(family), snr_db, seed};
        noise = gen_noise(spec, clean.duration(), duty);
    }
    const MixResult r = mix_at_snr_detailed(clean, noise, snr_db);
    write_wav(out_path, r.mix);
    std::printf("mixed at %.1f dB (noise gain %.4f, post gain %.4f) -> %s\n", snr_db, r.noise_gain,
                r.post_gain, out_path.c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir) {
    const std::string out = report(dirs, out_dir);
    std::printf("report written to %s\n", out.c_str());
    return 0;
}

int cmd_label_convert(const std::string& in_path, const std::string& out_path,
                      const std::string& to) {
    label_convert(in_path, out_path, to);
    std::printf("converted %s -> %s (%s)\n", in_path.c_str(), out_path.c_str(), to.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"svtkit: singing voice transcription toolkit"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic multimodal dataset");
    std::string synth_out = "data";
    svt::SynthDatasetOptions synth_opts;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--songs", synth_opts.num_songs, "number of songs");
    synth->add_option("--duration", synth_opts.duration, "seconds per song");
    synth->add_option("--seed", synth_opts.seed, "random seed");
    synth->add_option("--train-frac", synth_opts.train_fraction, "train split fraction");
    synth->add_option("--valid-frac", synth_opts.valid_fraction, "valid split fraction");
    synth->add_flag("!--no-video", synth_opts.with_video, "skip visual feature tracks");

    // train
    auto* train = app.add_subcommand("train", "run a training + evaluation experiment");
    std::string train_config, train_root;
    train->add_option("--config", train_config, "experiment config (JSON)")->required();
    train->add_option("--output-root", train_root, "override the experiment output root");

    // decode
    auto* dec = app.add_subcommand("decode", "convert a logits file into a label file");
    std::string dec_in, dec_out;
    svt::DecoderConfig dec_cfg;
    dec->add_option("--logits", dec_in, "input logits file")->required();
    dec->add_option("--out", dec_out, "output label file (JSON)")->required();
    dec->add_option("--onset-threshold", dec_cfg.onset_threshold, "onset probability threshold");
    dec->add_option("--silence-threshold", dec_cfg.silence_threshold,
                    "silence probability threshold");
    dec->add_flag("--close-on-next-onset", dec_cfg.close_on_next_onset,
                  "close an open note at the next onset");

    // eval
    auto* ev = app.add_subcommand("eval", "score estimated labels against references");
    std::string ev_ref, ev_est, ev_tol = "tol1", ev_csv;
    double ev_onset_tol = -1, ev_offset_tol = -1, ev_offset_ratio = -1, ev_pitch_tol = -1;
    ev->add_option("--ref", ev_ref, "reference label file, or a manifest CSV")->required();
    ev->add_option("--est", ev_est, "estimated label file, or a directory of <song_id>.json")
        ->required();
    ev->add_option("--tolerance", ev_tol, "preset: tol1 | tol2");
    ev->add_option("--onset-tol", ev_onset_tol, "onset tolerance (s)");
    ev->add_option("--offset-tol", ev_offset_tol, "absolute offset tolerance (s)");
    ev->add_option("--offset-ratio", ev_offset_ratio, "offset tolerance as a duration fraction");
    ev->add_option("--pitch-tol", ev_pitch_tol, "pitch tolerance (cents)");
    ev->add_option("--csv", ev_csv, "write a per-song CSV");

    // mix-noise
    auto* mix = app.add_subcommand("mix-noise", "mix noise into a wav at a target SNR");
    std::string mix_in, mix_out, mix_family = "white", mix_noise_wav;
    double mix_snr = 0.0, mix_duty = 0.18;
    std::uint64_t mix_seed = 0;
    mix->add_option("--in", mix_in, "clean input wav")->required();
    mix->add_option("--out", mix_out, "output wav")->required();
    mix->add_option("--family", mix_family,
                    "noise family: accompaniment | babble | white | natural");
    mix->add_option("--noise-wav", mix_noise_wav, "file-backed noise source (overrides --family)");
    mix->add_option("--snr", mix_snr, "target SNR in dB")->required();
    mix->add_option("--seed", mix_seed, "noise seed");
    mix->add_option("--duty", mix_duty, "natural-noise duty cycle (0, 0.3]");

    // report
    auto* rep = app.add_subcommand("report", "curves and tables from experiment directories");
    std::vector<std::string> rep_dirs;
    std::string rep_out = "report";
    rep->add_option("--experiments", rep_dirs, "experiment directories")->required();
    rep->add_option("--out", rep_out, "report output directory");

    // label-convert
    auto* conv = app.add_subcommand("label-convert", "convert between label formats");
    std::string conv_in, conv_out, conv_to = "json";
    conv->add_option("--in", conv_in, "input label file (JSON or TSV)")->required();
    conv->add_option("--out", conv_out, "output label file")->required();
    conv->add_option("--to", conv_to, "target format: json | tsv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth_data(synth_out, synth_opts);
        if (train->parsed()) return cmd_train(train_config, train_root);
        if (dec->parsed()) return cmd_decode(dec_in, dec_out, dec_cfg);
        if (ev->parsed()) {
            svt::ToleranceProfile tol = tolerance_from_name(ev_tol);
            if (ev_onset_tol > 0) tol.onset_tol = ev_onset_tol;
            if (ev_offset_tol > 0) tol.offset_tol_abs = ev_offset_tol;
            if (ev_offset_ratio > 0) tol.offset_tol_ratio = ev_offset_ratio;
            if (ev_pitch_tol > 0) tol.pitch_tol = ev_pitch_tol;
            return cmd_eval(ev_ref, ev_est, tol, ev_csv);
        }
        if (mix->parsed()) {
            return cmd_mix_noise(mix_in, mix_out, mix_family, mix_noise_wav, mix_snr, mix_seed,
                                 mix_duty);
        }
        if (rep->parsed()) return cmd_report(rep_dirs, rep_out);
        if (conv->parsed()) return cmd_label_convert(conv_in, conv_out, conv_to);
    } catch (const svt::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
