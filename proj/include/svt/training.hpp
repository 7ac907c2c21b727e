// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "svt/dataset.hpp"
#include "svt/decoder.hpp"
#include "svt/metrics.hpp"
#include "svt/modeling.hpp"

namespace svt {

struct TrainSchedule {
    int lp_epochs = 2;   // K1: classifier only, encoder frozen
    int ft_epochs = 8;   // K2: both groups
    double classifier_lr = 3e-4;
    double encoder_lr = 5e-5;
    double newbob_factor_classifier = 0.8;
    double newbob_factor_encoder = 0.9;
    double fusion_stage_lr = 3e-3;
    int fusion_stage_epochs = 10;
    int batch_size_train = 8;
    int batch_size_eval = 1;
    double newbob_threshold = 0.0;  // anneal when the improvement ratio is <= this
};

inline void to_json(nlohmann::json& j, const TrainSchedule& s) {
    j = {{"lp_epochs", s.lp_epochs},
         {"ft_epochs", s.ft_epochs},
         {"classifier_lr", s.classifier_lr},
         {"encoder_lr", s.encoder_lr},
         {"newbob_factor_classifier", s.newbob_factor_classifier},
         {"newbob_factor_encoder", s.newbob_factor_encoder},
         {"fusion_stage_lr", s.fusion_stage_lr},
         {"fusion_stage_epochs", s.fusion_stage_epochs},
         {"batch_size_train", s.batch_size_train},
         {"batch_size_eval", s.batch_size_eval},
         {"newbob_threshold", s.newbob_threshold}};
}

inline void from_json(const nlohmann::json& j, TrainSchedule& s) {
    s = TrainSchedule{};
    s.lp_epochs = j.value("lp_epochs", s.lp_epochs);
    s.ft_epochs = j.value("ft_epochs", s.ft_epochs);
    s.classifier_lr = j.value("classifier_lr", s.classifier_lr);
    s.encoder_lr = j.value("encoder_lr", s.encoder_lr);
    s.newbob_factor_classifier = j.value("newbob_factor_classifier", s.newbob_factor_classifier);
    s.newbob_factor_encoder = j.value("newbob_factor_encoder", s.newbob_factor_encoder);
    s.fusion_stage_lr = j.value("fusion_stage_lr", s.fusion_stage_lr);
    s.fusion_stage_epochs = j.value("fusion_stage_epochs", s.fusion_stage_epochs);
    s.batch_size_train = j.value("batch_size_train", s.batch_size_train);
    s.batch_size_eval = j.value("batch_size_eval", s.batch_size_eval);
    s.newbob_threshold = j.value("newbob_threshold", s.newbob_threshold);
}

/// Newbob annealing: multiply the rate by `factor` when the monitored value
/// (lower is better) stops improving by more than `threshold` relative to the
/// best seen so far.
inline double newbob_update(double lr, double current_metric, double best_metric, double factor,
                            double threshold = 0.0) {
    if (!(factor > 0.0 && factor < 1.0)) {
        throw ValidationError("newbob factor must lie in (0, 1)");
    }
    if (!std::isfinite(best_metric)) return lr;  // nothing to compare against yet
    const bool improved = (best_metric - current_metric) > threshold * std::abs(best_metric);
    return improved ? lr : lr * factor;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SVTCKPT1" magic, u64 JSON-header length, JSON header with
// the model config and schedule state plus a tensor manifest, then the
// tensor payload as little-endian doubles in manifest order. Optimizer
// moments are stored as "<param>.adam_m" / "<param>.adam_v".
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'V', 'T', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    SystemMode mode = SystemMode::kAudio;
    ModelConfig config;
    int epoch = 0;
    double lr_classifier = 0.0;
    double lr_encoder = 0.0;
    double best_monitor = std::numeric_limits<double>::infinity();
    std::map<std::string, long long> opt_steps;  // per group
    std::map<std::string, Mat> tensors;
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["mode"] = system_mode_name(ckpt.mode);
    header["model"] = ckpt.config;
    header["epoch"] = ckpt.epoch;
    header["lr_classifier"] = ckpt.lr_classifier;
    header["lr_encoder"] = ckpt.lr_encoder;
    if (std::isfinite(ckpt.best_monitor)) header["best_monitor"] = ckpt.best_monitor;
    header["opt_steps"] = ckpt.opt_steps;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, value] : ckpt.tensors) {
        manifest.push_back({{"name", name},
                            {"rows", value.rows()},
                            {"cols", value.cols()}});
    }
    header["tensors"] = manifest;
    const std::string header_str = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw RuntimeFailure("cannot write checkpoint: " + tmp);
        out.write(kCheckpointMagic, 8);
        const std::uint64_t len = header_str.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
        for (const auto& [name, value] : ckpt.tensors) {
            out.write(reinterpret_cast<const char*>(value.data()),
                      static_cast<std::streamsize>(sizeof(double) * value.size()));
        }
        if (!out) throw RuntimeFailure("short write to checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw ValidationError("not a checkpoint file: " + path);
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header_str(len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw ValidationError("truncated checkpoint header: " + path);
    const auto header = nlohmann::json::parse(header_str);
    if (header.value("format_version", 0) != 1) {
        throw ValidationError("unsupported checkpoint version in " + path);
    }
    Checkpoint ckpt;
    ckpt.mode = system_mode_from_name(header.at("mode").get<std::string>());
    ckpt.config = header.at("model").get<ModelConfig>();
    ckpt.epoch = header.value("epoch", 0);
    ckpt.lr_classifier = header.value("lr_classifier", 0.0);
    ckpt.lr_encoder = header.value("lr_encoder", 0.0);
    if (header.contains("best_monitor") && header["best_monitor"].is_number()) {
        ckpt.best_monitor = header["best_monitor"].get<double>();
    }
    if (header.contains("opt_steps")) {
        ckpt.opt_steps = header["opt_steps"].get<std::map<std::string, long long>>();
    }
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        Mat value(entry.at("rows").get<Eigen::Index>(), entry.at("cols").get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(value.data()),
                static_cast<std::streamsize>(sizeof(double) * value.size()));
        ckpt.tensors.emplace(name, std::move(value));
    }
    if (!in) throw ValidationError("truncated checkpoint payload: " + path);
    return ckpt;
}

inline Checkpoint snapshot_model(SvtModel& model) {
    Checkpoint ckpt;
    ckpt.mode = model.mode();
    ckpt.config = model.config();
    ParamRefs refs = model.all_params();
    for (Tensor* t : refs) ckpt.tensors.emplace(t->name, t->value);
    return ckpt;
}

/// Copies matching tensors into the model; names without a counterpart in the
/// checkpoint are left untouched unless `strict`.
inline void load_params(SvtModel& model, const Checkpoint& ckpt, const std::string& prefix = "",
                        bool strict = false) {
    for (Tensor* t : model.all_params()) {
        if (!prefix.empty() && t->name.rfind(prefix, 0) != 0) continue;
        const auto it = ckpt.tensors.find(t->name);
        if (it == ckpt.tensors.end()) {
            if (strict) throw ValidationError("checkpoint misses tensor " + t->name);
            continue;
        }
        if (it->second.rows() != t->value.rows() || it->second.cols() != t->value.cols()) {
            throw ValidationError("checkpoint tensor " + t->name + " has mismatched shape");
        }
        t->value = it->second;
    }
}

inline SvtModel model_from_checkpoint(const Checkpoint& ckpt) {
    SvtModel model(ckpt.mode, ckpt.config, /*seed=*/0);
    load_params(model, ckpt, "", /*strict=*/true);
    return model;
}

// ---------------------------------------------------------------------------
// Inference over whole songs
// ---------------------------------------------------------------------------

struct SongPrediction {
    FrameLogits logits;
    FrameGrid grid;
    NoteSequence decoded;
};

/// Full-song forward + decode. Optional noise is mixed into the audio first;
/// zero_video feeds a zero visual track (the audio-only fallback of the AV
/// system).
inline SongPrediction predict_song(SvtModel& model, const Song& song,
                                   const DecoderConfig& decoder_cfg = {},
                                   const NoiseSpec* noise = nullptr, bool zero_video = false) {
    std::vector<double> audio = song.audio.samples;
    if (noise && !(std::isinf(noise->snr_db) && noise->snr_db > 0)) {
        const Waveform n = gen_noise(*noise, song.audio.duration());
        audio = mix_at_snr(song.audio, n, noise->snr_db).samples;
    }
    Mat zeros;
    const Mat* visual = &song.visual;
    if (zero_video) {
        zeros = Mat::Zero(song.visual.rows(), song.visual.cols());
        visual = &zeros;
    }
    ModelInput input;
    input.audio = &audio;
    input.visual = visual;
    if (song.audio_features.rows() > 0) input.audio_features = &song.audio_features;

    SongPrediction out;
    const auto fwd = model.forward(input);
    out.logits = split_logits(fwd.raw_logits);
    out.grid = fwd.grid;
    out.decoded = decode(out.logits, out.grid, decoder_cfg);
    return out;
}

// ---------------------------------------------------------------------------
// Epoch log
// ---------------------------------------------------------------------------

struct EpochRow {
    int epoch = 0;
    std::string split;
    double loss = std::numeric_limits<double>::quiet_NaN();
    double con = std::numeric_limits<double>::quiet_NaN();
    double conp = std::numeric_limits<double>::quiet_NaN();
    double conpoff = std::numeric_limits<double>::quiet_NaN();
    double coff = std::numeric_limits<double>::quiet_NaN();
    double lr_classifier = 0.0;
    double lr_encoder = 0.0;
};

inline void write_epoch_log(const std::string& path, const std::vector<EpochRow>& rows) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write epoch log: " + path);
    out << "# svt-epoch-log-v1\n";
    out << "epoch,split,loss,COn,COnP,COnPOff,COff,lr_classifier,lr_encoder\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.8f,%.6f,%.6f,%.6f,%.6f,%.8g,%.8g\n", r.epoch,
                      r.split.c_str(), r.loss, r.con, r.conp, r.conpoff, r.coff, r.lr_classifier,
                      r.lr_encoder);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string output_dir;  // checkpoints and log.csv land here
    std::uint64_t seed = 0;
    std::vector<NoiseSpec> train_noise;  // per-segment conditions; empty = clean
    bool zero_video = false;             // stage-2 audio-only baseline
    bool eval_metrics_per_epoch = true;
    DecoderConfig decoder;
    ToleranceProfile tolerance = ToleranceProfile::tolerance1();
};

struct TrainResult {
    std::vector<EpochRow> log;
    std::string last_checkpoint;
    std::string best_checkpoint;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

namespace detail {

struct LossAccumulator {
    double weighted_sum = 0.0;  // sum over frames of per-frame loss
    double frames = 0.0;
    void add(double mean_loss, double frame_count) {
        weighted_sum += mean_loss * frame_count;
        frames += frame_count;
    }
    double mean() const { return frames > 0.0 ? weighted_sum / frames : 0.0; }
};

/// Forward + loss for one segment; returns (loss mean over its frames,
/// gradient w.r.t. raw logits scaled for a batch with `denom` total frames).
inline double segment_loss(SvtModel& model, const Song& song, const TrainSegment& seg,
                           double denom, Mat* dlogits_out) {
    const std::vector<double> audio = noisy_audio_slice(song, seg);
    Mat visual;
    if (model.mode() != SystemMode::kAudio) {
        visual = visual_slice(song, seg.range);
        // stage-2 audio-only baseline uses zeroed video inputs
    }
    Mat feature_slice;
    ModelInput input;
    input.audio = &audio;
    input.visual = &visual;
    if (song.audio_features.rows() > 0) {
        const int rows = std::min<int>(seg.range.frames(),
                                       static_cast<int>(song.audio_features.rows()) - seg.range.begin);
        feature_slice = song.audio_features.middleRows(seg.range.begin, rows);
        input.audio_features = &feature_slice;
    }
    const auto fwd = model.forward(input);
    const int frames = seg.targets.frames();
    if (fwd.raw_logits.rows() != frames) {
        throw RuntimeFailure("model produced " + std::to_string(fwd.raw_logits.rows()) +
                             " frames for a segment with " + std::to_string(frames) +
                             " target frames");
    }
    const FrameLogits logits = split_logits(fwd.raw_logits);
    const std::vector<std::vector<std::uint8_t>> mask = {
        std::vector<std::uint8_t>(static_cast<std::size_t>(frames), 1)};
    const BatchLoss wl = svt_loss_with_grad({logits}, {seg.targets}, mask);
    if (dlogits_out) {
        // svt_loss normalized by this segment's frames; rescale to the batch
        const double scale = static_cast<double>(frames) / denom;
        *dlogits_out = merge_logit_grads(wl.dlogits[0]) * scale;
    }
    return wl.value;
}

inline EpochRow metrics_row(SvtModel& model, const Dataset& data, const std::vector<int>& indices,
                            const TrainOptions& opts, bool with_metrics = true) {
    EpochRow row;
    std::vector<EvalReport> reports;
    LossAccumulator loss;
    for (int idx : indices) {
        const Song& song = data.songs[idx];
        SongPrediction pred = predict_song(model, song, opts.decoder, nullptr, opts.zero_video);
        if (with_metrics) reports.push_back(evaluate(song.labels, pred.decoded, opts.tolerance));

        const int frames = std::min(pred.logits.frames(), song.targets.frames());
        FrameTargets t = slice_targets(song.targets, {0, frames});
        FrameLogits l = pred.logits;
        l.onset.resize(frames);
        l.silence.resize(frames);
        l.octave.resize(frames);
        l.name.resize(frames);
        const std::vector<std::vector<std::uint8_t>> mask = {
            std::vector<std::uint8_t>(static_cast<std::size_t>(frames), 1)};
        loss.add(svt_loss({l}, {t}, mask), frames);
    }
    row.loss = loss.mean();
    if (with_metrics) {
        const DatasetReport agg = aggregate(reports);
        row.con = agg.on.mean_f1;
        row.conp = agg.onp.mean_f1;
        row.conpoff = agg.onpoff.mean_f1;
        row.coff = agg.off.mean_f1;
    }
    return row;
}

inline std::string checkpoint_path(const std::string& dir, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.svtckpt", epoch);
    return (std::filesystem::path(dir) / buf).string();
}

}  // namespace detail

/// Alg. 1 style adaptation: K1 epochs of linear probing (encoder frozen,
/// classifier trained at classifier_lr), then K2 epochs of full finetuning
/// with per-group learning rates, Adam steps, Newbob annealing on the
/// validation loss, and a checkpoint per epoch.
inline TrainResult lp_ft_train(SvtModel& model, const Dataset& data, const TrainSchedule& sched,
                               const TrainOptions& opts) {
    if (data.split_indices("train").empty()) {
        throw ValidationError("lp_ft_train: empty training split");
    }
    std::filesystem::create_directories(opts.output_dir);
    auto segments = make_segments(data, model, "train", opts.train_noise, opts.seed);
    if (segments.empty()) throw ValidationError("lp_ft_train: no training segments");

    Adam classifier_opt(model.head_params(), {.lr = sched.classifier_lr});
    Adam encoder_opt(model.encoder_params(), {.lr = sched.encoder_lr});

    Rng rng(opts.seed ^ 0xc0ffee);
    TrainResult result;
    double lr_classifier = sched.classifier_lr;
    double lr_encoder = sched.encoder_lr;
    double best_monitor = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int total_epochs = sched.lp_epochs + sched.ft_epochs;
    for (int epoch = 1; epoch <= total_epochs; ++epoch) {
        const bool finetune = epoch > sched.lp_epochs;
        rng.shuffle(order);

        detail::LossAccumulator train_loss;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(sched.batch_size_train)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(sched.batch_size_train));
            double denom = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                denom += segments[order[i]].targets.frames();
            }
            classifier_opt.zero_grad();
            if (finetune) encoder_opt.zero_grad();

            double batch_sum = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const TrainSegment& seg = segments[order[i]];
                Mat dlogits;
                const double mean_loss =
                    detail::segment_loss(model, data.songs[seg.song], seg, denom, &dlogits);
                batch_sum += mean_loss * seg.targets.frames();
                model.backward(dlogits, finetune);
            }
            const double batch_loss = batch_sum / denom;
            if (!std::isfinite(batch_loss)) {
                const auto diag =
                    (std::filesystem::path(opts.output_dir) / "ckpt_diverged.svtckpt").string();
                Checkpoint ckpt = snapshot_model(model);
                ckpt.epoch = epoch;
                write_checkpoint(diag, ckpt);
                throw RuntimeFailure("training diverged (non-finite loss); diagnostic checkpoint at " +
                                     diag);
            }
            classifier_opt.step();
            if (finetune) encoder_opt.step();
            train_loss.add(batch_loss, denom);
        }

        EpochRow train_row;
        train_row.epoch = epoch;
        train_row.split = "train";
        train_row.loss = train_loss.mean();
        train_row.lr_classifier = lr_classifier;
        train_row.lr_encoder = lr_encoder;
        result.log.push_back(train_row);

        const auto& valid = data.split_indices("valid");
        double monitored = train_loss.mean();
        if (!valid.empty()) {
            EpochRow val_row =
                detail::metrics_row(model, data, valid, opts, opts.eval_metrics_per_epoch);
            val_row.epoch = epoch;
            val_row.split = "valid";
            val_row.lr_classifier = lr_classifier;
            val_row.lr_encoder = lr_encoder;
            result.log.push_back(val_row);
            monitored = val_row.loss;

            if (val_row.loss < result.best_val_loss) {
                result.best_val_loss = val_row.loss;
                result.best_checkpoint = detail::checkpoint_path(opts.output_dir, epoch);
            }
        }

        lr_classifier = newbob_update(lr_classifier, monitored, best_monitor,
                                      sched.newbob_factor_classifier, sched.newbob_threshold);
        lr_encoder = newbob_update(lr_encoder, monitored, best_monitor,
                                   sched.newbob_factor_encoder, sched.newbob_threshold);
        best_monitor = std::min(best_monitor, monitored);
        classifier_opt.set_lr(lr_classifier);
        encoder_opt.set_lr(lr_encoder);

        Checkpoint ckpt = snapshot_model(model);
        ckpt.epoch = epoch;
        ckpt.lr_classifier = lr_classifier;
        ckpt.lr_encoder = lr_encoder;
        ckpt.best_monitor = best_monitor;
        ckpt.opt_steps["classifier"] = classifier_opt.steps();
        ckpt.opt_steps["encoder"] = encoder_opt.steps();
        result.last_checkpoint = detail::checkpoint_path(opts.output_dir, epoch);
        write_checkpoint(result.last_checkpoint, ckpt);
    }
    if (result.best_checkpoint.empty()) result.best_checkpoint = result.last_checkpoint;
    write_epoch_log((std::filesystem::path(opts.output_dir) / "log.csv").string(), result.log);
    return result;
}

/// Stage-2 audio-visual training: feature encoders stay frozen (their
/// features are precomputed once per segment), only the fusion module and a
/// fresh classifier train, at the fusion-stage learning rate.
inline TrainResult train_av(SvtModel& model, const Dataset& data, const TrainSchedule& sched,
                            const TrainOptions& opts) {
    if (model.mode() != SystemMode::kAudioVisual) {
        throw ValidationError("train_av requires an AV model");
    }
    if (data.split_indices("train").empty()) {
        throw ValidationError("train_av: empty training split");
    }
    std::filesystem::create_directories(opts.output_dir);
    auto segments = make_segments(data, model, "train", opts.train_noise, opts.seed);

    // Frozen encoders: run them once per segment and train on cached features.
    std::vector<Mat> cached_audio(segments.size());
    std::vector<Mat> cached_video(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const TrainSegment& seg = segments[i];
        const Song& song = data.songs[seg.song];
        const int frames = seg.targets.frames();

        const std::vector<double> audio = noisy_audio_slice(song, seg);
        const Mat visual = opts.zero_video
                               ? Mat::Zero(seg.range.frames(), song.visual.cols())
                               : Mat(visual_slice(song, seg.range));

        ModelInput input;
        input.audio = &audio;
        input.visual = &visual;
        Mat feature_slice;
        if (song.audio_features.rows() > 0) {
            feature_slice = song.audio_features.middleRows(seg.range.begin, seg.range.frames());
            input.audio_features = &feature_slice;
        }
        const auto fa = model.encode_audio_features(input);
        const auto fv = model.encode_video_features(input);
        cached_audio[i] = fa.topRows(frames);
        cached_video[i] = fv.topRows(frames);
    }

    FusionModule* fusion = model.fusion();
    Classifier& classifier = model.classifier();
    Adam head_opt(model.head_params(), {.lr = sched.fusion_stage_lr});

    Rng rng(opts.seed ^ 0xfade);
    TrainResult result;
    double lr = sched.fusion_stage_lr;
    double best_monitor = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= sched.fusion_stage_epochs; ++epoch) {
        rng.shuffle(order);
        detail::LossAccumulator train_loss;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(sched.batch_size_train)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(sched.batch_size_train));
            double denom = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                denom += segments[order[i]].targets.frames();
            }
            head_opt.zero_grad();
            double batch_sum = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const std::size_t s = order[i];
                const int frames = segments[s].targets.frames();
                const Mat fused = fusion->forward(cached_audio[s], cached_video[s]);
                const FrameLogits logits = split_logits(classifier.forward(fused));
                const std::vector<std::vector<std::uint8_t>> mask = {
                    std::vector<std::uint8_t>(static_cast<std::size_t>(frames), 1)};
                const BatchLoss wl = svt_loss_with_grad({logits}, {segments[s].targets}, mask);
                batch_sum += wl.value * frames;
                const Mat dlogits =
                    merge_logit_grads(wl.dlogits[0]) * (static_cast<double>(frames) / denom);
                fusion->backward(classifier.backward(dlogits));
            }
            const double batch_loss = batch_sum / denom;
            if (!std::isfinite(batch_loss)) {
                throw RuntimeFailure("fusion training diverged (non-finite loss)");
            }
            head_opt.step();
            train_loss.add(batch_loss, denom);
        }

        EpochRow train_row;
        train_row.epoch = epoch;
        train_row.split = "train";
        train_row.loss = train_loss.mean();
        train_row.lr_classifier = lr;
        result.log.push_back(train_row);

        const auto& valid = data.split_indices("valid");
        double monitored = train_loss.mean();
        if (!valid.empty()) {
            EpochRow val_row = detail::metrics_row(model, data, valid, opts);
            val_row.epoch = epoch;
            val_row.split = "valid";
            val_row.lr_classifier = lr;
            result.log.push_back(val_row);
            monitored = val_row.loss;
            if (val_row.loss < result.best_val_loss) {
                result.best_val_loss = val_row.loss;
                result.best_checkpoint = detail::checkpoint_path(opts.output_dir, epoch);
            }
        }

        lr = newbob_update(lr, monitored, best_monitor, sched.newbob_factor_classifier,
                           sched.newbob_threshold);
        best_monitor = std::min(best_monitor, monitored);
        head_opt.set_lr(lr);

        Checkpoint ckpt = snapshot_model(model);
        ckpt.epoch = epoch;
        ckpt.lr_classifier = lr;
        ckpt.best_monitor = best_monitor;
        ckpt.opt_steps["head"] = head_opt.steps();
        result.last_checkpoint = detail::checkpoint_path(opts.output_dir, epoch);
        write_checkpoint(result.last_checkpoint, ckpt);
    }
    if (result.best_checkpoint.empty()) result.best_checkpoint = result.last_checkpoint;
    write_epoch_log((std::filesystem::path(opts.output_dir) / "log.csv").string(), result.log);
    return result;
}

}  // namespace svt
