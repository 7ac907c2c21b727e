// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "svt/labeling.hpp"
#include "svt/modeling.hpp"
#include "svt/signal.hpp"

namespace svt {

struct Song {
    std::string id;
    std::string split;
    Waveform audio;       // 16 kHz mono
    Mat visual;           // 50 Hz feature rows; 0x0 when absent
    Mat audio_features;   // file-frontend features; 0x0 otherwise
    NoteSequence labels;
    FrameTargets targets;  // on the 20 ms grid of the full song
    FrameGrid grid;
};

struct Dataset {
    std::vector<Song> songs;
    std::vector<int> train, valid, test;

    const std::vector<int>& split_indices(const std::string& split) const {
        if (split == "train") return train;
        if (split == "valid") return valid;
        if (split == "test") return test;
        throw ValidationError("unknown split: " + split);
    }
};

/// Loads every song referenced by the manifest. Audio is resampled to
/// 16 kHz mono if needed; a 25 Hz visual track is frame-doubled to 50 Hz;
/// a missing visual path yields a zero track of matching length.
inline Dataset load_dataset(const std::string& manifest_path, const ModelConfig& cfg,
                            Warnings* warnings = nullptr) {
    const auto entries = read_manifest(manifest_path);
    if (entries.empty()) throw ValidationError("empty manifest: " + manifest_path);
    const auto root = std::filesystem::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path.string() : (root / path).string();
    };

    Dataset out;
    for (const auto& e : entries) {
        Song song;
        song.id = e.song_id;
        song.split = e.split;
        song.labels = read_label_file(resolve(e.label_path), {}, warnings);

        if (cfg.audio_frontend == "file") {
            song.audio_features = read_feature_file(resolve(e.audio_path));
        } else {
            song.audio = resample_to_16k_mono(read_wav(resolve(e.audio_path)));
        }

        const double duration = cfg.audio_frontend == "file"
                                    ? static_cast<double>(song.audio_features.rows()) * kFrameSeconds
                                    : song.audio.duration();
        song.labels.duration = std::max(song.labels.duration, duration);

        if (!e.video_feature_path.empty()) {
            double rate = kVisualRate;
            Mat track = read_feature_file(resolve(e.video_feature_path), &rate);
            if (cfg.video_frame_rate_hz == 25 || rate == 25.0) {
                Mat doubled(track.rows() * 2, track.cols());
                for (Eigen::Index r = 0; r < track.rows(); ++r) {
                    doubled.row(2 * r) = track.row(r);
                    doubled.row(2 * r + 1) = track.row(r);
                }
                track = std::move(doubled);
            }
            song.visual = std::move(track);
        } else {
            const int frames = static_cast<int>(std::floor(duration * kVisualRate));
            song.visual = Mat::Zero(frames, cfg.video_feature_dim);
        }
        if (song.visual.cols() != cfg.video_feature_dim) {
            throw ValidationError(e.song_id + ": visual feature dim " +
                                  std::to_string(song.visual.cols()) + " != configured " +
                                  std::to_string(cfg.video_feature_dim));
        }

        song.grid = FrameGrid::uniform(duration, kFrameSeconds);
        song.targets = events_to_frames(song.labels, song.grid, warnings);

        const int idx = static_cast<int>(out.songs.size());
        if (e.split == "train") out.train.push_back(idx);
        if (e.split == "valid") out.valid.push_back(idx);
        if (e.split == "test") out.test.push_back(idx);
        out.songs.push_back(std::move(song));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training segments: 5 s chunks with targets pre-truncated to the model's
// output frame count (the conv frontend loses up to one edge frame).
// ---------------------------------------------------------------------------

struct TrainSegment {
    int song = 0;
    FrameRange range;       // on the song grid
    FrameTargets targets;   // truncated to the model frame count
    NoiseSpec noise;        // family/snr to apply to the audio slice; snr may be +inf
};

inline std::vector<double> audio_slice(const Song& song, const FrameRange& r) {
    const auto begin = static_cast<std::size_t>(r.begin) * kSamplesPerFrame;
    const auto end = std::min(song.audio.samples.size(),
                              static_cast<std::size_t>(r.end) * kSamplesPerFrame);
    return {song.audio.samples.begin() + static_cast<std::ptrdiff_t>(begin),
            song.audio.samples.begin() + static_cast<std::ptrdiff_t>(end)};
}

inline Mat visual_slice(const Song& song, const FrameRange& r) {
    const int rows = std::min<int>(r.frames(), static_cast<int>(song.visual.rows()) - r.begin);
    return song.visual.middleRows(r.begin, rows);
}

/// Applies the segment's noise spec to an audio slice (identity when clean).
inline std::vector<double> noisy_audio_slice(const Song& song, const TrainSegment& seg) {
    std::vector<double> slice = audio_slice(song, seg.range);
    if (std::isinf(seg.noise.snr_db) && seg.noise.snr_db > 0) return slice;
    Waveform clean;
    clean.samples = std::move(slice);
    const double duration = static_cast<double>(clean.samples.size()) / kAudioRate;
    const Waveform noise = gen_noise(seg.noise, duration);
    return mix_at_snr(clean, noise, seg.noise.snr_db).samples;
}

/// Cuts each song of the split into segments and (optionally) assigns one
/// noise condition per segment, cycling deterministically through the grid.
inline std::vector<TrainSegment> make_segments(const Dataset& data, const SvtModel& model,
                                               const std::string& split,
                                               const std::vector<NoiseSpec>& noise_grid = {},
                                               std::uint64_t seed = 0,
                                               Warnings* warnings = nullptr) {
    std::vector<TrainSegment> out;
    for (int idx : data.split_indices(split)) {
        const Song& song = data.songs[idx];
        for (const auto& range : plan_segments(song.targets.frames(), song.grid, 5.0, warnings)) {
            TrainSegment seg;
            seg.song = idx;
            seg.range = range;
            seg.targets = slice_targets(song.targets, range);

            const int audio_samples = range.frames() * kSamplesPerFrame;
            const int visual_frames =
                std::min<int>(range.frames(), static_cast<int>(song.visual.rows()) - range.begin);
            const int feature_rows =
                song.audio_features.rows() > 0
                    ? std::min<int>(range.frames(),
                                    static_cast<int>(song.audio_features.rows()) - range.begin)
                    : 0;
            const int frames =
                model.expected_frames(audio_samples, visual_frames, feature_rows);
            seg.targets.onset.resize(frames);
            seg.targets.silence.resize(frames);
            seg.targets.octave.resize(frames);
            seg.targets.name.resize(frames);

            seg.noise.snr_db = std::numeric_limits<double>::infinity();
            if (!noise_grid.empty()) {
                const auto cond = out.size() % noise_grid.size();
                seg.noise = noise_grid[cond];
                seg.noise.seed = seed ^ (0x9e3779b97f4a7c15ull * (out.size() + 1));
            }
            out.push_back(std::move(seg));
        }
    }
    return out;
}

}  // namespace svt
