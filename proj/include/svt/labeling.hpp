// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "svt/notation.hpp"

namespace svt {

/// Per-frame training targets: onset/silence flags plus octave and
/// pitch-name class ids. Invariants:
///   silence[t] == 1  <=>  (octave[t], name[t]) == (4, 12)
///   onset[t] == 1    =>   silence[t] == 0
struct FrameTargets {
    std::vector<std::uint8_t> onset;
    std::vector<std::uint8_t> silence;
    std::vector<std::uint8_t> octave;  // 0..4
    std::vector<std::uint8_t> name;    // 0..12

    int frames() const { return static_cast<int>(onset.size()); }

    void resize(int t) {
        onset.assign(t, 0);
        silence.assign(t, 1);
        octave.assign(t, kSilenceOctaveClass);
        name.assign(t, kSilenceNameClass);
    }
};

/// Converts note events to frame labels. Onsets mark the frame containing
/// the onset time (half-open [t*d, (t+1)*d) intervals); silence and pitch
/// follow the note covering the frame center. An onset frame whose center
/// is uncovered takes the onsetting note's pitch so the invariants hold.
inline FrameTargets events_to_frames(const NoteSequence& seq, const FrameGrid& grid,
                                     Warnings* warnings = nullptr) {
    {
        const auto violations = validate_sequence(seq);
        if (!violations.empty()) {
            throw ValidationError("events_to_frames: invalid sequence (note " +
                                  std::to_string(violations.front().index) + ": " +
                                  violations.front().rule + ")");
        }
        if (grid.num_frames < 0 || grid.frame_length <= 0.0) {
            throw ValidationError("events_to_frames: invalid grid");
        }
        if (seq.duration > 0.0 && grid.duration() > seq.duration + grid.frame_length + 1e-9) {
            throw ValidationError("events_to_frames: grid extends past the sequence duration");
        }
    }

    const int T = grid.num_frames;
    FrameTargets out;
    out.resize(T);

    // State labels from the note covering each frame center. Notes are
    // ordered and disjoint, so a single forward scan suffices.
    std::size_t next = 0;
    for (int t = 0; t < T; ++t) {
        const double center = grid.center_of_frame(t);
        while (next < seq.notes.size() && seq.notes[next].offset <= center) ++next;
        if (next < seq.notes.size() && seq.notes[next].onset <= center) {
            const auto cls = midi_to_classes(seq.notes[next].pitch);
            out.silence[t] = 0;
            out.octave[t] = static_cast<std::uint8_t>(cls.octave_class);
            out.name[t] = static_cast<std::uint8_t>(cls.name_class);
        }
    }

    // Onset marks; collisions within one frame keep a single mark.
    for (const auto& n : seq.notes) {
        if (n.onset >= grid.duration()) continue;
        const int t = grid.frame_for_time(n.onset);
        if (out.onset[t]) {
            warn(warnings, "two onsets fall into frame " + std::to_string(t) +
                               "; keeping a single onset mark");
        }
        out.onset[t] = 1;
        if (out.silence[t]) {
            const auto cls = midi_to_classes(n.pitch);
            out.silence[t] = 0;
            out.octave[t] = static_cast<std::uint8_t>(cls.octave_class);
            out.name[t] = static_cast<std::uint8_t>(cls.name_class);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Song segmentation
// ---------------------------------------------------------------------------

/// Half-open frame range [begin, end) into the song grid. Inputs aligned to
/// the grid (waveform samples, 50 Hz feature rows) are sliced with the same
/// range scaled by their per-frame density.
struct FrameRange {
    int begin = 0;
    int end = 0;
    int frames() const { return end - begin; }
};

struct Segment {
    FrameRange range;
    FrameTargets targets;  // restriction of the song's frame labels
};

/// Splits a song into fixed-length chunks. All segments are
/// segment_seconds long except the last: a remainder shorter than half a
/// segment merges into the previous one (yielding 1x-1.5x), otherwise it
/// stands alone (0.5x-1x). Segments never overlap.
inline std::vector<FrameRange> plan_segments(int total_frames, const FrameGrid& grid,
                                             double segment_seconds = 5.0,
                                             Warnings* warnings = nullptr) {
    if (segment_seconds <= 0.0) throw ValidationError("segment length must be positive");
    const int per = std::max(1, static_cast<int>(std::llround(segment_seconds / grid.frame_length)));
    std::vector<FrameRange> out;
    if (total_frames <= 0) return out;
    if (total_frames < (per + 1) / 2) {
        warn(warnings, "song shorter than half a segment; emitting a single short segment");
        out.push_back({0, total_frames});
        return out;
    }
    const int full = total_frames / per;
    const int rem = total_frames - full * per;
    for (int i = 0; i < full; ++i) out.push_back({i * per, (i + 1) * per});
    if (rem > 0) {
        if (rem * 2 < per && !out.empty()) {
            out.back().end += rem;  // merge short tail into the previous segment
        } else {
            out.push_back({full * per, total_frames});
        }
    }
    return out;
}

inline FrameTargets slice_targets(const FrameTargets& t, const FrameRange& r) {
    FrameTargets out;
    out.onset.assign(t.onset.begin() + r.begin, t.onset.begin() + r.end);
    out.silence.assign(t.silence.begin() + r.begin, t.silence.begin() + r.end);
    out.octave.assign(t.octave.begin() + r.begin, t.octave.begin() + r.end);
    out.name.assign(t.name.begin() + r.begin, t.name.begin() + r.end);
    return out;
}

inline std::vector<Segment> segment_song(const FrameTargets& targets, const FrameGrid& grid,
                                         double segment_seconds = 5.0,
                                         Warnings* warnings = nullptr) {
    std::vector<Segment> out;
    for (const auto& r : plan_segments(targets.frames(), grid, segment_seconds, warnings)) {
        out.push_back({r, slice_targets(targets, r)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct BatchItem {
    std::vector<double> audio;                // raw waveform samples, frame-aligned
    std::vector<std::vector<double>> visual;  // one row per frame
    FrameTargets targets;
};

/// A padded batch: every per-frame array is padded with zeros to the longest
/// item and mask[b][t] == 1 iff t < frames[b].
struct Batch {
    std::vector<int> frames;
    int max_frames = 0;
    std::vector<std::vector<double>> audio;
    std::vector<std::vector<std::vector<double>>> visual;
    std::vector<FrameTargets> targets;
    std::vector<std::vector<std::uint8_t>> mask;

    int size() const { return static_cast<int>(frames.size()); }
};

inline Batch collate(const std::vector<BatchItem>& items) {
    if (items.empty()) throw ValidationError("collate: empty batch");
    Batch b;
    std::size_t max_samples = 0;
    int visual_dim = 0;
    for (const auto& it : items) {
        b.frames.push_back(it.targets.frames());
        b.max_frames = std::max(b.max_frames, it.targets.frames());
        max_samples = std::max(max_samples, it.audio.size());
        if (!it.visual.empty()) visual_dim = static_cast<int>(it.visual.front().size());
    }
    for (const auto& it : items) {
        std::vector<double> audio = it.audio;
        audio.resize(max_samples, 0.0);
        b.audio.push_back(std::move(audio));

        auto visual = it.visual;
        visual.resize(b.max_frames, std::vector<double>(visual_dim, 0.0));
        b.visual.push_back(std::move(visual));

        FrameTargets t = it.targets;
        const int pad = b.max_frames;
        t.onset.resize(pad, 0);
        t.silence.resize(pad, 0);
        t.octave.resize(pad, 0);
        t.name.resize(pad, 0);
        b.targets.push_back(std::move(t));

        std::vector<std::uint8_t> row(pad, 0);
        std::fill(row.begin(), row.begin() + it.targets.frames(), std::uint8_t{1});
        b.mask.push_back(std::move(row));
    }
    return b;
}

// ---------------------------------------------------------------------------
// Dataset manifest: CSV with header
//   song_id,split,audio_path,video_feature_path,label_path
// video_feature_path may be empty for audio-only songs.
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string song_id;
    std::string split;  // train | valid | test
    std::string audio_path;
    std::string video_feature_path;
    std::string label_path;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}
}  // namespace detail

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto f = detail::split_csv_line(line);
        if (lineno == 1 && !f.empty() && f[0] == "song_id") continue;  // header
        if (f.size() != 5) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected 5 columns, got " + std::to_string(f.size()));
        }
        if (f[1] != "train" && f[1] != "valid" && f[1] != "test") {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown split '" +
                                  f[1] + "'");
        }
        out.push_back({f[0], f[1], f[2], f[3], f[4]});
    }
    return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write manifest: " + path);
    out << "song_id,split,audio_path,video_feature_path,label_path\n";
    for (const auto& e : entries) {
        out << e.song_id << ',' << e.split << ',' << e.audio_path << ','
            << e.video_feature_path << ',' << e.label_path << '\n';
    }
}

}  // namespace svt
