// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "svt/labeling.hpp"
#include "svt/notation.hpp"

namespace svt {

/// Per-frame model outputs, pre-sigmoid / pre-softmax.
struct FrameLogits {
    std::vector<double> onset;
    std::vector<double> silence;
    std::vector<std::array<double, kOctaveClasses>> octave;
    std::vector<std::array<double, kNameClasses>> name;

    int frames() const { return static_cast<int>(onset.size()); }

    void resize(int t) {
        onset.assign(t, 0.0);
        silence.assign(t, 0.0);
        octave.assign(t, {});
        name.assign(t, {});
    }
};

struct DecoderConfig {
    double onset_threshold = 0.4;
    double silence_threshold = 0.5;
    bool close_on_next_onset = false;  // close an open note at the next onset
                                       // when it precedes the first silence
};

/// Per-frame pitch: argmax over octave and name classes, combined via
/// classes_to_midi (mixed silence resolves to silence).
inline Pitch frame_pitch(const std::array<double, kOctaveClasses>& octave_logits,
                         const std::array<double, kNameClasses>& name_logits) {
    int oct = 0, name = 0;
    for (int i = 1; i < kOctaveClasses; ++i)
        if (octave_logits[i] > octave_logits[oct]) oct = i;
    for (int i = 1; i < kNameClasses; ++i)
        if (name_logits[i] > name_logits[name]) name = i;
    return classes_to_midi(oct, name);
}

namespace detail {

/// Onset frames: sigmoid(onset logit) above threshold and a local maximum,
/// i.e. >= both neighbours with strict inequality on at least one existing
/// side. Runs of equal values count once, at their first frame.
inline std::vector<int> onset_frames(const std::vector<double>& onset_logits, double threshold) {
    const int T = static_cast<int>(onset_logits.size());
    std::vector<int> out;
    int t = 0;
    while (t < T) {
        int end = t + 1;
        while (end < T && onset_logits[end] == onset_logits[t]) ++end;
        const double p = sigmoid(onset_logits[t]);
        if (p > threshold) {
            // the run is maximal, so an existing neighbour differs from the
            // run value; "<" covers both the >= and the strictness condition
            const bool left_strict = (t > 0) && (onset_logits[t - 1] < onset_logits[t]);
            const bool right_strict = (end < T) && (onset_logits[end] < onset_logits[t]);
            const bool left_ok = (t == 0) || left_strict;
            const bool right_ok = (end == T) || right_strict;
            if (left_ok && right_ok && (left_strict || right_strict)) out.push_back(t);
        }
        t = end;
    }
    return out;
}

}  // namespace detail

/// Converts frame predictions back into note events:
///   - onset frames from thresholded local maxima of the onset prediction,
///   - offset at the first following frame whose silence probability exceeds
///     the threshold (song end if none; next onset if close_on_next_onset and
///     it comes first),
///   - pitch as the mode of non-silence frame pitches over the note span,
///     ties broken toward the lower MIDI number; candidates whose span holds
///     only silence-pitched frames are dropped,
///   - overlaps resolved by truncating a note at the next note's onset.
inline NoteSequence decode(const FrameLogits& logits, const FrameGrid& grid,
                           const DecoderConfig& cfg = {}) {
    const int T = logits.frames();
    NoteSequence seq;
    seq.duration = grid.duration();
    if (T == 0) return seq;
    if (static_cast<int>(logits.silence.size()) != T ||
        static_cast<int>(logits.octave.size()) != T ||
        static_cast<int>(logits.name.size()) != T) {
        throw ValidationError("decode: inconsistent logit array lengths");
    }

    const auto onsets = detail::onset_frames(logits.onset, cfg.onset_threshold);

    for (std::size_t i = 0; i < onsets.size(); ++i) {
        const int t = onsets[i];
        int end = T;
        for (int u = t + 1; u < T; ++u) {
            if (sigmoid(logits.silence[u]) > cfg.silence_threshold) {
                end = u;
                break;
            }
        }
        if (cfg.close_on_next_onset && i + 1 < onsets.size()) {
            end = std::min(end, onsets[i + 1]);
        }

        // Mode of non-silence frame pitches over [t, end); ties -> lower MIDI.
        std::map<int, int> counts;
        for (int u = t; u < end; ++u) {
            const Pitch p = frame_pitch(logits.octave[u], logits.name[u]);
            if (!p.is_silence()) ++counts[p.midi()];
        }
        if (counts.empty()) continue;
        int best_midi = counts.begin()->first;
        int best_count = counts.begin()->second;
        for (const auto& [midi, count] : counts) {
            if (count > best_count) {
                best_midi = midi;
                best_count = count;
            }
        }

        seq.notes.push_back({grid.time_for_frame(t), grid.time_for_frame(end),
                             Pitch::from_midi(best_midi)});
    }

    // Independent offset searches can overrun the next onset; truncate.
    for (std::size_t i = 0; i + 1 < seq.notes.size(); ++i) {
        seq.notes[i].offset = std::min(seq.notes[i].offset, seq.notes[i + 1].onset);
    }
    return seq;
}

/// Saturated logits reproducing the given targets exactly; decode of the
/// result recovers the labels up to grid quantization.
inline FrameLogits ideal_logits(const FrameTargets& targets, double magnitude = 12.0) {
    const int T = targets.frames();
    FrameLogits out;
    out.resize(T);
    for (int t = 0; t < T; ++t) {
        out.onset[t] = targets.onset[t] ? magnitude : -magnitude;
        out.silence[t] = targets.silence[t] ? magnitude : -magnitude;
        for (int c = 0; c < kOctaveClasses; ++c)
            out.octave[t][c] = (c == targets.octave[t]) ? magnitude : -magnitude;
        for (int c = 0; c < kNameClasses; ++c)
            out.name[t][c] = (c == targets.name[t]) ? magnitude : -magnitude;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logits file: little-endian binary dump with a shape header.
//   magic "SVTLOGIT", u32 version, u64 T, f64 frame_length,
//   then T onset, T silence, T*5 octave, T*13 name doubles.
// ---------------------------------------------------------------------------

inline constexpr char kLogitsMagic[8] = {'S', 'V', 'T', 'L', 'O', 'G', 'I', 'T'};

inline void write_logits_file(const std::string& path, const FrameLogits& logits,
                              const FrameGrid& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write logits file: " + path);
    out.write(kLogitsMagic, 8);
    const std::uint32_t version = 1;
    const std::uint64_t T = static_cast<std::uint64_t>(logits.frames());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&T), sizeof(T));
    out.write(reinterpret_cast<const char*>(&grid.frame_length), sizeof(double));
    auto dump = [&](const double* p, std::size_t n) {
        out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    };
    dump(logits.onset.data(), logits.onset.size());
    dump(logits.silence.data(), logits.silence.size());
    for (const auto& row : logits.octave) dump(row.data(), row.size());
    for (const auto& row : logits.name) dump(row.data(), row.size());
    if (!out) throw RuntimeFailure("short write to logits file: " + path);
}

inline FrameLogits read_logits_file(const std::string& path, FrameGrid* grid_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open logits file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kLogitsMagic, 8) != 0) {
        throw ValidationError("not a logits file: " + path);
    }
    std::uint32_t version = 0;
    std::uint64_t T = 0;
    double frame_length = 0.0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&T), sizeof(T));
    in.read(reinterpret_cast<char*>(&frame_length), sizeof(frame_length));
    if (!in || version != 1) throw ValidationError("unsupported logits file version in " + path);
    FrameLogits logits;
    logits.resize(static_cast<int>(T));
    auto slurp = [&](double* p, std::size_t n) {
        in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    };
    slurp(logits.onset.data(), logits.onset.size());
    slurp(logits.silence.data(), logits.silence.size());
    for (auto& row : logits.octave) slurp(row.data(), row.size());
    for (auto& row : logits.name) slurp(row.data(), row.size());
    if (!in) throw ValidationError("truncated logits file: " + path);
    if (grid_out) {
        grid_out->frame_length = frame_length;
        grid_out->num_frames = static_cast<int>(T);
    }
    return logits;
}

}  // namespace svt
