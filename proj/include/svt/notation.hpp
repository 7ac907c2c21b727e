// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "svt/common.hpp"
#include "json.hpp"

namespace svt {

// Pitch classes: MIDI 36 (C2) .. 83 (B5), four octaves of twelve names,
// plus a designated silence class per head.
inline constexpr int kMidiMin = 36;
inline constexpr int kMidiMax = 83;
inline constexpr int kOctaveClasses = 5;   // octaves 2..5 + silence
inline constexpr int kNameClasses = 13;    // C..B + silence
inline constexpr int kSilenceOctaveClass = 4;
inline constexpr int kSilenceNameClass = 12;

/// A singing pitch: integer MIDI number in [36, 83], or silence.
class Pitch {
public:
    constexpr Pitch() = default;

    static Pitch from_midi(int midi) {
        if (midi < kMidiMin || midi > kMidiMax) {
            throw ValidationError("MIDI number " + std::to_string(midi) + " outside [" +
                                  std::to_string(kMidiMin) + ", " + std::to_string(kMidiMax) + "]");
        }
        Pitch p;
        p.midi_ = midi;
        return p;
    }

    static constexpr Pitch silence() { return Pitch{}; }

    constexpr bool is_silence() const { return midi_ < 0; }

    int midi() const {
        if (is_silence()) throw ValidationError("silence pitch has no MIDI number");
        return midi_;
    }

    constexpr bool operator==(const Pitch&) const = default;

private:
    int midi_ = -1;
};

struct NoteEvent {
    double onset = 0.0;   // seconds
    double offset = 0.0;  // seconds, > onset
    Pitch pitch;          // never silence in a valid event

    double duration() const { return offset - onset; }
};

struct NoteSequence {
    std::vector<NoteEvent> notes;  // ordered: 0 <= o_1 < f_1 <= o_2 < ... <= f_N <= duration
    double duration = 0.0;         // seconds
};

/// Time/frame grid shared by labels, encoder outputs, and the decoder.
struct FrameGrid {
    double frame_length = 0.02;  // seconds per frame
    int num_frames = 0;

    double duration() const { return frame_length * num_frames; }

    static FrameGrid uniform(double duration, double frame_length) {
        if (frame_length <= 0.0) throw ValidationError("frame length must be positive");
        FrameGrid g;
        g.frame_length = frame_length;
        g.num_frames = static_cast<int>(std::floor(duration / frame_length));
        return g;
    }

    /// Frame covering time t under the half-open convention [k*delta, (k+1)*delta).
    int frame_for_time(double t) const { return static_cast<int>(std::floor(t / frame_length)); }

    double time_for_frame(int frame) const { return frame * frame_length; }
    double center_of_frame(int frame) const { return (frame + 0.5) * frame_length; }
};

// ---------------------------------------------------------------------------
// Pitch <-> class conversions
// ---------------------------------------------------------------------------

struct PitchClasses {
    int octave_class = kSilenceOctaveClass;  // 0..4
    int name_class = kSilenceNameClass;      // 0..12
};

inline PitchClasses midi_to_classes(const Pitch& p) {
    if (p.is_silence()) return {kSilenceOctaveClass, kSilenceNameClass};
    const int rel = p.midi() - kMidiMin;
    return {rel / 12, rel % 12};
}

/// Inverse of midi_to_classes. A mixed pair (exactly one class is the silence
/// class) resolves to silence: the decoder drops silent frames, so silence is
/// the harmless reading of an inconsistent prediction.
inline Pitch classes_to_midi(int octave_class, int name_class) {
    if (octave_class < 0 || octave_class >= kOctaveClasses || name_class < 0 ||
        name_class >= kNameClasses) {
        throw ValidationError("pitch class pair (" + std::to_string(octave_class) + ", " +
                              std::to_string(name_class) + ") out of range");
    }
    if (octave_class == kSilenceOctaveClass || name_class == kSilenceNameClass) {
        return Pitch::silence();
    }
    return Pitch::from_midi(kMidiMin + 12 * octave_class + name_class);
}

inline double midi_to_hz(int midi) {
    if (midi < kMidiMin || midi > kMidiMax) {
        throw ValidationError("MIDI number " + std::to_string(midi) + " outside the supported range");
    }
    return 440.0 * std::pow(2.0, (midi - 69) / 12.0);
}

/// Frequency for possibly fractional MIDI values (cent-resolution references).
inline double midi_to_hz(double midi) {
    return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0);
}

// ---------------------------------------------------------------------------
// Sequence validation
// ---------------------------------------------------------------------------

struct SequenceViolation {
    int index = -1;  // offending note index
    std::string rule;
};

/// Checks the ordering chain 0 <= o_1 < f_1 <= o_2 < ... <= o_N < f_N <= L
/// plus per-note pitch validity. Returns findings instead of throwing.
inline std::vector<SequenceViolation> validate_sequence(const NoteSequence& seq) {
    std::vector<SequenceViolation> out;
    for (int i = 0; i < static_cast<int>(seq.notes.size()); ++i) {
        const NoteEvent& n = seq.notes[i];
        if (n.pitch.is_silence()) {
            out.push_back({i, "silence pitch in note event"});
        }
        if (n.onset < 0.0) {
            out.push_back({i, "negative onset"});
        }
        if (!(n.offset > n.onset)) {
            out.push_back({i, "non-positive duration"});
        }
        if (i > 0 && n.onset < seq.notes[i - 1].offset) {
            out.push_back({i, "overlap with previous note"});
        }
        if (seq.duration > 0.0 && n.offset > seq.duration + 1e-9) {
            out.push_back({i, "offset beyond sequence duration"});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Label file format: a JSON array of [onset_seconds, offset_seconds, midi]
// triples, the MIR-ST500 label shape.
// ---------------------------------------------------------------------------

struct LabelRowError {
    int row = -1;
    std::string message;
};

/// A label triple as read from disk; midi may be fractional (cent-resolution
/// annotations). Only the metrics module consumes fractional pitches; the
/// NoteSequence loader requires integers.
struct LabelTriple {
    double onset = 0.0;
    double offset = 0.0;
    double midi = 0.0;
};

inline std::vector<LabelTriple> read_label_triples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open label file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed label file " + path + ": " + e.what());
    }
    if (!j.is_array()) throw ValidationError("label file is not a JSON array: " + path);
    std::vector<LabelTriple> out;
    out.reserve(j.size());
    int row = 0;
    for (const auto& item : j) {
        if (!item.is_array() || item.size() != 3 || !item[0].is_number() ||
            !item[1].is_number() || !item[2].is_number()) {
            throw ValidationError(path + ": row " + std::to_string(row) +
                                  " is not a [onset, offset, midi] triple");
        }
        out.push_back({item[0].get<double>(), item[1].get<double>(), item[2].get<double>()});
        ++row;
    }
    return out;
}

struct LabelLoadOptions {
    bool allow_out_of_range = false;  // drop (with warning) instead of reject
};

/// Loads a label file into a NoteSequence, enforcing integer MIDI in
/// [36, 83] and the ordering invariants. Out-of-range pitches are rejected
/// unless allow_out_of_range is set, in which case they are dropped.
inline NoteSequence read_label_file(const std::string& path, LabelLoadOptions opts = {},
                                    Warnings* warnings = nullptr) {
    const auto triples = read_label_triples(path);
    NoteSequence seq;
    seq.notes.reserve(triples.size());
    int row = 0;
    for (const auto& t : triples) {
        const double rounded = std::round(t.midi);
        if (std::abs(t.midi - rounded) > 1e-9) {
            throw ValidationError(path + ": row " + std::to_string(row) +
                                  " has non-integer MIDI " + std::to_string(t.midi));
        }
        const int midi = static_cast<int>(rounded);
        if (midi < kMidiMin || midi > kMidiMax) {
            if (opts.allow_out_of_range) {
                warn(warnings, path + ": row " + std::to_string(row) + " MIDI " +
                                   std::to_string(midi) + " outside [36, 83], dropped");
                ++row;
                continue;
            }
            throw ValidationError(path + ": row " + std::to_string(row) + " MIDI " +
                                  std::to_string(midi) +
                                  " outside [36, 83] (use allow_out_of_range to drop)");
        }
        seq.notes.push_back({t.onset, t.offset, Pitch::from_midi(midi)});
        ++row;
    }
    if (!seq.notes.empty()) seq.duration = seq.notes.back().offset;
    const auto violations = validate_sequence(seq);
    if (!violations.empty()) {
        throw ValidationError(path + ": note " + std::to_string(violations.front().index) + ": " +
                              violations.front().rule);
    }
    return seq;
}

inline void write_label_file(const std::string& path, const NoteSequence& seq) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& n : seq.notes) {
        j.push_back({n.onset, n.offset, n.pitch.midi()});
    }
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write label file: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace svt
