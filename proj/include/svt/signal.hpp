// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "svt/common.hpp"
#include "svt/notation.hpp"

namespace svt {

inline constexpr int kAudioRate = 16000;
inline constexpr int kVisualRate = 50;

struct Waveform {
    std::vector<double> samples;
    int sample_rate = kAudioRate;

    double duration() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
    double power() const {
        if (samples.empty()) return 0.0;
        double acc = 0.0;
        for (double s : samples) acc += s * s;
        return acc / static_cast<double>(samples.size());
    }
    double peak() const {
        double p = 0.0;
        for (double s : samples) p = std::max(p, std::abs(s));
        return p;
    }
};

// ---------------------------------------------------------------------------
// SNR mixing
// ---------------------------------------------------------------------------

struct MixResult {
    Waveform mix;
    double noise_gain = 0.0;  // scale applied to the noise
    double post_gain = 1.0;   // common scale applied after summing (peak control)
};

/// Scales the noise so that 10*log10(P_clean / P_noise_scaled) equals snr_db,
/// with powers measured as mean square over the whole clip. The noise is
/// looped or trimmed to the clean length first. +inf returns the clean signal
/// unchanged. If the sum clips, both components are scaled down together
/// (which leaves the SNR intact).
inline MixResult mix_at_snr_detailed(const Waveform& clean, const Waveform& noise, double snr_db) {
    MixResult out;
    if (std::isinf(snr_db) && snr_db > 0) {
        out.mix = clean;
        return out;
    }
    if (clean.sample_rate != noise.sample_rate) {
        throw ValidationError("mix_at_snr: sample rates differ");
    }
    const double p_clean = clean.power();
    if (p_clean <= 0.0) {
        throw ValidationError("mix_at_snr: silent clean signal with finite SNR");
    }
    if (noise.samples.empty()) throw ValidationError("mix_at_snr: empty noise");

    std::vector<double> fitted(clean.samples.size());
    for (std::size_t i = 0; i < fitted.size(); ++i) {
        fitted[i] = noise.samples[i % noise.samples.size()];
    }
    double p_noise = 0.0;
    for (double s : fitted) p_noise += s * s;
    p_noise /= static_cast<double>(fitted.size());
    if (p_noise <= 0.0) throw ValidationError("mix_at_snr: silent noise signal");

    out.noise_gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
    out.mix.sample_rate = clean.sample_rate;
    out.mix.samples.resize(clean.samples.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < fitted.size(); ++i) {
        out.mix.samples[i] = clean.samples[i] + out.noise_gain * fitted[i];
        peak = std::max(peak, std::abs(out.mix.samples[i]));
    }
    if (peak > 1.0) {
        out.post_gain = 1.0 / peak;
        for (double& s : out.mix.samples) s *= out.post_gain;
    }
    return out;
}

inline Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
    return mix_at_snr_detailed(clean, noise, snr_db).mix;
}

// ---------------------------------------------------------------------------
// Noise families
// ---------------------------------------------------------------------------

enum class NoiseFamily { kAccompaniment, kBabble, kWhite, kNatural };

inline const char* noise_family_name(NoiseFamily f) {
    switch (f) {
        case NoiseFamily::kAccompaniment: return "accompaniment";
        case NoiseFamily::kBabble: return "babble";
        case NoiseFamily::kWhite: return "white";
        case NoiseFamily::kNatural: return "natural";
    }
    return "?";
}

inline NoiseFamily noise_family_from_name(const std::string& name) {
    if (name == "accompaniment") return NoiseFamily::kAccompaniment;
    if (name == "babble") return NoiseFamily::kBabble;
    if (name == "white") return NoiseFamily::kWhite;
    if (name == "natural") return NoiseFamily::kNatural;
    throw ValidationError("unknown noise family: " + name);
}

inline constexpr NoiseFamily kAllNoiseFamilies[] = {
    NoiseFamily::kAccompaniment, NoiseFamily::kBabble, NoiseFamily::kWhite,
    NoiseFamily::kNatural};

struct NoiseSpec {
    NoiseFamily family = NoiseFamily::kWhite;
    double snr_db = std::numeric_limits<double>::infinity();  // +inf = clean
    std::uint64_t seed = 0;
};

namespace detail {

inline void normalize_rms(std::vector<double>& x) {
    double p = 0.0;
    for (double s : x) p += s * s;
    p = std::sqrt(p / static_cast<double>(x.size()));
    if (p > 0.0) {
        for (double& s : x) s /= p;
    }
}

inline std::vector<double> babble_noise(Rng& rng, int n) {
    // Eight talkers: amplitude-modulated harmonic tracks with drifting
    // fundamentals. Continuous by construction.
    constexpr int kTalkers = 8;
    constexpr int kUpdate = 800;  // 50 ms pitch update
    std::vector<double> out(n, 0.0);
    for (int talker = 0; talker < kTalkers; ++talker) {
        double f0 = rng.uniform(90.0, 280.0);
        const double syllable_rate = rng.uniform(2.0, 6.0);
        const double syllable_phase = rng.uniform(0.0, 2.0 * M_PI);
        double phase[3] = {rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.0, 2.0 * M_PI),
                           rng.uniform(0.0, 2.0 * M_PI)};
        const double harm_amp[3] = {1.0, 0.6, 0.3};
        for (int i = 0; i < n; ++i) {
            if (i % kUpdate == 0) {
                f0 = std::clamp(f0 * std::exp(0.05 * rng.gaussian()), 80.0, 300.0);
            }
            const double t = static_cast<double>(i) / kAudioRate;
            const double env =
                0.5 * (1.0 + std::sin(2.0 * M_PI * syllable_rate * t + syllable_phase));
            double s = 0.0;
            for (int h = 0; h < 3; ++h) {
                phase[h] += 2.0 * M_PI * f0 * (h + 1) / kAudioRate;
                s += harm_amp[h] * std::sin(phase[h]);
            }
            out[i] += env * s;
        }
    }
    normalize_rms(out);
    return out;
}

inline std::vector<double> natural_noise(Rng& rng, int n, double duty_cycle) {
    // Sparse random bursts of lowpassed noise; near-silence in between.
    const double mean_burst = 0.175;  // seconds, from U[0.05, 0.3]
    const double mean_gap = mean_burst * (1.0 - duty_cycle) / duty_cycle;
    std::vector<double> out(n, 0.0);
    double t = rng.uniform(0.0, mean_gap);
    while (true) {
        const double burst_len = rng.uniform(0.05, 0.3);
        const int start = static_cast<int>(t * kAudioRate);
        const int len = static_cast<int>(burst_len * kAudioRate);
        if (start >= n) break;
        const double amp = rng.uniform(0.5, 1.5);
        const double alpha =
            std::exp(-2.0 * M_PI * rng.uniform(500.0, 4000.0) / kAudioRate);
        double state = 0.0;
        for (int i = 0; i < len && start + i < n; ++i) {
            state = alpha * state + (1.0 - alpha) * rng.gaussian() * 6.0;
            const double frac = static_cast<double>(i) / static_cast<double>(len);
            const double env = std::sin(M_PI * frac);  // smooth in/out
            out[start + i] += amp * env * state;
        }
        t += burst_len + rng.uniform(0.5 * mean_gap, 1.5 * mean_gap);
    }
    normalize_rms(out);
    return out;
}

inline std::vector<double> accompaniment_noise(Rng& rng, int n) {
    // Sustained harmonic chord progression over a seeded random root walk.
    std::vector<double> out(n, 0.0);
    int root = static_cast<int>(rng.uniform_int(45, 55));
    int i = 0;
    while (i < n) {
        const double chord_len = rng.uniform(1.0, 2.0);
        const int len = std::min(static_cast<int>(chord_len * kAudioRate), n - i);
        const bool minor = rng.uniform() < 0.5;
        const int degrees[4] = {0, minor ? 3 : 4, 7, 12};
        for (int tone = 0; tone < 4; ++tone) {
            const double f = 440.0 * std::pow(2.0, (root + degrees[tone] - 69) / 12.0);
            const double trem_rate = rng.uniform(0.5, 2.0);
            const double trem_phase = rng.uniform(0.0, 2.0 * M_PI);
            double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double harm_amp[3] = {1.0, 0.5, 0.25};
            for (int k = 0; k < len; ++k) {
                const double t = static_cast<double>(k) / kAudioRate;
                const double fade_in = std::min(1.0, t / 0.02);
                const double fade_out =
                    std::min(1.0, static_cast<double>(len - 1 - k) / (0.02 * kAudioRate));
                const double env =
                    (0.8 + 0.2 * std::sin(2.0 * M_PI * trem_rate * t + trem_phase)) *
                    fade_in * fade_out;
                phase += 2.0 * M_PI * f / kAudioRate;
                double s = 0.0;
                for (int h = 0; h < 3; ++h) s += harm_amp[h] * std::sin(phase * (h + 1));
                out[i + k] += env * s;
            }
        }
        root = std::clamp(root + static_cast<int>(rng.uniform_int(-5, 5)), 40, 64);
        i += len;
    }
    normalize_rms(out);
    return out;
}

}  // namespace detail

/// Seeded synthetic noise. White noise has unit variance; the other families
/// are RMS-normalized, so mix_at_snr scaling is well conditioned either way.
inline Waveform gen_noise(const NoiseSpec& spec, double duration, double natural_duty = 0.18) {
    if (duration <= 0.0) throw ValidationError("gen_noise: duration must be positive");
    if (natural_duty <= 0.0 || natural_duty > 0.3) {
        throw ValidationError("gen_noise: natural duty cycle must be in (0, 0.3]");
    }
    const int n = static_cast<int>(std::llround(duration * kAudioRate));
    Rng rng(spec.seed ^ (0x5bd1e995u + static_cast<std::uint64_t>(spec.family) * 0x9e3779b9u));
    Waveform out;
    out.sample_rate = kAudioRate;
    switch (spec.family) {
        case NoiseFamily::kWhite: {
            out.samples.resize(n);
            for (auto& s : out.samples) s = rng.gaussian();
            break;
        }
        case NoiseFamily::kBabble:
            out.samples = detail::babble_noise(rng, n);
            break;
        case NoiseFamily::kNatural:
            out.samples = detail::natural_noise(rng, n, natural_duty);
            break;
        case NoiseFamily::kAccompaniment:
            out.samples = detail::accompaniment_noise(rng, n);
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic multimodal songs
// ---------------------------------------------------------------------------

struct SynthSong {
    Waveform audio;              // 16 kHz mono
    Eigen::MatrixXd visual;      // (50 Hz frames) x 1 mouth-aperture track
    NoteSequence labels;
};

/// Renders a note sequence as harmonic tones plus a mouth-aperture track.
/// The visual track ramps open over 40 ms around each onset and closed over
/// 60 ms around each offset; it carries timing but no pitch information.
inline SynthSong synth_song(const NoteSequence& seq, std::uint64_t seed) {
    {
        const auto violations = validate_sequence(seq);
        if (!violations.empty()) {
            throw ValidationError("synth_song: invalid sequence (note " +
                                  std::to_string(violations.front().index) + ": " +
                                  violations.front().rule + ")");
        }
    }
    Rng rng(seed);
    SynthSong out;
    out.labels = seq;
    const int n = static_cast<int>(std::llround(seq.duration * kAudioRate));
    out.audio.sample_rate = kAudioRate;
    out.audio.samples.assign(n, 0.0);

    // low-level background so the clean signal is never exactly silent
    for (auto& s : out.audio.samples) s = 0.002 * rng.gaussian();

    static constexpr double kHarmAmps[4] = {1.0, 0.5, 0.25, 0.125};
    std::vector<double> note_open(seq.notes.size());
    for (std::size_t k = 0; k < seq.notes.size(); ++k) {
        const NoteEvent& note = seq.notes[k];
        const double f0 = midi_to_hz(note.pitch.midi());
        const double amp = 0.22 * rng.uniform(0.85, 1.15);
        note_open[k] = rng.uniform(0.85, 1.0);
        const int start = std::max(0, static_cast<int>(note.onset * kAudioRate));
        const int stop = std::min(n, static_cast<int>(note.offset * kAudioRate));
        for (int i = start; i < stop; ++i) {
            const double t = static_cast<double>(i) / kAudioRate - note.onset;
            const double remaining = note.offset - note.onset - t;
            const double env = std::min(1.0, t / 0.015) * std::min(1.0, remaining / 0.025) *
                               (0.7 + 0.3 * std::exp(-2.0 * t));
            double s = 0.0;
            for (int h = 0; h < 4; ++h) {
                s += kHarmAmps[h] * std::sin(2.0 * M_PI * f0 * (h + 1) * t);
            }
            out.audio.samples[i] += amp * env * s;
        }
    }

    const int frames = static_cast<int>(std::floor(seq.duration * kVisualRate));
    out.visual.setZero(frames, 1);
    for (int fidx = 0; fidx < frames; ++fidx) {
        const double t = (fidx + 0.5) / kVisualRate;
        double aperture = 0.0;
        for (std::size_t k = 0; k < seq.notes.size(); ++k) {
            const NoteEvent& note = seq.notes[k];
            const double up = std::clamp((t - (note.onset - 0.02)) / 0.04, 0.0, 1.0);
            const double down = std::clamp(((note.offset + 0.03) - t) / 0.06, 0.0, 1.0);
            aperture = std::max(aperture, note_open[k] * std::min(up, down));
        }
        out.visual(fidx, 0) = aperture + 0.015 * rng.gaussian();
    }
    return out;
}

struct RandomSongOptions {
    double duration = 30.0;
    double min_note = 0.12;
    double max_note = 0.8;
    double min_gap = 0.08;
    double max_gap = 0.4;
    int max_step = 7;  // largest melodic interval in semitones
};

/// Seeded random melody used by the synthetic dataset generator.
inline NoteSequence random_note_sequence(Rng& rng, const RandomSongOptions& opt = {}) {
    NoteSequence seq;
    seq.duration = opt.duration;
    double t = rng.uniform(0.05, 0.3);
    int midi = static_cast<int>(rng.uniform_int(kMidiMin + 10, kMidiMax - 10));
    while (true) {
        const double len = rng.uniform(opt.min_note, opt.max_note);
        if (t + len > opt.duration - 0.05) break;
        seq.notes.push_back({t, t + len, Pitch::from_midi(midi)});
        t += len + rng.uniform(opt.min_gap, opt.max_gap);
        midi = std::clamp(midi + static_cast<int>(rng.uniform_int(-opt.max_step, opt.max_step)),
                          kMidiMin, kMidiMax);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Mono conversion and resampling
// ---------------------------------------------------------------------------

struct AudioFile {
    std::vector<std::vector<double>> channels;
    int sample_rate = 0;
};

/// Channel average followed by windowed-sinc rate conversion to 16 kHz.
inline Waveform resample_to_16k_mono(const AudioFile& input) {
    if (input.channels.empty() || input.channels.front().empty()) {
        throw ValidationError("resample: empty audio");
    }
    if (input.sample_rate < 8000) {
        throw ValidationError("resample: unsupported sample rate " +
                              std::to_string(input.sample_rate));
    }
    const std::size_t n = input.channels.front().size();
    std::vector<double> mono(n, 0.0);
    for (const auto& ch : input.channels) {
        if (ch.size() != n) throw ValidationError("resample: ragged channels");
        for (std::size_t i = 0; i < n; ++i) mono[i] += ch[i];
    }
    const double inv = 1.0 / static_cast<double>(input.channels.size());
    for (double& s : mono) s *= inv;

    Waveform out;
    out.sample_rate = kAudioRate;
    if (input.sample_rate == kAudioRate) {
        out.samples = std::move(mono);
        return out;
    }

    const double ratio = static_cast<double>(input.sample_rate) / kAudioRate;
    const int out_len = static_cast<int>(std::floor(static_cast<double>(n) / ratio));
    constexpr int kTaps = 48;
    // cutoff in cycles per input sample, just below the tighter Nyquist
    const double fc =
        0.45 * std::min(static_cast<double>(kAudioRate) / input.sample_rate, 1.0);
    out.samples.resize(out_len);
    for (int i = 0; i < out_len; ++i) {
        const double pos = i * ratio;
        const int lo = std::max(0, static_cast<int>(std::ceil(pos)) - kTaps);
        const int hi = std::min(static_cast<int>(n) - 1, static_cast<int>(std::floor(pos)) + kTaps);
        double acc = 0.0;
        for (int m = lo; m <= hi; ++m) {
            const double x = static_cast<double>(m) - pos;
            const double kernel = (std::abs(x) < 1e-12)
                                      ? 2.0 * fc
                                      : std::sin(2.0 * M_PI * fc * x) / (M_PI * x);
            const double window = 0.42 + 0.5 * std::cos(M_PI * x / kTaps) +
                                  0.08 * std::cos(2.0 * M_PI * x / kTaps);
            acc += mono[static_cast<std::size_t>(m)] * kernel * window;
        }
        out.samples[i] = acc;
    }
    return out;
}

inline Waveform resample_to_16k_mono(const Waveform& input) {
    AudioFile f;
    f.channels.push_back(input.samples);
    f.sample_rate = input.sample_rate;
    return resample_to_16k_mono(f);
}

// ---------------------------------------------------------------------------
// WAV I/O (16-bit PCM)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

}  // namespace detail

inline void write_wav(const std::string& path, const Waveform& wav) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write wav: " + path);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
    out.write("RIFF", 4);
    detail::write_le<std::uint32_t>(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    detail::write_le<std::uint32_t>(out, 16);
    detail::write_le<std::uint16_t>(out, 1);  // PCM
    detail::write_le<std::uint16_t>(out, 1);  // mono
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(wav.sample_rate));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(wav.sample_rate * 2));
    detail::write_le<std::uint16_t>(out, 2);
    detail::write_le<std::uint16_t>(out, 16);
    out.write("data", 4);
    detail::write_le<std::uint32_t>(out, data_bytes);
    for (double s : wav.samples) {
        const double clamped = std::clamp(s, -1.0, 1.0);
        detail::write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(clamped * 32767.0)));
    }
    if (!out) throw RuntimeFailure("short write to wav: " + path);
}

inline AudioFile read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open wav: " + path);
    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw ValidationError("not a RIFF file: " + path);
    detail::read_le<std::uint32_t>(in);
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw ValidationError("not a WAVE file: " + path);

    AudioFile out;
    std::uint16_t channels = 0, bits = 0;
    bool got_fmt = false;
    while (in.read(tag, 4)) {
        const auto chunk_size = detail::read_le<std::uint32_t>(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            const auto fmt = detail::read_le<std::uint16_t>(in);
            channels = detail::read_le<std::uint16_t>(in);
            out.sample_rate = static_cast<int>(detail::read_le<std::uint32_t>(in));
            detail::read_le<std::uint32_t>(in);
            detail::read_le<std::uint16_t>(in);
            bits = detail::read_le<std::uint16_t>(in);
            if (fmt != 1 || bits != 16) {
                throw ValidationError("only 16-bit PCM wav is supported: " + path);
            }
            in.ignore(chunk_size - 16);
            got_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!got_fmt || channels == 0) throw ValidationError("wav data before fmt: " + path);
            const std::size_t frames = chunk_size / (2 * channels);
            out.channels.assign(channels, std::vector<double>(frames));
            for (std::size_t i = 0; i < frames; ++i) {
                for (int c = 0; c < channels; ++c) {
                    const auto v = detail::read_le<std::int16_t>(in);
                    out.channels[static_cast<std::size_t>(c)][i] = v / 32768.0;
                }
            }
            return out;
        } else {
            in.ignore(chunk_size + (chunk_size & 1));
        }
    }
    throw ValidationError("wav has no data chunk: " + path);
}

// ---------------------------------------------------------------------------
// Feature track file: little-endian binary with a shape header.
//   magic "SVTFEAT\0", u32 version, u64 rows, u32 cols, f64 frame_rate,
//   then rows*cols doubles, row-major.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'S', 'V', 'T', 'F', 'E', 'A', 'T', '\0'};

inline void write_feature_file(const std::string& path, const Eigen::MatrixXd& features,
                               double frame_rate_hz = kVisualRate) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write feature file: " + path);
    out.write(kFeatureMagic, 8);
    detail::write_le<std::uint32_t>(out, 1);
    detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(features.rows()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
    detail::write_le<double>(out, frame_rate_hz);
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            detail::write_le<double>(out, features(r, c));
        }
    }
    if (!out) throw RuntimeFailure("short write to feature file: " + path);
}

inline Eigen::MatrixXd read_feature_file(const std::string& path, double* frame_rate_hz = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open feature file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kFeatureMagic, 8) != 0) {
        throw ValidationError("not a feature file: " + path);
    }
    const auto version = detail::read_le<std::uint32_t>(in);
    const auto rows = detail::read_le<std::uint64_t>(in);
    const auto cols = detail::read_le<std::uint32_t>(in);
    const auto rate = detail::read_le<double>(in);
    if (!in || version != 1) throw ValidationError("unsupported feature file version: " + path);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            out(r, c) = detail::read_le<double>(in);
        }
    }
    if (!in) throw ValidationError("truncated feature file: " + path);
    if (frame_rate_hz) *frame_rate_hz = rate;
    return out;
}

}  // namespace svt
