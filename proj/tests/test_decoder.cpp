#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "oracles.hpp"
#include "svt/decoder.hpp"
#include "svt/metrics.hpp"

using namespace svt;

namespace {

FrameLogits random_logits(Rng& rng, int frames) {
    FrameLogits l;
    l.resize(frames);
    for (int t = 0; t < frames; ++t) {
        l.onset[t] = rng.gaussian() * 2.0;
        l.silence[t] = rng.gaussian() * 2.0;
        for (auto& v : l.octave[t]) v = rng.gaussian();
        for (auto& v : l.name[t]) v = rng.gaussian();
    }
    return l;
}

}  // namespace

TEST_CASE("frame_pitch combines argmax classes") {
    std::array<double, kOctaveClasses> oct{};
    std::array<double, kNameClasses> name{};
    oct.fill(-5.0);
    name.fill(-5.0);
    oct[1] = 5.0;
    name[0] = 5.0;
    CHECK(frame_pitch(oct, name).midi() == 48);

    oct.fill(-5.0);
    name.fill(-5.0);
    oct[4] = 5.0;
    name[12] = 5.0;
    CHECK(frame_pitch(oct, name).is_silence());

    // mixed: octave says silence, name says a pitch -> silence
    name[12] = -5.0;
    name[3] = 5.0;
    CHECK(frame_pitch(oct, name).is_silence());
}

TEST_CASE("decode hand-computed example") {
    // onset spike at t=10, first silence at t'=25, frames 10..24 all midi 60
    FrameLogits l;
    l.resize(50);
    for (int t = 0; t < 50; ++t) {
        l.onset[t] = -8.0;
        const bool in_note = (t >= 10 && t < 25);
        l.silence[t] = in_note ? -8.0 : 8.0;
        for (int c = 0; c < kOctaveClasses; ++c) l.octave[t][c] = -8.0;
        for (int c = 0; c < kNameClasses; ++c) l.name[t][c] = -8.0;
        const auto cls = in_note ? midi_to_classes(Pitch::from_midi(60))
                                 : PitchClasses{kSilenceOctaveClass, kSilenceNameClass};
        l.octave[t][cls.octave_class] = 8.0;
        l.name[t][cls.name_class] = 8.0;
    }
    l.onset[10] = 8.0;

    const FrameGrid grid{0.02, 50};
    const NoteSequence seq = decode(l, grid);
    REQUIRE(seq.notes.size() == 1);
    CHECK(seq.notes[0].onset == Catch::Approx(0.20));
    CHECK(seq.notes[0].offset == Catch::Approx(0.50));
    CHECK(seq.notes[0].pitch.midi() == 60);
}

TEST_CASE("decode of all-silence logits is empty") {
    FrameLogits l;
    l.resize(40);
    for (int t = 0; t < 40; ++t) {
        l.onset[t] = -8.0;
        l.silence[t] = 8.0;
        l.octave[t][kSilenceOctaveClass] = 8.0;
        l.name[t][kSilenceNameClass] = 8.0;
    }
    CHECK(decode(l, FrameGrid{0.02, 40}).notes.empty());
    CHECK(decode(FrameLogits{}, FrameGrid{0.02, 0}).notes.empty());
}

TEST_CASE("onset plateaus fire once, at their first frame") {
    FrameLogits l;
    l.resize(8);
    for (int t = 0; t < 8; ++t) {
        l.onset[t] = -5.0;
        l.silence[t] = -5.0;
        l.octave[t][1] = 5.0;
        l.name[t][0] = 5.0;
    }
    l.onset[2] = 2.0;
    l.onset[3] = 2.0;
    const NoteSequence seq = decode(l, FrameGrid{0.02, 8});
    REQUIRE(seq.notes.size() == 1);
    CHECK(seq.notes[0].onset == Catch::Approx(0.04));

    // a constant onset track has no local maximum
    for (int t = 0; t < 8; ++t) l.onset[t] = 2.0;
    CHECK(decode(l, FrameGrid{0.02, 8}).notes.empty());
}

TEST_CASE("candidate spanning only silence pitches is dropped") {
    FrameLogits l;
    l.resize(10);
    for (int t = 0; t < 10; ++t) {
        l.onset[t] = -8.0;
        l.silence[t] = -8.0;
        l.octave[t][kSilenceOctaveClass] = 8.0;
        l.name[t][kSilenceNameClass] = 8.0;
    }
    l.onset[3] = 8.0;
    CHECK(decode(l, FrameGrid{0.02, 10}).notes.empty());
}

TEST_CASE("close_on_next_onset changes the mode span") {
    // onsets at 5 and 10; no silence until frame 20
    FrameLogits l;
    l.resize(25);
    for (int t = 0; t < 25; ++t) {
        l.onset[t] = -8.0;
        l.silence[t] = (t >= 20) ? 8.0 : -8.0;
        const int midi = (t < 10) ? 60 : 72;
        const auto cls = midi_to_classes(Pitch::from_midi(midi));
        for (int c = 0; c < kOctaveClasses; ++c) l.octave[t][c] = -8.0;
        for (int c = 0; c < kNameClasses; ++c) l.name[t][c] = -8.0;
        l.octave[t][cls.octave_class] = 8.0;
        l.name[t][cls.name_class] = 8.0;
    }
    l.onset[5] = 8.0;
    l.onset[10] = 8.0;
    const FrameGrid grid{0.02, 25};

    DecoderConfig off{};
    const NoteSequence a = decode(l, grid, off);
    REQUIRE(a.notes.size() == 2);
    // truncated at the second onset; mode over [5, 20) is dominated by 72
    CHECK(a.notes[0].offset == Catch::Approx(0.20));
    CHECK(a.notes[0].pitch.midi() == 72);

    DecoderConfig on{};
    on.close_on_next_onset = true;
    const NoteSequence b = decode(l, grid, on);
    REQUIRE(b.notes.size() == 2);
    CHECK(b.notes[0].offset == Catch::Approx(0.20));
    CHECK(b.notes[0].pitch.midi() == 60);  // mode over [5, 10) only
    CHECK(b.notes[1].pitch.midi() == 72);
}

TEST_CASE("round trip through ideal logits recovers every note") {
    Rng rng(101);
    const double delta = 0.02;
    for (int iter = 0; iter < 50; ++iter) {
        test::SequenceGenOptions opt;
        opt.min_note = 2 * delta + 0.001;
        opt.min_gap = 2 * delta + 0.001;
        const NoteSequence seq = test::random_sequence(rng, opt);
        const FrameGrid grid = FrameGrid::uniform(seq.duration, delta);
        const FrameTargets targets = events_to_frames(seq, grid);
        const NoteSequence back = decode(ideal_logits(targets), grid);

        std::size_t expected = 0;
        for (const auto& n : seq.notes) {
            if (n.onset < grid.duration()) ++expected;
        }
        REQUIRE(back.notes.size() == expected);
        for (std::size_t i = 0; i < back.notes.size(); ++i) {
            CHECK(std::abs(back.notes[i].onset - seq.notes[i].onset) <= delta + 1e-12);
            CHECK(std::abs(back.notes[i].offset - std::min(seq.notes[i].offset, grid.duration())) <=
                  delta + 1e-12);
            CHECK(back.notes[i].pitch == seq.notes[i].pitch);
        }
    }
}

TEST_CASE("decoded sequences always satisfy the ordering invariants") {
    Rng rng(55);
    for (int iter = 0; iter < 200; ++iter) {
        const int frames = static_cast<int>(rng.uniform_int(0, 400));
        const FrameLogits l = random_logits(rng, frames);
        const FrameGrid grid{0.02, frames};
        const NoteSequence seq = decode(l, grid);
        CHECK(validate_sequence(seq).empty());
    }
}

TEST_CASE("raising the onset threshold never adds notes") {
    Rng rng(77);
    for (int iter = 0; iter < 100; ++iter) {
        const FrameLogits l = random_logits(rng, 300);
        const FrameGrid grid{0.02, 300};
        std::size_t prev = std::numeric_limits<std::size_t>::max();
        for (double thr : {0.3, 0.45, 0.6, 0.8}) {
            DecoderConfig cfg;
            cfg.onset_threshold = thr;
            const std::size_t n = decode(l, grid, cfg).notes.size();
            CHECK(n <= prev);
            prev = n;
        }
    }
}

TEST_CASE("decode is deterministic") {
    Rng rng(9001);
    const FrameLogits l = random_logits(rng, 500);
    const FrameGrid grid{0.02, 500};
    const NoteSequence a = decode(l, grid);
    const NoteSequence b = decode(l, grid);
    REQUIRE(a.notes.size() == b.notes.size());
    for (std::size_t i = 0; i < a.notes.size(); ++i) {
        CHECK(a.notes[i].onset == b.notes[i].onset);
        CHECK(a.notes[i].offset == b.notes[i].offset);
        CHECK(a.notes[i].pitch == b.notes[i].pitch);
    }
}

TEST_CASE("logits file round trip") {
    Rng rng(4242);
    const FrameLogits l = random_logits(rng, 123);
    const FrameGrid grid{0.02, 123};
    const auto dir = std::filesystem::temp_directory_path() / "svt_decoder_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "logits.bin").string();
    write_logits_file(path, l, grid);

    FrameGrid grid_back;
    const FrameLogits back = read_logits_file(path, &grid_back);
    CHECK(grid_back.num_frames == 123);
    CHECK(grid_back.frame_length == 0.02);
    REQUIRE(back.frames() == l.frames());
    for (int t = 0; t < l.frames(); ++t) {
        REQUIRE(back.onset[t] == l.onset[t]);
        REQUIRE(back.silence[t] == l.silence[t]);
        REQUIRE(back.octave[t] == l.octave[t]);
        REQUIRE(back.name[t] == l.name[t]);
    }
}
