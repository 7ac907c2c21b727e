#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "svt/notation.hpp"

using namespace svt;

TEST_CASE("midi_to_classes matches the octave/name split") {
    // C3 (MIDI 48): octave 3 -> class 1, name C -> class 0
    auto c3 = midi_to_classes(Pitch::from_midi(48));
    CHECK(c3.octave_class == 1);
    CHECK(c3.name_class == 0);

    // B5 (MIDI 83): top of the range
    auto b5 = midi_to_classes(Pitch::from_midi(83));
    CHECK(b5.octave_class == 3);
    CHECK(b5.name_class == 11);

    auto sil = midi_to_classes(Pitch::silence());
    CHECK(sil.octave_class == 4);
    CHECK(sil.name_class == 12);
}

TEST_CASE("classes_to_midi inverts and resolves mixed silence") {
    CHECK(classes_to_midi(1, 0).midi() == 48);
    CHECK(classes_to_midi(4, 12).is_silence());
    // A2: cross-checked by enumeration below
    CHECK(classes_to_midi(0, 9).midi() == 45);
    // exactly one silence class -> silence, never an error
    CHECK(classes_to_midi(4, 3).is_silence());
    CHECK(classes_to_midi(2, 12).is_silence());
    CHECK_THROWS_AS(classes_to_midi(5, 0), ValidationError);
    CHECK_THROWS_AS(classes_to_midi(0, 13), ValidationError);
}

TEST_CASE("pitch class round trip over the full range") {
    // independent table: midi = 36 + 12*octave_class + name_class
    for (int oct = 0; oct < 4; ++oct) {
        for (int name = 0; name < 12; ++name) {
            const int expect = 36 + 12 * oct + name;
            const Pitch p = Pitch::from_midi(expect);
            const auto cls = midi_to_classes(p);
            CHECK(cls.octave_class == oct);
            CHECK(cls.name_class == name);
            CHECK(classes_to_midi(cls.octave_class, cls.name_class) == p);
        }
    }
    CHECK(classes_to_midi(4, 12) == Pitch::silence());
}

TEST_CASE("midi_to_hz endpoints and reference tuning") {
    CHECK(midi_to_hz(36) == Catch::Approx(65.41).margin(0.01));
    CHECK(midi_to_hz(69) == Catch::Approx(440.0).margin(1e-9));
    CHECK(midi_to_hz(83) == Catch::Approx(987.77).margin(0.01));
    CHECK_THROWS_AS(midi_to_hz(35), ValidationError);
    CHECK_THROWS_AS(midi_to_hz(84), ValidationError);
}

TEST_CASE("midi_to_hz is strictly increasing by a semitone factor") {
    const double semitone = std::pow(2.0, 1.0 / 12.0);
    for (int m = 36; m < 83; ++m) {
        CHECK(midi_to_hz(m + 1) > midi_to_hz(m));
        CHECK(midi_to_hz(m + 1) / midi_to_hz(m) == Catch::Approx(semitone).epsilon(1e-12));
    }
}

TEST_CASE("validate_sequence flags the planted violations") {
    NoteSequence ok;
    ok.duration = 2.0;
    ok.notes = {{0.1, 0.4, Pitch::from_midi(60)},
                {0.4, 0.8, Pitch::from_midi(62)},
                {1.0, 1.5, Pitch::from_midi(64)}};
    CHECK(validate_sequence(ok).empty());

    NoteSequence overlap = ok;
    overlap.notes[1].onset = 0.35;  // f_1 > o_2
    auto v = validate_sequence(overlap);
    REQUIRE(v.size() == 1);
    CHECK(v[0].index == 1);
    CHECK(v[0].rule == "overlap with previous note");

    NoteSequence degenerate = ok;
    degenerate.notes[0].offset = degenerate.notes[0].onset;
    v = validate_sequence(degenerate);
    REQUIRE(v.size() == 1);
    CHECK(v[0].index == 0);
    CHECK(v[0].rule == "non-positive duration");
}

TEST_CASE("validate_sequence accepts exactly the ordered sequences") {
    Rng rng(41);
    for (int iter = 0; iter < 200; ++iter) {
        NoteSequence seq = test::random_sequence(rng);
        if (seq.notes.empty()) continue;
        REQUIRE(validate_sequence(seq).empty());

        // plant one violation and expect at least one finding
        NoteSequence bad = seq;
        const auto idx = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(bad.notes.size()) - 1));
        switch (rng.uniform_int(0, 2)) {
            case 0:
                bad.notes[idx].offset = bad.notes[idx].onset - 0.01;
                break;
            case 1:
                if (idx + 1 < bad.notes.size()) {
                    bad.notes[idx].offset = bad.notes[idx + 1].onset + 0.05;
                } else {
                    bad.notes[idx].offset = bad.duration + 1.0;
                }
                break;
            default:
                bad.notes[idx].onset = -0.5;
                break;
        }
        CHECK(!validate_sequence(bad).empty());
    }
}

TEST_CASE("label file round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "svt_notation_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "labels.json").string();

    NoteSequence seq;
    seq.duration = 1.5;
    seq.notes = {{0.1, 0.5, Pitch::from_midi(48)}, {0.6, 1.5, Pitch::from_midi(72)}};
    write_label_file(path, seq);

    const NoteSequence back = read_label_file(path);
    REQUIRE(back.notes.size() == 2);
    CHECK(back.notes[0].onset == Catch::Approx(0.1));
    CHECK(back.notes[0].offset == Catch::Approx(0.5));
    CHECK(back.notes[0].pitch.midi() == 48);
    CHECK(back.notes[1].pitch.midi() == 72);
}

TEST_CASE("label loader rejects out-of-range midi unless overridden") {
    const auto dir = std::filesystem::temp_directory_path() / "svt_notation_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "oor.json").string();
    {
        std::ofstream out(path);
        out << "[[0.1, 0.5, 30], [0.6, 1.0, 60]]\n";
    }
    CHECK_THROWS_AS(read_label_file(path), ValidationError);

    Warnings warnings;
    const NoteSequence seq = read_label_file(path, {.allow_out_of_range = true}, &warnings);
    REQUIRE(seq.notes.size() == 1);
    CHECK(seq.notes[0].pitch.midi() == 60);
    CHECK(warnings.size() == 1);
}
