#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "svt/labeling.hpp"

using namespace svt;

namespace {

// Independent per-frame scan: for every frame, test each rule directly
// against the raw note list (no shared code with events_to_frames).
void check_targets_against_scan(const NoteSequence& seq, const FrameGrid& grid,
                                const FrameTargets& got) {
    REQUIRE(got.frames() == grid.num_frames);
    for (int t = 0; t < grid.num_frames; ++t) {
        const double lo = t * grid.frame_length;
        const double hi = (t + 1) * grid.frame_length;
        const double center = (t + 0.5) * grid.frame_length;

        bool has_onset = false;
        const NoteEvent* covering = nullptr;
        const NoteEvent* onsetting = nullptr;
        for (const auto& n : seq.notes) {
            if (n.onset >= lo && n.onset < hi) {
                has_onset = true;
                if (!onsetting) onsetting = &n;
            }
            if (center >= n.onset && center < n.offset) covering = &n;
        }
        CHECK(got.onset[t] == (has_onset ? 1 : 0));
        const NoteEvent* label_note = covering ? covering : (has_onset ? onsetting : nullptr);
        if (label_note) {
            const auto cls = midi_to_classes(label_note->pitch);
            CHECK(got.silence[t] == 0);
            CHECK(got.octave[t] == cls.octave_class);
            CHECK(got.name[t] == cls.name_class);
        } else {
            CHECK(got.silence[t] == 1);
            CHECK(got.octave[t] == kSilenceOctaveClass);
            CHECK(got.name[t] == kSilenceNameClass);
        }
    }
}

}  // namespace

TEST_CASE("events_to_frames on a single note") {
    NoteSequence seq;
    seq.duration = 1.0;
    seq.notes = {{0.10, 0.50, Pitch::from_midi(48)}};
    const FrameGrid grid = FrameGrid::uniform(1.0, 0.02);
    REQUIRE(grid.num_frames == 50);

    const FrameTargets t = events_to_frames(seq, grid);
    check_targets_against_scan(seq, grid, t);

    for (int i = 0; i < 50; ++i) {
        CHECK(t.onset[i] == (i == 5 ? 1 : 0));
        const bool in_note = (i >= 5 && i <= 24);
        CHECK(t.silence[i] == (in_note ? 0 : 1));
        CHECK(t.octave[i] == (in_note ? 1 : kSilenceOctaveClass));
        CHECK(t.name[i] == (in_note ? 0 : kSilenceNameClass));
    }
}

TEST_CASE("events_to_frames on an empty sequence") {
    NoteSequence seq;
    seq.duration = 0.5;
    const FrameGrid grid = FrameGrid::uniform(0.5, 0.02);
    const FrameTargets t = events_to_frames(seq, grid);
    for (int i = 0; i < t.frames(); ++i) {
        CHECK(t.onset[i] == 0);
        CHECK(t.silence[i] == 1);
        CHECK(t.octave[i] == 4);
        CHECK(t.name[i] == 12);
    }
}

TEST_CASE("onset exactly at a frame boundary lands in that frame") {
    NoteSequence seq;
    seq.duration = 1.0;
    seq.notes = {{0.20, 0.40, Pitch::from_midi(60)}};
    const FrameGrid grid = FrameGrid::uniform(1.0, 0.02);
    const FrameTargets t = events_to_frames(seq, grid);
    CHECK(t.onset[10] == 1);
    CHECK(t.onset[9] == 0);
}

TEST_CASE("onset frame with uncovered center still carries the note's pitch") {
    // onset at 0.115: frame 5 covers [0.10, 0.12) but its center 0.11 < onset
    NoteSequence seq;
    seq.duration = 1.0;
    seq.notes = {{0.115, 0.50, Pitch::from_midi(50)}};
    const FrameGrid grid = FrameGrid::uniform(1.0, 0.02);
    const FrameTargets t = events_to_frames(seq, grid);
    CHECK(t.onset[5] == 1);
    CHECK(t.silence[5] == 0);
    CHECK(t.octave[5] == 1);
    CHECK(t.name[5] == 2);
    check_targets_against_scan(seq, grid, t);
}

TEST_CASE("within-frame onset collision warns and keeps one mark") {
    NoteSequence seq;
    seq.duration = 1.0;
    seq.notes = {{0.100, 0.105, Pitch::from_midi(60)}, {0.110, 0.300, Pitch::from_midi(62)}};
    const FrameGrid grid = FrameGrid::uniform(1.0, 0.02);
    Warnings warnings;
    const FrameTargets t = events_to_frames(seq, grid, &warnings);
    CHECK(t.onset[5] == 1);
    CHECK(warnings.size() == 1);
    int total = 0;
    for (auto o : t.onset) total += o;
    CHECK(total == 1);
}

TEST_CASE("frame targets invariants hold on random sequences") {
    Rng rng(7);
    for (int iter = 0; iter < 100; ++iter) {
        const NoteSequence seq = test::random_sequence(rng);
        const FrameGrid grid = FrameGrid::uniform(seq.duration, 0.02);
        const FrameTargets t = events_to_frames(seq, grid);
        check_targets_against_scan(seq, grid, t);
        for (int i = 0; i < t.frames(); ++i) {
            const bool silent_classes = (t.octave[i] == 4 && t.name[i] == 12);
            CHECK((t.silence[i] == 1) == silent_classes);
            if (t.onset[i]) CHECK(t.silence[i] == 0);
        }
    }
}

TEST_CASE("onset count equals note count for collision-free sequences") {
    Rng rng(11);
    for (int iter = 0; iter < 100; ++iter) {
        // gaps and durations far above the frame length: no collisions
        test::SequenceGenOptions opt;
        opt.min_note = 0.1;
        opt.min_gap = 0.1;
        const NoteSequence seq = test::random_sequence(rng, opt);
        const FrameGrid grid = FrameGrid::uniform(seq.duration, 0.02);
        const FrameTargets t = events_to_frames(seq, grid);
        int onsets = 0;
        for (auto o : t.onset) onsets += o;
        int in_range = 0;
        for (const auto& n : seq.notes) {
            if (n.onset < grid.duration()) ++in_range;
        }
        CHECK(onsets == in_range);
    }
}

TEST_CASE("segment_song duration rules") {
    const FrameGrid grid{0.02, 0};

    auto lengths_for = [&](double song_seconds) {
        const int frames = static_cast<int>(std::llround(song_seconds / 0.02));
        std::vector<double> out;
        for (const auto& r : plan_segments(frames, grid)) {
            out.push_back(r.frames() * 0.02);
        }
        return out;
    };

    // 17 s: remainder 2 s < 2.5 s merges into the previous segment
    CHECK(lengths_for(17.0) == std::vector<double>{5.0, 5.0, 7.0});
    CHECK(lengths_for(15.0) == std::vector<double>{5.0, 5.0, 5.0});
    // 18 s: remainder 3 s >= 2.5 s stands alone
    CHECK(lengths_for(18.0) == std::vector<double>{5.0, 5.0, 5.0, 3.0});

    Warnings warnings;
    const auto short_song = plan_segments(100, grid, 5.0, &warnings);
    REQUIRE(short_song.size() == 1);
    CHECK(short_song[0].frames() == 100);
    CHECK(warnings.size() == 1);
}

TEST_CASE("segmentation conserves frames and never overlaps") {
    Rng rng(23);
    const FrameGrid grid{0.02, 0};
    for (int iter = 0; iter < 300; ++iter) {
        const int total = static_cast<int>(rng.uniform_int(125, 40000));
        const auto ranges = plan_segments(total, grid);
        REQUIRE(!ranges.empty());
        int covered = 0;
        for (std::size_t i = 0; i < ranges.size(); ++i) {
            CHECK(ranges[i].end > ranges[i].begin);
            covered += ranges[i].frames();
            if (i > 0) CHECK(ranges[i].begin == ranges[i - 1].end);
            const double sec = ranges[i].frames() * 0.02;
            if (i + 1 < ranges.size()) {
                CHECK(sec == Catch::Approx(5.0));
            } else {
                CHECK(sec >= 2.5 - 1e-9);
                CHECK(sec <= 7.5 + 1e-9);
            }
        }
        CHECK(ranges.front().begin == 0);
        CHECK(covered == total);
    }
}

TEST_CASE("segment targets are restrictions of the song labels") {
    Rng rng(3);
    const NoteSequence seq = test::random_sequence(rng, {.duration = 23.0});
    const FrameGrid grid = FrameGrid::uniform(seq.duration, 0.02);
    const FrameTargets song = events_to_frames(seq, grid);
    const auto segments = segment_song(song, grid);
    for (const auto& seg : segments) {
        for (int i = 0; i < seg.targets.frames(); ++i) {
            CHECK(seg.targets.onset[i] == song.onset[seg.range.begin + i]);
            CHECK(seg.targets.silence[i] == song.silence[seg.range.begin + i]);
            CHECK(seg.targets.octave[i] == song.octave[seg.range.begin + i]);
            CHECK(seg.targets.name[i] == song.name[seg.range.begin + i]);
        }
    }
}

TEST_CASE("collate pads to the longest item and builds the mask") {
    BatchItem a, b;
    a.targets.resize(250);
    b.targets.resize(375);
    a.audio.assign(250 * 320, 0.5);
    b.audio.assign(375 * 320, 0.25);

    const Batch batch = collate({a, b});
    CHECK(batch.max_frames == 375);
    REQUIRE(batch.mask.size() == 2);
    int ones = 0;
    for (int t = 0; t < 375; ++t) ones += batch.mask[0][t];
    CHECK(ones == 250);
    for (int t = 0; t < 250; ++t) REQUIRE(batch.mask[0][t] == 1);
    for (int t = 250; t < 375; ++t) {
        REQUIRE(batch.mask[0][t] == 0);
        CHECK(batch.targets[0].onset[t] == 0);
        CHECK(batch.targets[0].silence[t] == 0);
    }
    for (int t = 0; t < 375; ++t) REQUIRE(batch.mask[1][t] == 1);
    CHECK(batch.audio[0].size() == batch.audio[1].size());
    CHECK(batch.audio[0][250 * 320] == 0.0);  // zero padding
}

TEST_CASE("collate: single item and equal lengths give all-ones masks") {
    BatchItem a;
    a.targets.resize(100);
    const Batch single = collate({a});
    for (int t = 0; t < 100; ++t) REQUIRE(single.mask[0][t] == 1);

    BatchItem b;
    b.targets.resize(100);
    const Batch equal = collate({a, b});
    CHECK(equal.max_frames == 100);
    for (const auto& row : equal.mask) {
        for (int t = 0; t < 100; ++t) REQUIRE(row[t] == 1);
    }

    CHECK_THROWS_AS(collate({}), ValidationError);
}

TEST_CASE("manifest round trip and validation") {
    const auto dir = std::filesystem::temp_directory_path() / "svt_labeling_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "manifest.csv").string();

    std::vector<ManifestEntry> entries = {
        {"song_000", "train", "audio/song_000.wav", "visual/song_000.feat", "labels/song_000.json"},
        {"song_001", "test", "audio/song_001.wav", "", "labels/song_001.json"},
    };
    write_manifest(path, entries);
    const auto back = read_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].song_id == "song_000");
    CHECK(back[1].video_feature_path.empty());
    CHECK(back[1].split == "test");

    {
        std::ofstream bad(path);
        bad << "song_id,split,audio_path,video_feature_path,label_path\n";
        bad << "s,weird,a.wav,,l.json\n";
    }
    CHECK_THROWS_AS(read_manifest(path), ValidationError);
}
