#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "svt/metrics.hpp"

using namespace svt;

namespace {

std::vector<ScoredNote> random_cluster(Rng& rng, int max_notes) {
    // Onsets packed into a small window so tolerance windows overlap and the
    // matching is genuinely ambiguous.
    const int n = static_cast<int>(rng.uniform_int(0, max_notes));
    std::vector<ScoredNote> notes;
    for (int i = 0; i < n; ++i) {
        const double onset = rng.uniform(0.0, 1.2);
        const double dur = rng.uniform(0.05, 0.5);
        const double midi = static_cast<double>(rng.uniform_int(58, 63));
        notes.push_back({onset, onset + dur, midi});
    }
    return notes;
}

}  // namespace

TEST_CASE("note_match tolerance presets") {
    const ScoredNote ref{1.00, 1.50, 60.0};
    const auto tol1 = ToleranceProfile::tolerance1();
    const auto tol2 = ToleranceProfile::tolerance2();

    for (MatchMode mode : kAllMatchModes) {
        CHECK(note_match(ref, ref, tol1, mode));
    }

    ScoredNote est = ref;
    est.onset = 1.06;  // 60 ms off
    CHECK_FALSE(note_match(ref, est, tol1, MatchMode::kOn));
    CHECK(note_match(ref, est, tol2, MatchMode::kOn));

    // offset window: max(50 ms, 0.2 * 0.5 s) = 100 ms
    est = ref;
    est.offset = 1.59;
    CHECK(note_match(ref, est, tol1, MatchMode::kOff));
    est.offset = 1.61;
    CHECK_FALSE(note_match(ref, est, tol1, MatchMode::kOff));

    // pitch in cents: half a semitone passes tolerance 1
    est = ref;
    est.midi = 60.5;
    CHECK(note_match(ref, est, tol1, MatchMode::kOnP));
    est.midi = 60.6;
    CHECK_FALSE(note_match(ref, est, tol1, MatchMode::kOnP));
    CHECK(note_match(ref, est, tol2, MatchMode::kOnP));
}

TEST_CASE("evaluate on identical sequences is perfect") {
    Rng rng(5);
    for (int iter = 0; iter < 20; ++iter) {
        const NoteSequence seq = test::random_sequence(rng);
        const EvalReport r = evaluate(seq, seq, ToleranceProfile::tolerance1());
        for (MatchMode mode : kAllMatchModes) {
            CHECK(r.by_mode(mode).f1 == 1.0);
            CHECK(r.by_mode(mode).precision == 1.0);
            CHECK(r.by_mode(mode).recall == 1.0);
        }
    }
}

TEST_CASE("evaluate partial match arithmetic") {
    NoteSequence ref;
    ref.duration = 3.0;
    ref.notes = {{0.1, 0.5, Pitch::from_midi(60)}, {1.0, 1.5, Pitch::from_midi(62)}};
    NoteSequence est;
    est.duration = 3.0;
    est.notes = {{0.1, 0.5, Pitch::from_midi(60)}};

    const EvalReport r = evaluate(ref, est, ToleranceProfile::tolerance1());
    CHECK(r.on.precision == 1.0);
    CHECK(r.on.recall == 0.5);
    CHECK(r.on.f1 == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("empty cases") {
    const ToleranceProfile tol = ToleranceProfile::tolerance1();
    const EvalReport both = evaluate(std::vector<ScoredNote>{}, std::vector<ScoredNote>{}, tol);
    CHECK(both.on.f1 == 1.0);

    const std::vector<ScoredNote> one = {{0.1, 0.4, 60.0}};
    const EvalReport miss = evaluate(one, {}, tol);
    CHECK(miss.on.f1 == 0.0);
    CHECK(miss.on.recall == 0.0);
    const EvalReport spurious = evaluate({}, one, tol);
    CHECK(spurious.on.f1 == 0.0);
    CHECK(spurious.on.precision == 0.0);
}

TEST_CASE("bipartite matching equals the exhaustive oracle") {
    Rng rng(1234);
    const ToleranceProfile tol = ToleranceProfile::tolerance1();
    for (int iter = 0; iter < 1000; ++iter) {
        const auto ref = random_cluster(rng, 6);
        const auto est = random_cluster(rng, 6);
        const EvalReport r = evaluate(ref, est, tol);
        for (MatchMode mode : kAllMatchModes) {
            const int oracle = test::brute_force_max_matching(ref, est, tol, mode);
            REQUIRE(static_cast<int>(r.by_mode(mode).matches.size()) == oracle);
            CHECK(r.by_mode(mode).matches.size() <= std::min(ref.size(), est.size()));
        }
    }
}

TEST_CASE("matched pairs are one-to-one and compatible") {
    Rng rng(99);
    const ToleranceProfile tol = ToleranceProfile::tolerance1();
    for (int iter = 0; iter < 100; ++iter) {
        const auto ref = random_cluster(rng, 10);
        const auto est = random_cluster(rng, 10);
        const EvalReport r = evaluate(ref, est, tol);
        for (MatchMode mode : kAllMatchModes) {
            std::vector<char> used_ref(ref.size(), 0), used_est(est.size(), 0);
            for (const auto& [ri, ei] : r.by_mode(mode).matches) {
                CHECK(note_match(ref[ri], est[ei], tol, mode));
                CHECK(!used_ref[ri]);
                CHECK(!used_est[ei]);
                used_ref[ri] = 1;
                used_est[ei] = 1;
            }
        }
    }
}

TEST_CASE("enlarging tolerances never decreases F1") {
    Rng rng(31337);
    for (int iter = 0; iter < 200; ++iter) {
        const auto ref = random_cluster(rng, 6);
        const auto est = random_cluster(rng, 6);
        ToleranceProfile small = ToleranceProfile::tolerance1();
        ToleranceProfile big = small;
        big.onset_tol *= rng.uniform(1.0, 4.0);
        big.offset_tol_abs *= rng.uniform(1.0, 4.0);
        big.offset_tol_ratio *= rng.uniform(1.0, 2.0);
        big.pitch_tol *= rng.uniform(1.0, 4.0);
        const EvalReport rs = evaluate(ref, est, small);
        const EvalReport rb = evaluate(ref, est, big);
        for (MatchMode mode : kAllMatchModes) {
            CHECK(rb.by_mode(mode).f1 >= rs.by_mode(mode).f1 - 1e-12);
        }
    }
}

TEST_CASE("aggregate means per-song F1") {
    EvalReport a, b, c;
    for (MatchMode m : kAllMatchModes) {
        a.by_mode(m).f1 = 0.9;
        b.by_mode(m).f1 = 0.8;
        c.by_mode(m).f1 = 0.7;
    }

    const DatasetReport single = aggregate({a});
    CHECK(single.on.mean_f1 == Catch::Approx(0.9));

    EvalReport perfect, zero;
    for (MatchMode m : kAllMatchModes) {
        perfect.by_mode(m).f1 = 1.0;
        zero.by_mode(m).f1 = 0.0;
    }
    CHECK(aggregate({perfect, zero}).on.mean_f1 == Catch::Approx(0.5));

    CHECK(aggregate({a, b, c}).onpoff.mean_f1 == Catch::Approx(0.8));

    CHECK_THROWS_AS(aggregate({}), ValidationError);
}

TEST_CASE("fractional midi references evaluate in cents") {
    // cent-resolution reference 30 cents away from an integer estimate
    const std::vector<ScoredNote> ref = {{0.5, 1.0, 60.3}};
    const std::vector<ScoredNote> est = {{0.5, 1.0, 60.0}};
    const EvalReport r1 = evaluate(ref, est, ToleranceProfile::tolerance1());
    CHECK(r1.onp.f1 == 1.0);

    const std::vector<ScoredNote> far = {{0.5, 1.0, 60.8}};
    const EvalReport r2 = evaluate(far, est, ToleranceProfile::tolerance1());
    CHECK(r2.onp.f1 == 0.0);
    CHECK(r2.on.f1 == 1.0);
}
