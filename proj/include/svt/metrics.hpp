// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "svt/notation.hpp"

namespace svt {

/// Matching tolerances. Pitch is compared in cents so cent-resolution
/// references work unchanged (100 cents = 1 semitone).
struct ToleranceProfile {
    double onset_tol = 0.05;        // seconds
    double offset_tol_abs = 0.05;   // seconds
    double offset_tol_ratio = 0.2;  // fraction of reference note duration
    double pitch_tol = 50.0;        // cents

    static ToleranceProfile tolerance1() { return {0.05, 0.05, 0.2, 50.0}; }
    static ToleranceProfile tolerance2() { return {0.10, 0.10, 0.2, 100.0}; }
};

/// A note as seen by the metrics: midi may be fractional.
struct ScoredNote {
    double onset = 0.0;
    double offset = 0.0;
    double midi = 0.0;
};

inline ScoredNote to_scored(const NoteEvent& n) {
    return {n.onset, n.offset, static_cast<double>(n.pitch.midi())};
}

inline std::vector<ScoredNote> to_scored(const NoteSequence& seq) {
    std::vector<ScoredNote> out;
    out.reserve(seq.notes.size());
    for (const auto& n : seq.notes) out.push_back(to_scored(n));
    return out;
}

enum class MatchMode { kOn, kOff, kOnP, kOnPOff };

inline const char* match_mode_name(MatchMode m) {
    switch (m) {
        case MatchMode::kOn: return "COn";
        case MatchMode::kOff: return "COff";
        case MatchMode::kOnP: return "COnP";
        case MatchMode::kOnPOff: return "COnPOff";
    }
    return "?";
}

inline constexpr MatchMode kAllMatchModes[] = {MatchMode::kOn, MatchMode::kOff,
                                               MatchMode::kOnP, MatchMode::kOnPOff};

inline bool note_match(const ScoredNote& ref, const ScoredNote& est, const ToleranceProfile& tol,
                       MatchMode mode) {
    const bool onset_ok = std::abs(ref.onset - est.onset) <= tol.onset_tol;
    const double offset_window =
        std::max(tol.offset_tol_abs, tol.offset_tol_ratio * (ref.offset - ref.onset));
    const bool offset_ok = std::abs(ref.offset - est.offset) <= offset_window;
    const bool pitch_ok = 100.0 * std::abs(ref.midi - est.midi) <= tol.pitch_tol;
    switch (mode) {
        case MatchMode::kOn: return onset_ok;
        case MatchMode::kOff: return offset_ok;
        case MatchMode::kOnP: return onset_ok && pitch_ok;
        case MatchMode::kOnPOff: return onset_ok && pitch_ok && offset_ok;
    }
    return false;
}

inline bool note_match(const NoteEvent& ref, const NoteEvent& est, const ToleranceProfile& tol,
                       MatchMode mode) {
    return note_match(to_scored(ref), to_scored(est), tol, mode);
}

namespace detail {

/// Maximum-cardinality bipartite matching (Hopcroft-Karp).
/// adj[l] lists the right-side vertices compatible with left vertex l.
class BipartiteMatcher {
public:
    BipartiteMatcher(int n_left, int n_right, std::vector<std::vector<int>> adj)
        : n_left_(n_left), n_right_(n_right), adj_(std::move(adj)) {}

    std::vector<std::pair<int, int>> solve() {
        match_l_.assign(n_left_, -1);
        match_r_.assign(n_right_, -1);
        while (bfs()) {
            for (int l = 0; l < n_left_; ++l) {
                if (match_l_[l] == -1) dfs(l);
            }
        }
        std::vector<std::pair<int, int>> pairs;
        for (int l = 0; l < n_left_; ++l) {
            if (match_l_[l] != -1) pairs.emplace_back(l, match_l_[l]);
        }
        return pairs;
    }

private:
    static constexpr int kInf = std::numeric_limits<int>::max();

    bool bfs() {
        std::queue<int> q;
        dist_.assign(n_left_, kInf);
        for (int l = 0; l < n_left_; ++l) {
            if (match_l_[l] == -1) {
                dist_[l] = 0;
                q.push(l);
            }
        }
        bool found = false;
        while (!q.empty()) {
            const int l = q.front();
            q.pop();
            for (int r : adj_[l]) {
                const int nl = match_r_[r];
                if (nl == -1) {
                    found = true;
                } else if (dist_[nl] == kInf) {
                    dist_[nl] = dist_[l] + 1;
                    q.push(nl);
                }
            }
        }
        return found;
    }

    bool dfs(int l) {
        for (int r : adj_[l]) {
            const int nl = match_r_[r];
            if (nl == -1 || (dist_[nl] == dist_[l] + 1 && dfs(nl))) {
                match_l_[l] = r;
                match_r_[r] = l;
                return true;
            }
        }
        dist_[l] = kInf;
        return false;
    }

    int n_left_;
    int n_right_;
    std::vector<std::vector<int>> adj_;
    std::vector<int> match_l_, match_r_, dist_;
};

}  // namespace detail

struct MetricScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<std::pair<int, int>> matches;  // (ref index, est index)
};

struct EvalReport {
    int num_ref = 0;
    int num_est = 0;
    MetricScore on, off, onp, onpoff;

    const MetricScore& by_mode(MatchMode m) const {
        switch (m) {
            case MatchMode::kOn: return on;
            case MatchMode::kOff: return off;
            case MatchMode::kOnP: return onp;
            case MatchMode::kOnPOff: return onpoff;
        }
        return on;
    }
    MetricScore& by_mode(MatchMode m) {
        return const_cast<MetricScore&>(static_cast<const EvalReport&>(*this).by_mode(m));
    }
};

/// Song-level evaluation: one-to-one maximum-cardinality matching under
/// note_match per mode. Empty-vs-empty scores 1.0 by convention; empty
/// against non-empty scores 0.
inline EvalReport evaluate(const std::vector<ScoredNote>& ref, const std::vector<ScoredNote>& est,
                           const ToleranceProfile& tol) {
    EvalReport report;
    report.num_ref = static_cast<int>(ref.size());
    report.num_est = static_cast<int>(est.size());
    for (MatchMode mode : kAllMatchModes) {
        MetricScore& score = report.by_mode(mode);
        if (ref.empty() && est.empty()) {
            score.precision = score.recall = score.f1 = 1.0;
            continue;
        }
        std::vector<std::vector<int>> adj(ref.size());
        for (std::size_t r = 0; r < ref.size(); ++r) {
            for (std::size_t e = 0; e < est.size(); ++e) {
                if (note_match(ref[r], est[e], tol, mode)) adj[r].push_back(static_cast<int>(e));
            }
        }
        detail::BipartiteMatcher matcher(static_cast<int>(ref.size()),
                                         static_cast<int>(est.size()), std::move(adj));
        score.matches = matcher.solve();
        const double m = static_cast<double>(score.matches.size());
        score.precision = est.empty() ? 0.0 : m / static_cast<double>(est.size());
        score.recall = ref.empty() ? 0.0 : m / static_cast<double>(ref.size());
        score.f1 = (score.precision + score.recall > 0.0)
                       ? 2.0 * score.precision * score.recall / (score.precision + score.recall)
                       : 0.0;
    }
    return report;
}

inline EvalReport evaluate(const NoteSequence& ref, const NoteSequence& est,
                           const ToleranceProfile& tol) {
    return evaluate(to_scored(ref), to_scored(est), tol);
}

// ---------------------------------------------------------------------------
// Dataset-level aggregation
// ---------------------------------------------------------------------------

struct AggregateScore {
    double mean_f1 = 0.0;        // unweighted per-song mean (headline number)
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double pooled_f1 = 0.0;      // corpus-pooled counts, for reference
    double pooled_precision = 0.0;
    double pooled_recall = 0.0;
};

struct DatasetReport {
    int num_songs = 0;
    AggregateScore on, off, onp, onpoff;

    const AggregateScore& by_mode(MatchMode m) const {
        switch (m) {
            case MatchMode::kOn: return on;
            case MatchMode::kOff: return off;
            case MatchMode::kOnP: return onp;
            case MatchMode::kOnPOff: return onpoff;
        }
        return on;
    }
    AggregateScore& by_mode(MatchMode m) {
        return const_cast<AggregateScore&>(static_cast<const DatasetReport&>(*this).by_mode(m));
    }
};

inline DatasetReport aggregate(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ValidationError("aggregate: no per-song reports");
    DatasetReport out;
    out.num_songs = static_cast<int>(reports.size());
    for (MatchMode mode : kAllMatchModes) {
        AggregateScore& agg = out.by_mode(mode);
        double sum_f1 = 0.0, sum_p = 0.0, sum_r = 0.0;
        long long matches = 0, total_ref = 0, total_est = 0;
        for (const auto& rep : reports) {
            const MetricScore& s = rep.by_mode(mode);
            sum_f1 += s.f1;
            sum_p += s.precision;
            sum_r += s.recall;
            matches += static_cast<long long>(s.matches.size());
            total_ref += rep.num_ref;
            total_est += rep.num_est;
        }
        const double n = static_cast<double>(reports.size());
        agg.mean_f1 = sum_f1 / n;
        agg.mean_precision = sum_p / n;
        agg.mean_recall = sum_r / n;
        if (total_ref == 0 && total_est == 0) {
            agg.pooled_precision = agg.pooled_recall = agg.pooled_f1 = 1.0;
        } else {
            agg.pooled_precision =
                total_est > 0 ? static_cast<double>(matches) / static_cast<double>(total_est) : 0.0;
            agg.pooled_recall =
                total_ref > 0 ? static_cast<double>(matches) / static_cast<double>(total_ref) : 0.0;
            const double pr = agg.pooled_precision + agg.pooled_recall;
            agg.pooled_f1 = pr > 0.0 ? 2.0 * agg.pooled_precision * agg.pooled_recall / pr : 0.0;
        }
    }
    return out;
}

}  // namespace svt
