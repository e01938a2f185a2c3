// Ground-truth labeling (exact DP segmentation of the objective measure),
// tolerance-based F1, the covering metric, and validation threshold search.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hstcl/common.hpp"

namespace hstcl {

// Exact dynamic-programming segmentation with exactly K breakpoints,
// minimizing within-segment squared deviation from segment means.
// Returned points are first indices of new segments (0-based).
inline std::vector<long> label_offline(std::span<const double> series, size_t K) {
    const size_t T = series.size();
    if (K == 0) return {};
    if (T < K + 1) throw InfeasibleError("label_offline: series too short for K breakpoints");

    std::vector<double> s1(T + 1, 0.0), s2(T + 1, 0.0);
    for (size_t i = 0; i < T; ++i) {
        s1[i + 1] = s1[i] + series[i];
        s2[i + 1] = s2[i] + series[i] * series[i];
    }
    // SSE of [a, b)
    auto cost = [&](size_t a, size_t b) {
        const double n = double(b - a);
        const double sum = s1[b] - s1[a];
        return (s2[b] - s2[a]) - sum * sum / n;
    };

    const double inf = std::numeric_limits<double>::infinity();
    // dp[k][t]: best cost of covering [0, t) with k segments
    std::vector<std::vector<double>> dp(K + 2, std::vector<double>(T + 1, inf));
    std::vector<std::vector<size_t>> arg(K + 2, std::vector<size_t>(T + 1, 0));
    for (size_t t = 1; t <= T; ++t) dp[1][t] = cost(0, t);
    for (size_t k = 2; k <= K + 1; ++k) {
        for (size_t t = k; t <= T; ++t) {
            for (size_t s = k - 1; s < t; ++s) {
                const double c = dp[k - 1][s] + cost(s, t);
                if (c < dp[k][t]) {
                    dp[k][t] = c;
                    arg[k][t] = s;
                }
            }
        }
    }
    std::vector<long> points;
    size_t t = T;
    for (size_t k = K + 1; k >= 2; --k) {
        t = arg[k][t];
        points.push_back(long(t));
    }
    std::sort(points.begin(), points.end());
    return points;
}

struct F1Result {
    long tp = 0, fp = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool recall_defined = true;
};

// TP = truth points matched by some detection within theta; FP = detections
// matching no truth point.
inline F1Result f1_at_tolerance(std::span<const long> truth, std::span<const long> detected,
                                long theta) {
    F1Result r;
    for (long t : truth)
        for (long d : detected)
            if (std::labs(d - t) <= theta) {
                r.tp += 1;
                break;
            }
    for (long d : detected) {
        bool matched = false;
        for (long t : truth)
            if (std::labs(d - t) <= theta) {
                matched = true;
                break;
            }
        if (!matched) r.fp += 1;
    }
    if (truth.empty()) {
        r.recall_defined = false;
        r.recall = std::numeric_limits<double>::quiet_NaN();
        r.precision = (r.tp + r.fp) > 0 ? double(r.tp) / double(r.tp + r.fp) : 0.0;
        r.f1 = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    r.recall = double(r.tp) / double(truth.size());
    r.precision = (r.tp + r.fp) > 0 ? double(r.tp) / double(r.tp + r.fp) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

// Inclusive integer segments [start, end] induced by breakpoints over [0, T).
struct Segment {
    long start = 0, end = 0;
    long len() const { return end - start + 1; }
};

inline std::vector<Segment> segments_from_points(std::span<const long> points, long T) {
    std::vector<Segment> out;
    long prev = 0;
    for (long p : points) {
        if (p <= prev || p >= T) continue; // points must split (0, T)
        out.push_back({prev, p - 1});
        prev = p;
    }
    out.push_back({prev, T - 1});
    return out;
}

inline double jaccard(const Segment& a, const Segment& b) {
    const long inter = std::max(0L, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
    const long uni = a.len() + b.len() - inter;
    return uni > 0 ? double(inter) / double(uni) : 0.0;
}

// (1/T) * sum over truth segments of |I*| * max_j J(I*, I_j).
inline double covering(std::span<const long> truth_points, std::span<const long> detected_points,
                       long T) {
    const auto ts = segments_from_points(truth_points, T);
    const auto ds = segments_from_points(detected_points, T);
    double acc = 0.0;
    for (const auto& s : ts) {
        double best = 0.0;
        for (const auto& d : ds) best = std::max(best, jaccard(s, d));
        acc += double(s.len()) * best;
    }
    return acc / double(T);
}

// Falling-edge detection rule; series index i holds the score at time i+1.
// Emits tau-1 (1-based) whenever s[tau-1] > c and s[tau] <= c.
inline std::vector<long> detect_change_points(std::span<const double> series, double c) {
    if (c < 0.0) throw ConfigError("detect_change_points: threshold must be >= 0");
    std::vector<long> out;
    for (size_t i = 1; i < series.size(); ++i)
        if (series[i - 1] > c && series[i] <= c) out.push_back(long(i)); // 1-based tau-1 == i
    return out;
}

// A detected falling-edge value v (1-based, the last above-threshold step)
// names the same sample as 0-based index v-1; evaluation shifts detections
// into the truth labels' 0-based domain.
inline std::vector<long> shift_detections(std::span<const long> detected) {
    std::vector<long> out(detected.begin(), detected.end());
    for (long& v : out) v -= 1;
    return out;
}

// Model-axis series sampled onto the evaluation axis (value at body steps
// 0, every, 2*every, ...), matching where the objective measure is sampled.
inline std::vector<double> subsample_series(std::span<const double> series, long every) {
    if (every < 1) throw ConfigError("subsample_series: period must be >= 1");
    std::vector<double> out;
    for (size_t t = 0; t < series.size(); t += size_t(every)) out.push_back(series[t]);
    return out;
}

// Counts aggregated per evaluation bucket: bucket e sums the body steps
// (e*every - every, e*every], so bucket e reflects activity just before its
// sample time.
inline std::vector<double> bucket_sum_series(std::span<const double> series, long every) {
    if (every < 1) throw ConfigError("bucket_sum_series: period must be >= 1");
    std::vector<double> out;
    for (size_t e = 0; e * size_t(every) < series.size(); ++e) {
        const size_t hi = e * size_t(every);
        const size_t lo = hi >= size_t(every) - 1 ? hi - size_t(every) + 1 : 0;
        double acc = 0.0;
        for (size_t t = lo; t <= hi; ++t) acc += series[t];
        out.push_back(acc);
    }
    return out;
}

struct ValidationRun {
    std::vector<double> scores; // series the detector thresholds
    std::vector<long> truth;    // 0-based labels on the same axis
};

// Grid search over empirical score quantiles {1%..99%} plus min/max,
// maximizing mean F1 across runs; ties break toward the larger threshold.
inline double search_threshold(std::span<const ValidationRun> runs, long theta) {
    if (runs.empty()) throw ConfigError("search_threshold: need at least one validation run");
    std::vector<double> pool;
    for (const auto& r : runs) pool.insert(pool.end(), r.scores.begin(), r.scores.end());
    if (pool.empty()) throw ConfigError("search_threshold: empty score series");
    std::sort(pool.begin(), pool.end());
    std::vector<double> cands;
    cands.push_back(pool.front());
    for (int q = 1; q <= 99; ++q)
        cands.push_back(pool[std::min(pool.size() - 1, size_t(double(q) / 100.0 * double(pool.size())))]);
    cands.push_back(pool.back());
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

    double best_c = cands.back();
    double best_f1 = -1.0;
    for (double c : cands) {
        double mean_f1 = 0.0;
        for (const auto& r : runs) {
            const auto det = shift_detections(detect_change_points(r.scores, c));
            mean_f1 += f1_at_tolerance(r.truth, det, theta).f1;
        }
        mean_f1 /= double(runs.size());
        if (mean_f1 >= best_f1) { // ties toward larger c (candidates ascend)
            best_f1 = mean_f1;
            best_c = c;
        }
    }
    return best_c;
}

} // namespace hstcl
