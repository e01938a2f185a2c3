// DETect baseline: per-agent linear relationship models between internal and
// external variables, two-sided CUSUM on the slope p-values, pairwise belief
// collaboration, and global feedback counting.
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "hstcl/common.hpp"
#include "hstcl/dyngraph.hpp"

namespace hstcl {

// ---- Student-t tail via the regularized incomplete beta function ----

namespace detail {

inline double betacf(double a, double b, double x) {
    // Lentz continued fraction for the incomplete beta function
    const int maxit = 200;
    const double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= maxit; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double ibeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

} // namespace detail

// two-sided p-value of a t statistic with df degrees of freedom
inline double t_test_pvalue(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    return detail::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

// ---- variables ----

// Per-step internal (speed, heading) and external (mean neighbor heading,
// mean neighbor speed, nearest-neighbor distance, neighbor count) series for
// one agent over a window. With no neighbors at a step, the externals carry
// sentinels: means = the agent's own values, distance = delta, count = 0.
struct VariableWindow {
    size_t len = 0;
    std::vector<double> internal_vars; // len x 2
    std::vector<double> external_vars; // len x 4
};

inline VariableWindow compute_variables(const WindowView& win, size_t j, double delta) {
    if (win.w < 3) throw ConfigError("compute_variables: window must be >= 3");
    VariableWindow out;
    out.len = win.w;
    out.internal_vars.resize(win.w * 2);
    out.external_vars.resize(win.w * 4);
    for (size_t s = 0; s < win.w; ++s) {
        const long t = win.t_first() + long(s);
        const auto x = win.x(t, j);
        const double speed = std::hypot(x[2], x[3]);
        const double heading = std::atan2(x[3], x[2]);
        out.internal_vars[s * 2] = speed;
        out.internal_vars[s * 2 + 1] = heading;
        const auto& nbrs = win.neighbors(t, j);
        if (nbrs.empty()) {
            out.external_vars[s * 4] = heading;
            out.external_vars[s * 4 + 1] = speed;
            out.external_vars[s * 4 + 2] = delta;
            out.external_vars[s * 4 + 3] = 0.0;
        } else {
            double mh = 0.0, ms = 0.0, nearest = 1e300;
            for (int i : nbrs) {
                const auto xi = win.x(t, size_t(i));
                mh += std::atan2(xi[3], xi[2]);
                ms += std::hypot(xi[2], xi[3]);
                nearest = std::min(nearest, std::hypot(xi[0] - x[0], xi[1] - x[1]));
            }
            out.external_vars[s * 4] = mh / double(nbrs.size());
            out.external_vars[s * 4 + 1] = ms / double(nbrs.size());
            out.external_vars[s * 4 + 2] = nearest;
            out.external_vars[s * 4 + 3] = double(nbrs.size());
        }
    }
    return out;
}

// ---- relationship modeling ----

// OLS slope with a two-sided t-test p-value; zero variance on either side
// means no relation is detectable (p = 1).
inline double ols_slope_pvalue(std::span<const double> x, std::span<const double> y) {
    const size_t n = x.size();
    if (n < 3 || n != y.size()) throw ConfigError("ols_slope_pvalue: need n >= 3 paired samples");
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double scale = std::max(1.0, std::max(sxx, syy));
    if (sxx <= 1e-14 * scale || syy <= 1e-14 * scale) return 1.0;
    const double slope = sxy / sxx;
    const double rss = syy - slope * sxy;
    const double df = double(n - 2);
    const double var = std::max(rss, 0.0) / df;
    if (var <= 0.0) return 0.0; // perfect fit
    const double t = slope / std::sqrt(var / sxx);
    return t_test_pvalue(t, df);
}

// p-values for every (internal, external) pair, row-major 2 x 4.
inline std::array<double, 8> fit_relationship(const VariableWindow& v) {
    std::array<double, 8> out{};
    std::vector<double> xs(v.len), ys(v.len);
    for (size_t ii = 0; ii < 2; ++ii)
        for (size_t ee = 0; ee < 4; ++ee) {
            for (size_t s = 0; s < v.len; ++s) {
                ys[s] = v.internal_vars[s * 2 + ii];
                xs[s] = v.external_vars[s * 4 + ee];
            }
            out[ii * 4 + ee] = ols_slope_pvalue(xs, ys);
        }
    return out;
}

// ---- CUSUM ----

// Two-sided CUSUM against a running reference mean; both statistics and the
// reference restart after a flag.
struct CusumState {
    double drift = 0.05;
    double threshold = 0.5;
    double g_pos = 0.0, g_neg = 0.0;
    double ref_sum = 0.0;
    long ref_n = 0;

    bool update(double x) {
        if (!std::isfinite(threshold)) { // infinite threshold never flags
            ref_sum += x;
            ref_n += 1;
            return false;
        }
        if (ref_n == 0) {
            ref_sum = x;
            ref_n = 1;
            return false;
        }
        const double mu = ref_sum / double(ref_n);
        g_pos = std::max(0.0, g_pos + (x - mu - drift));
        g_neg = std::max(0.0, g_neg + (mu - x - drift));
        const bool flag = g_pos > threshold || g_neg > threshold;
        if (flag) {
            g_pos = g_neg = 0.0;
            ref_sum = 0.0;
            ref_n = 0;
        } else {
            ref_sum += x;
            ref_n += 1;
        }
        return flag;
    }
};

// Change flags for a whole p-value series.
inline std::vector<uint8_t> cusum_detect(std::span<const double> series, double drift,
                                         double threshold) {
    CusumState st;
    st.drift = drift;
    st.threshold = threshold;
    std::vector<uint8_t> flags(series.size(), 0);
    for (size_t i = 0; i < series.size(); ++i) flags[i] = st.update(series[i]) ? 1 : 0;
    return flags;
}

// ---- collaboration ----

// Each agent averages its belief with one uniformly random neighbor
// (synchronous reads), then mixes in its own binary change flag:
// b' = (1 - mix) * avg + mix * flag. Isolated agents skip the averaging.
inline std::vector<double> collaborate(std::span<const double> beliefs,
                                       std::span<const uint8_t> flags,
                                       const std::vector<std::vector<int>>& nbrs, double mix,
                                       Rng& rng) {
    if (mix < 0.0 || mix > 1.0) throw ConfigError("collaborate: mix must lie in [0, 1]");
    std::vector<double> out(beliefs.size());
    for (size_t j = 0; j < beliefs.size(); ++j) {
        double b = beliefs[j];
        if (!nbrs[j].empty()) {
            const int r = nbrs[j][rng.index(nbrs[j].size())];
            b = 0.5 * (b + beliefs[size_t(r)]);
        }
        out[j] = (1.0 - mix) * b + mix * double(flags[j]);
    }
    return out;
}

// ---- global stage ----

// Flags steps whose count exceeds rolling mean + z * rolling std over the
// trailing `window` samples (current sample excluded); consecutive flags
// merge to the last step of each excursion, emitted 1-based like the
// falling-edge rule.
inline std::vector<long> detect_global_baseline(std::span<const double> counts, size_t window,
                                                double z) {
    std::vector<uint8_t> flagged(counts.size(), 0);
    if (std::isfinite(z)) {
        for (size_t t = 1; t < counts.size(); ++t) {
            const size_t lo = t > window ? t - window : 0;
            const size_t n = t - lo;
            if (n < 5) continue;
            double mean = 0.0;
            for (size_t i = lo; i < t; ++i) mean += counts[i];
            mean /= double(n);
            double var = 0.0;
            for (size_t i = lo; i < t; ++i) var += (counts[i] - mean) * (counts[i] - mean);
            const double sd = std::sqrt(var / double(n));
            if (counts[t] > mean + z * sd) flagged[t] = 1;
        }
    }
    std::vector<long> out;
    for (size_t t = 0; t < flagged.size(); ++t)
        if (flagged[t] && (t + 1 == flagged.size() || !flagged[t + 1]))
            out.push_back(long(t) + 1); // 1-based last step of the excursion
    return out;
}

// ---- full per-trace runner ----

struct BaselineConfig {
    size_t window = 30; // regression window, model steps
    double delta = 5.0;
    double cusum_drift = 0.05;
    double cusum_threshold = 0.5;
    double mix = 0.05;
    double feedback_threshold = 0.5;
    size_t rolling_window = 50; // evaluation steps
    double z = 3.0;
    uint64_t seed = 0;
};

struct BaselineRun {
    std::vector<double> beliefs_final;
    std::vector<double> feedback_counts; // per model step
};

inline BaselineRun run_detect_baseline(const TraceTensor& tt, const BaselineConfig& cfg,
                                       int threads = 0) {
    if (tt.T < cfg.window) throw ConfigError("run_detect_baseline: trace shorter than window");
    const size_t N = tt.N, T = tt.T;
    BaselineRun out;
    out.feedback_counts.assign(T, 0.0);

    // per-agent variable series for the whole trace, computed once
    std::vector<std::vector<double>> internal(N), external(N); // T*2 / T*4 per agent
    parallel_for(
        N,
        [&](size_t j) {
            internal[j].resize(T * 2);
            external[j].resize(T * 4);
            for (size_t t = 0; t < T; ++t) {
                const auto x = tt.x(t, j);
                const double speed = std::hypot(x[2], x[3]);
                const double heading = std::atan2(x[3], x[2]);
                internal[j][t * 2] = speed;
                internal[j][t * 2 + 1] = heading;
                const auto& nbrs = tt.neighbors(t, j);
                if (nbrs.empty()) {
                    external[j][t * 4] = heading;
                    external[j][t * 4 + 1] = speed;
                    external[j][t * 4 + 2] = cfg.delta;
                    external[j][t * 4 + 3] = 0.0;
                } else {
                    double mh = 0.0, ms = 0.0, nearest = 1e300;
                    for (int i : nbrs) {
                        const auto xi = tt.x(t, size_t(i));
                        mh += std::atan2(xi[3], xi[2]);
                        ms += std::hypot(xi[2], xi[3]);
                        nearest = std::min(nearest, std::hypot(xi[0] - x[0], xi[1] - x[1]));
                    }
                    external[j][t * 4] = mh / double(nbrs.size());
                    external[j][t * 4 + 1] = ms / double(nbrs.size());
                    external[j][t * 4 + 2] = nearest;
                    external[j][t * 4 + 3] = double(nbrs.size());
                }
            }
        },
        threads);

    std::vector<double> beliefs(N, 0.0);
    std::vector<uint8_t> flags(N, 0);
    std::vector<CusumState> cusums(N * 8);
    for (auto& c : cusums) {
        c.drift = cfg.cusum_drift;
        c.threshold = cfg.cusum_threshold;
    }
    Rng rng(derive_seed(cfg.seed, "detect-collaborate"));
    const size_t w = cfg.window;
    std::vector<double> xs(w), ys(w);

    for (size_t t = 0; t < T; ++t) {
        if (t + 1 >= w) {
            const size_t lo = t + 1 - w;
            for (size_t j = 0; j < N; ++j) {
                bool any = false;
                for (size_t ii = 0; ii < 2; ++ii)
                    for (size_t ee = 0; ee < 4; ++ee) {
                        for (size_t s = 0; s < w; ++s) {
                            ys[s] = internal[j][(lo + s) * 2 + ii];
                            xs[s] = external[j][(lo + s) * 4 + ee];
                        }
                        const double p = ols_slope_pvalue(xs, ys);
                        if (cusums[j * 8 + ii * 4 + ee].update(p)) any = true;
                    }
                flags[j] = any ? 1 : 0;
            }
        }
        // collaboration round (same update as collaborate(), inlined to
        // avoid per-step neighbor-list copies)
        std::vector<double> next(N);
        for (size_t j = 0; j < N; ++j) {
            const auto& nb = tt.neighbors(t, j);
            double b = beliefs[j];
            if (!nb.empty()) b = 0.5 * (b + beliefs[size_t(nb[rng.index(nb.size())])]);
            next[j] = (1.0 - cfg.mix) * b + cfg.mix * double(flags[j]);
        }
        beliefs = std::move(next);
        double count = 0.0;
        for (double b : beliefs)
            if (b > cfg.feedback_threshold) count += 1.0;
        out.feedback_counts[t] = count;
    }
    out.beliefs_final = beliefs;
    return out;
}

} // namespace hstcl
