// Agent-level detection: pooled-window dissimilarity plus one score-diffusion
// communication round per step. Only scalar scores cross agent boundaries.
#pragma once

#include <span>
#include <vector>

#include "hstcl/agent_model.hpp"
#include "hstcl/common.hpp"
#include "hstcl/dyngraph.hpp"
#include "hstcl/tensor.hpp"

namespace hstcl {

inline double agent_dissimilarity(std::span<const double> h_pooled_now,
                                  std::span<const double> h_pooled_prev) {
    return cosine_dissim(h_pooled_now, h_pooled_prev);
}

// s'_j = alpha * d_j + (1 - alpha) * mean over N_j ∪ {j} of s_i.
inline std::vector<double> communicate(std::span<const double> scores,
                                       std::span<const double> dissims,
                                       const std::vector<std::vector<int>>& nbrs, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("communicate: alpha must lie in [0, 1]");
    if (scores.size() != dissims.size() || scores.size() != nbrs.size())
        throw ShapeError("communicate: size mismatch");
    std::vector<double> out(scores.size());
    for (size_t j = 0; j < scores.size(); ++j) {
        double acc = scores[j];
        for (int i : nbrs[j]) acc += scores[size_t(i)];
        const double mean = acc / double(nbrs[j].size() + 1);
        out[j] = alpha * dissims[j] + (1.0 - alpha) * mean;
    }
    return out;
}

struct ScoreSeries {
    size_t T = 0, N = 0;
    std::vector<double> s; // T x N, scores in [0, 1]

    double at(size_t t, size_t j) const { return s[t * N + j]; }
    // mean over agents at each step (the agent-only detection series)
    std::vector<double> mean_series() const {
        std::vector<double> out(T, 0.0);
        for (size_t t = 0; t < T; ++t) {
            double acc = 0.0;
            for (size_t j = 0; j < N; ++j) acc += s[t * N + j];
            out[t] = acc / double(N);
        }
        return out;
    }
};

// Streaming agent-level detection over a full trace: incremental encoder
// advance per step, pooled-window dissimilarity, one communication round.
// Scores for t <= w are 0 (initialization); score at t+1 uses the
// dissimilarity at t and the neighborhoods at t.
inline ScoreSeries score_trace(const AgentNet& net, const TraceTensor& tt, size_t w, double alpha,
                               int threads = 0, size_t neighbor_budget = 0,
                               uint64_t budget_seed = 0) {
    if (tt.T < w) throw ConfigError("score_trace: trace shorter than the window");
    const size_t N = tt.N, D = net.D;
    ScoreSeries out;
    out.T = tt.T;
    out.N = N;
    out.s.assign(tt.T * N, 0.0);

    std::vector<SteWindowCache> caches(N, SteWindowCache(w, D));
    std::vector<StepFeatures> feats(N);
    std::vector<double> pooled_prev(N * D, 0.0), pooled_cur(N * D, 0.0);
    std::vector<double> dissims(N, 0.0);
    Rng budget_rng(derive_seed(budget_seed, "neighbor-budget"));

    std::vector<std::vector<int>> capped;
    for (size_t t = 0; t < tt.T; ++t) {
        parallel_for(
            N, [&](size_t j) { compute_step_features(net.P, net.enc, tt.xm(t, j), D, feats[j]); },
            threads);

        if (neighbor_budget > 0) {
            capped.assign(N, {});
            for (size_t j = 0; j < N; ++j) {
                const auto& nb = tt.neighbors(t, j);
                if (nb.size() <= neighbor_budget) {
                    capped[j] = nb;
                } else {
                    auto pick = nb;
                    for (size_t k = 0; k < neighbor_budget; ++k)
                        std::swap(pick[k], pick[k + budget_rng.index(pick.size() - k)]);
                    pick.resize(neighbor_budget);
                    std::sort(pick.begin(), pick.end());
                    capped[j] = std::move(pick);
                }
            }
        }

        parallel_for(
            N,
            [&](size_t j) {
                const auto& nb = neighbor_budget > 0 ? capped[j] : tt.neighbors(t, j);
                std::vector<const StepFeatures*> np(nb.size());
                for (size_t i = 0; i < nb.size(); ++i) np[i] = &feats[size_t(nb[i])];
                const auto& h = caches[j].advance(net.P, net.enc, long(t), feats[j], np);
                if (t + 1 >= w) mean_rows(h, w, D, pooled_cur.data() + j * D);
            },
            threads);

        if (t >= w) {
            parallel_for(
                N,
                [&](size_t j) {
                    dissims[j] = cosine_dissim(
                        std::span<const double>{pooled_cur.data() + j * D, D},
                        std::span<const double>{pooled_prev.data() + j * D, D});
                },
                threads);
            if (t + 1 < tt.T) {
                const double* prev_scores = out.s.data() + t * N;
                double* next_scores = out.s.data() + (t + 1) * N;
                for (size_t j = 0; j < N; ++j) {
                    const auto& nb = neighbor_budget > 0 ? capped[j] : tt.neighbors(t, j);
                    double acc = prev_scores[j];
                    for (int i : nb) acc += prev_scores[size_t(i)];
                    next_scores[j] =
                        alpha * dissims[j] + (1.0 - alpha) * acc / double(nb.size() + 1);
                }
            }
        }
        std::swap(pooled_prev, pooled_cur);
    }
    return out;
}

} // namespace hstcl
