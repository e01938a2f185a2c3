// System level: coarse-grained region states, the region-level encoder,
// system-level consistency training, the system score series and the
// falling-edge change-point rule.
#pragma once

#include <span>
#include <vector>

#include "hstcl/agent_detect.hpp"
#include "hstcl/autodiff.hpp"
#include "hstcl/common.hpp"
#include "hstcl/dyngraph.hpp"
#include "hstcl/evalkit.hpp"
#include "hstcl/optim.hpp"
#include "hstcl/ste.hpp"

namespace hstcl {

struct RegionSeries {
    size_t T = 0, M = 0;
    std::vector<double> y;              // T x M region states (raw sums)
    std::vector<double> y_model;        // encoder inputs, y scaled to O(1)
    double input_scale = 1.0;
    std::vector<std::vector<int>> adj;  // static region adjacency
    std::vector<uint8_t> active;        // pruning hook; all 1 for grid worlds

    double at(size_t t, size_t m) const { return y[t * M + m]; }
};

// Region states are sums of small scores; the encoder input is rescaled by
// the series mean magnitude so embeddings are not dominated by their biases.
inline void finalize_region_inputs(RegionSeries& rs) {
    double mean_abs = 0.0;
    for (double v : rs.y) mean_abs += std::fabs(v);
    mean_abs /= double(std::max<size_t>(1, rs.y.size()));
    rs.input_scale = 1.0 / std::max(mean_abs, 1e-12);
    rs.y_model = rs.y;
    for (double& v : rs.y_model) v *= rs.input_scale;
}

// y_m^t = sum of member agent scores; membership from the agent's position
// at step t.
inline RegionSeries coarse_grain(const ScoreSeries& scores, const TraceTensor& tt,
                                 const RegionGrid& grid) {
    if (scores.T != tt.T || scores.N != tt.N)
        throw ShapeError("coarse_grain: scores and trace disagree");
    RegionSeries rs;
    rs.T = scores.T;
    rs.M = grid.M();
    rs.y.assign(rs.T * rs.M, 0.0);
    rs.adj = grid.adj;
    rs.active.assign(rs.M, 1);
    for (size_t t = 0; t < rs.T; ++t)
        for (size_t j = 0; j < tt.N; ++j) {
            const auto x = tt.x(t, j);
            rs.y[t * rs.M + size_t(assign_region(x[0], x[1], grid))] += scores.at(t, j);
        }
    finalize_region_inputs(rs);
    return rs;
}

struct SystemNet {
    ParamStore P;
    size_t D = 0;
    EncoderIds enc;
    Mlp2Ids proj_rs, proj_rt;

    static SystemNet make(size_t D) {
        SystemNet n;
        n.D = D;
        n.enc = add_encoder(n.P, "region", 1, D);
        n.proj_rs = add_mlp2(n.P, "region.proj_rs", D);
        n.proj_rt = add_mlp2(n.P, "region.proj_rt", D);
        return n;
    }
};

struct SystemModel {
    SystemNet online, target;

    static SystemModel init(size_t D, uint64_t seed) {
        SystemModel m;
        m.online = SystemNet::make(D);
        Rng rng(derive_seed(seed, "system-init"));
        m.online.P.init_random(rng);
        m.target = m.online;
        return m;
    }
};

struct RegionWindow {
    const RegionSeries* rs = nullptr;
    long tau = 0;
    size_t w = 0;

    long t_first() const { return tau - long(w) + 1; }
    size_t n_regions() const { return rs->M; }
    // normalized encoder input for region m at absolute step t
    const double* y(long t, size_t m) const { return rs->y_model.data() + size_t(t) * rs->M + m; }
};

inline RegionWindow make_region_window(const RegionSeries& rs, long tau, size_t w) {
    if (w < 1) throw ConfigError("region window: w must be >= 1");
    if (tau - long(w) + 1 < 0 || tau >= long(rs.T))
        throw ShapeError("region window out of bounds");
    if (rs.y_model.size() != rs.y.size())
        throw ConfigError("region window: series missing finalize_region_inputs");
    return RegionWindow{&rs, tau, w};
}

// From-scratch region pass: h rows (w x D) for every region, sharing the
// per-step embedding maps.
inline std::vector<std::vector<double>> ste_region_forward_all(const SystemNet& net,
                                                               const RegionWindow& win,
                                                               int threads = 0) {
    const size_t M = win.n_regions(), D = net.D, w = win.w;
    std::vector<std::vector<double>> z(M, std::vector<double>(w * D));
    std::vector<StepFeatures> feats(M);
    for (size_t s = 0; s < w; ++s) {
        const long t = win.t_first() + long(s);
        parallel_for(
            M,
            [&](size_t m) {
                compute_step_features(net.P, net.enc, {win.y(t, m), 1}, D, feats[m]);
            },
            threads);
        parallel_for(
            M,
            [&](size_t m) {
                const auto& nbrs = win.rs->adj[m];
                std::vector<const StepFeatures*> np(nbrs.size());
                for (size_t i = 0; i < nbrs.size(); ++i) np[i] = &feats[size_t(nbrs[i])];
                std::vector<double> alpha;
                spatial_attend_features(net.P, net.enc, feats[m], np, D, z[m].data() + s * D,
                                        alpha);
            },
            threads);
    }
    std::vector<std::vector<double>> h(M);
    parallel_for(
        M, [&](size_t m) { temporal_attend_full(net.P, net.enc, z[m], w, D, h[m]); }, threads);
    return h;
}

inline std::vector<double> ste_region_forward(const SystemNet& net, const RegionWindow& win,
                                              size_t m) {
    return ste_region_forward_all(net, win, 1)[m];
}

struct SystemRepr {
    std::vector<double> r_G; // w x D transient system representations
    std::vector<double> u;   // D short-term representation
};

// r_G^t = mean_m Proj_RS(r_m^t); u = mean_t Proj_RT(r_G^t).
inline SystemRepr system_representation(const SystemNet& net,
                                        const std::vector<std::vector<double>>& r_rows, size_t w) {
    const size_t M = r_rows.size(), D = net.D;
    SystemRepr out;
    out.r_G.assign(w * D, 0.0);
    out.u.assign(D, 0.0);
    std::vector<double> proj(D), scratch;
    for (size_t s = 0; s < w; ++s) {
        double* rg = out.r_G.data() + s * D;
        for (size_t m = 0; m < M; ++m) {
            mlp2_apply(net.P, net.proj_rs, r_rows[m].data() + s * D, proj.data(), scratch);
            for (size_t d = 0; d < D; ++d) rg[d] += proj[d];
        }
        for (size_t d = 0; d < D; ++d) rg[d] /= double(M);
        mlp2_apply(net.P, net.proj_rt, rg, proj.data(), scratch);
        for (size_t d = 0; d < D; ++d) out.u[d] += proj[d];
    }
    for (size_t d = 0; d < D; ++d) out.u[d] /= double(w);
    return out;
}

// kappa regions drawn uniformly without replacement from the active set.
inline std::vector<int> sample_regions(const RegionSeries& rs, size_t kappa, Rng& rng) {
    std::vector<int> pool;
    for (size_t m = 0; m < rs.M; ++m)
        if (rs.active[m]) pool.push_back(int(m));
    if (kappa > pool.size())
        throw ConfigError("sample_regions: kappa exceeds the active region count");
    for (size_t k = 0; k < kappa; ++k)
        std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
    pool.resize(kappa);
    return pool;
}

struct SystemLossValue {
    double L_ST = 0.0, L_SS = 0.0, L_System = 0.0;
};

// L_System = L_ST + L_SS on the tape; target branch enters as constants.
inline SystemLossValue system_losses_tape(Tape& tp, const SystemNet& online,
                                          const SystemNet& target, const RegionWindow& win,
                                          std::span<const int> sampled_regions, int* loss_node,
                                          int threads = 0) {
    const size_t M = win.n_regions(), D = online.D, w = win.w;

    // target: r~ rows, then per-(m,t) Proj~_RS once; pool over m for r~_G and
    // over t for w~_m
    const auto r_tgt = ste_region_forward_all(target, win, threads);
    std::vector<double> proj_mt(M * w * D);
    {
        std::vector<double> scratch;
        for (size_t m = 0; m < M; ++m)
            for (size_t s = 0; s < w; ++s)
                mlp2_apply(target.P, target.proj_rs, r_tgt[m].data() + s * D,
                           proj_mt.data() + (m * w + s) * D, scratch);
    }
    std::vector<double> rg_tgt(w * D, 0.0);
    for (size_t s = 0; s < w; ++s) {
        double* rg = rg_tgt.data() + s * D;
        for (size_t m = 0; m < M; ++m) {
            const double* p = proj_mt.data() + (m * w + s) * D;
            for (size_t d = 0; d < D; ++d) rg[d] += p[d];
        }
        for (size_t d = 0; d < D; ++d) rg[d] /= double(M);
    }
    std::vector<double> wm_tgt(M * D, 0.0);
    for (size_t m = 0; m < M; ++m) {
        double* wm = wm_tgt.data() + m * D;
        for (size_t s = 0; s < w; ++s) {
            const double* p = proj_mt.data() + (m * w + s) * D;
            for (size_t d = 0; d < D; ++d) wm[d] += p[d];
        }
        for (size_t d = 0; d < D; ++d) wm[d] /= double(w);
    }

    // online branch on the tape
    std::vector<std::vector<TapeStepFeatures>> feats(w, std::vector<TapeStepFeatures>(M));
    for (size_t s = 0; s < w; ++s) {
        const long t = win.t_first() + long(s);
        for (size_t m = 0; m < M; ++m)
            feats[s][m] = tape_step_features(tp, online.enc, tp.input({win.y(t, m), 1}));
    }
    // per-(m,t) projected nodes, pooled into r_G per step and u
    std::vector<std::vector<int>> proj_nodes(w, std::vector<int>(M));
    {
        std::vector<int> z_nodes(w);
        std::vector<const TapeStepFeatures*> np;
        for (size_t m = 0; m < M; ++m) {
            for (size_t s = 0; s < w; ++s) {
                const auto& nbrs = win.rs->adj[m];
                np.resize(nbrs.size());
                for (size_t i = 0; i < nbrs.size(); ++i) np[i] = &feats[s][size_t(nbrs[i])];
                z_nodes[s] = tape_spatial_z(tp, online.enc, D, feats[s][m], np);
            }
            const auto h_nodes = tape_temporal_rows(tp, online.enc, D, z_nodes);
            for (size_t s = 0; s < w; ++s)
                proj_nodes[s][m] = tape_mlp2(tp, online.proj_rs, h_nodes[s]);
        }
    }
    std::vector<int> u_terms(w);
    for (size_t s = 0; s < w; ++s)
        u_terms[s] = tape_mlp2(tp, online.proj_rt, tp.mean(proj_nodes[s]));
    const int u = tp.mean(u_terms);

    std::vector<int> st_terms, ss_terms;
    for (size_t s = 0; s < w; ++s)
        st_terms.push_back(tp.cosine(u, tp.input({rg_tgt.data() + s * D, D})));
    for (int m : sampled_regions)
        ss_terms.push_back(tp.cosine(u, tp.input({wm_tgt.data() + size_t(m) * D, D})));

    const int lst = tp.mean(st_terms);
    const int lss = tp.mean(ss_terms);
    const int total = tp.add(lst, lss);
    SystemLossValue v;
    v.L_ST = tp.scalar(lst);
    v.L_SS = tp.scalar(lss);
    v.L_System = tp.scalar(total);
    *loss_node = total;
    return v;
}

inline SystemLossValue system_losses(const SystemNet& online, const SystemNet& target,
                                     const RegionWindow& win,
                                     std::span<const int> sampled_regions,
                                     std::vector<double>* grads = nullptr, int threads = 0) {
    Tape tp(online.P);
    int loss = -1;
    auto v = system_losses_tape(tp, online, target, win, sampled_regions, &loss, threads);
    if (grads) {
        grads->assign(online.P.size(), 0.0);
        tp.backward(loss, *grads);
    }
    return v;
}

// Same loop shape as agent training: per epoch, per series, B random slices.
inline SystemModel train_system(const std::vector<const RegionSeries*>& series,
                                const TrainHyper& h, std::vector<TrainLogRow>* log = nullptr) {
    if (series.empty()) throw ConfigError("train_system: need at least one region series");
    for (const auto* rs : series) {
        if (rs->T < h.w) throw ConfigError("train_system: series shorter than the window");
        size_t active = 0;
        for (uint8_t a : rs->active) active += a;
        if (h.kappa > active)
            throw ConfigError("train_system: kappa exceeds the active region count");
    }
    SystemModel model = SystemModel::init(h.D, h.seed);
    AdamState opt(model.online.P.size(), h.lr);
    Rng rng(derive_seed(h.seed, "system-train"));
    std::vector<double> grads(model.online.P.size());
    Tape tp(model.online.P);
    for (size_t e = 0; e < h.epochs; ++e) {
        size_t slice_idx = 0;
        for (const auto* rs : series) {
            for (size_t b = 0; b < h.B; ++b, ++slice_idx) {
                const long tau = long(h.w) - 1 + long(rng.index(rs->T - h.w + 1));
                const auto win = make_region_window(*rs, tau, h.w);
                const auto sampled = sample_regions(*rs, h.kappa, rng);
                tp.reset();
                int loss = -1;
                const auto v = system_losses_tape(tp, model.online, model.target, win, sampled,
                                                  &loss, h.threads);
                if (!std::isfinite(v.L_System))
                    throw DivergenceError("train_system: non-finite loss at epoch " +
                                          std::to_string(e) + " slice " +
                                          std::to_string(slice_idx));
                grads.assign(grads.size(), 0.0);
                tp.backward(loss, grads);
                adam_step(opt, model.online.P.flat(), grads);
                ema_update(model.target.P.flat(), model.online.P.flat(), h.eta);
                if (log) log->push_back({e, slice_idx, v.L_ST, v.L_SS, v.L_System});
            }
        }
    }
    return model;
}

// s_G = d(u_now, u_prev)
inline double system_score(std::span<const double> u_now, std::span<const double> u_prev) {
    return cosine_dissim(u_now, u_prev);
}

// Streaming system-level score series over a region series: incremental
// region encoding per step, system representation, dissimilarity of
// adjacent short-term representations. Scores for t < w are 0.
inline std::vector<double> system_score_series(const SystemNet& net, const RegionSeries& rs,
                                               size_t w, int threads = 0) {
    if (rs.T < w) throw ConfigError("system_score_series: series shorter than the window");
    if (rs.y_model.size() != rs.y.size())
        throw ConfigError("system_score_series: series missing finalize_region_inputs");
    const size_t M = rs.M, D = net.D;
    std::vector<double> out(rs.T, 0.0);
    std::vector<SteWindowCache> caches(M, SteWindowCache(w, D));
    std::vector<StepFeatures> feats(M);
    std::vector<std::vector<double>> h_rows(M);
    std::vector<double> u_prev(D, 0.0), u_cur(D, 0.0);
    std::vector<double> rg(D), proj(D);

    for (size_t t = 0; t < rs.T; ++t) {
        parallel_for(
            M,
            [&](size_t m) {
                compute_step_features(net.P, net.enc, {rs.y_model.data() + t * M + m, 1}, D,
                                      feats[m]);
            },
            threads);
        parallel_for(
            M,
            [&](size_t m) {
                const auto& nbrs = rs.adj[m];
                std::vector<const StepFeatures*> np(nbrs.size());
                for (size_t i = 0; i < nbrs.size(); ++i) np[i] = &feats[size_t(nbrs[i])];
                h_rows[m] = caches[m].advance(net.P, net.enc, long(t), feats[m], np);
            },
            threads);
        if (t + 1 >= w) {
            // u from the current window's rows
            std::vector<double> scratch;
            std::fill(u_cur.begin(), u_cur.end(), 0.0);
            // project each region's rows in place, then pool in region order
            parallel_for(
                M,
                [&](size_t m) {
                    std::vector<double> p(D), sc;
                    for (size_t s = 0; s < w; ++s) {
                        mlp2_apply(net.P, net.proj_rs, h_rows[m].data() + s * D, p.data(), sc);
                        // per-region partials are reduced below in region order
                        for (size_t d = 0; d < D; ++d) h_rows[m][s * D + d] = p[d];
                    }
                },
                threads);
            for (size_t s = 0; s < w; ++s) {
                std::fill(rg.begin(), rg.end(), 0.0);
                for (size_t m = 0; m < M; ++m)
                    for (size_t d = 0; d < D; ++d) rg[d] += h_rows[m][s * D + d];
                for (size_t d = 0; d < D; ++d) rg[d] /= double(M);
                mlp2_apply(net.P, net.proj_rt, rg.data(), proj.data(), scratch);
                for (size_t d = 0; d < D; ++d) u_cur[d] += proj[d];
            }
            for (size_t d = 0; d < D; ++d) u_cur[d] /= double(w);
            if (t >= w) out[t] = system_score(u_cur, u_prev);
            std::swap(u_prev, u_cur);
        }
    }
    return out;
}

} // namespace hstcl
