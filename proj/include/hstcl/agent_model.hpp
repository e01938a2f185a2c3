// Agent-level spatio-temporal encoder and consistency training: online and
// target branches, temporal/spatial consistency losses, Adam + EMA updates.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "hstcl/autodiff.hpp"
#include "hstcl/common.hpp"
#include "hstcl/dyngraph.hpp"
#include "hstcl/optim.hpp"
#include "hstcl/ste.hpp"

namespace hstcl {

struct AgentNet {
    ParamStore P;
    size_t D = 0;
    EncoderIds enc;
    Mlp2Ids proj_t, proj_s, pred;

    static AgentNet make(size_t D) {
        AgentNet n;
        n.D = D;
        n.enc = add_encoder(n.P, "agent", 4, D);
        n.proj_t = add_mlp2(n.P, "agent.proj_t", D);
        n.proj_s = add_mlp2(n.P, "agent.proj_s", D);
        n.pred = add_mlp2(n.P, "agent.pred", D);
        return n;
    }
};

// Online branch trained by gradients; target follows by EMA and starts as a
// copy of the online weights.
struct AgentModel {
    AgentNet online, target;

    static AgentModel init(size_t D, uint64_t seed) {
        AgentModel m;
        m.online = AgentNet::make(D);
        Rng rng(derive_seed(seed, "agent-init"));
        m.online.P.init_random(rng);
        m.target = m.online;
        return m;
    }
};

inline void mean_rows(std::span<const double> rows, size_t count, size_t D, double* out) {
    for (size_t d = 0; d < D; ++d) out[d] = 0.0;
    for (size_t t = 0; t < count; ++t)
        for (size_t d = 0; d < D; ++d) out[d] += rows[t * D + d];
    for (size_t d = 0; d < D; ++d) out[d] /= double(count);
}

// z_j = Emb(x_j) + sum_i alpha_ij f_V(Emb(x_i) - Emb(x_j))
inline std::vector<double> spatial_attend(const AgentNet& net, std::span<const double> x_j,
                                          std::span<const std::span<const double>> neighbor_states) {
    StepFeatures self;
    compute_step_features(net.P, net.enc, x_j, net.D, self);
    std::vector<StepFeatures> nf(neighbor_states.size());
    std::vector<const StepFeatures*> np(neighbor_states.size());
    for (size_t i = 0; i < neighbor_states.size(); ++i) {
        compute_step_features(net.P, net.enc, neighbor_states[i], net.D, nf[i]);
        np[i] = &nf[i];
    }
    std::vector<double> z(net.D), alpha;
    spatial_attend_features(net.P, net.enc, self, np, net.D, z.data(), alpha);
    return z;
}

// h rows from spatial rows over a window (full attention within the window).
inline std::vector<double> temporal_attend(const AgentNet& net, std::span<const double> z_rows,
                                           size_t count) {
    std::vector<double> h;
    temporal_attend_full(net.P, net.enc, z_rows, count, net.D, h);
    return h;
}

// From-scratch window pass for one agent: h rows (w x D).
inline std::vector<double> ste_agent_forward(const AgentNet& net, const WindowView& win,
                                             size_t j) {
    std::vector<double> z_rows(win.w * net.D);
    StepFeatures self;
    std::vector<StepFeatures> nf;
    std::vector<const StepFeatures*> np;
    std::vector<double> alpha;
    for (size_t s = 0; s < win.w; ++s) {
        const long t = win.t_first() + long(s);
        compute_step_features(net.P, net.enc, win.xm(t, j), net.D, self);
        const auto& nbrs = win.neighbors(t, j);
        nf.assign(nbrs.size(), {});
        np.resize(nbrs.size());
        for (size_t i = 0; i < nbrs.size(); ++i) {
            compute_step_features(net.P, net.enc, win.xm(t, size_t(nbrs[i])), net.D, nf[i]);
            np[i] = &nf[i];
        }
        spatial_attend_features(net.P, net.enc, self, np, net.D, z_rows.data() + s * net.D,
                                alpha);
    }
    return temporal_attend(net, z_rows, win.w);
}

// Window pass for every agent, sharing per-step feature maps. out[j] = w x D.
inline std::vector<std::vector<double>> ste_agent_forward_all(const AgentNet& net,
                                                              const WindowView& win,
                                                              int threads = 0) {
    const size_t N = win.n_agents(), D = net.D, w = win.w;
    std::vector<std::vector<double>> z(N, std::vector<double>(w * D));
    std::vector<StepFeatures> feats(N);
    for (size_t s = 0; s < w; ++s) {
        const long t = win.t_first() + long(s);
        parallel_for(
            N, [&](size_t j) { compute_step_features(net.P, net.enc, win.xm(t, j), D, feats[j]); },
            threads);
        parallel_for(
            N,
            [&](size_t j) {
                const auto& nbrs = win.neighbors(t, j);
                std::vector<const StepFeatures*> np(nbrs.size());
                for (size_t i = 0; i < nbrs.size(); ++i) np[i] = &feats[size_t(nbrs[i])];
                std::vector<double> alpha;
                spatial_attend_features(net.P, net.enc, feats[j], np, D,
                                        z[j].data() + s * D, alpha);
            },
            threads);
    }
    std::vector<std::vector<double>> h(N);
    parallel_for(
        N, [&](size_t j) { temporal_attend_full(net.P, net.enc, z[j], w, D, h[j]); }, threads);
    return h;
}

// Streaming wrapper over SteWindowCache taking raw states.
struct AgentWindowCache {
    SteWindowCache cache;
    explicit AgentWindowCache(size_t w, size_t D) : cache(w, D) {}

    const std::vector<double>& advance(const AgentNet& net, long t, std::span<const double> x_self,
                                       std::span<const std::span<const double>> neighbor_states) {
        compute_step_features(net.P, net.enc, x_self, net.D, self_);
        nf_.assign(neighbor_states.size(), {});
        np_.resize(neighbor_states.size());
        for (size_t i = 0; i < neighbor_states.size(); ++i) {
            compute_step_features(net.P, net.enc, neighbor_states[i], net.D, nf_[i]);
            np_[i] = &nf_[i];
        }
        return cache.advance(net.P, net.enc, t, self_, np_);
    }

private:
    StepFeatures self_;
    std::vector<StepFeatures> nf_;
    std::vector<const StepFeatures*> np_;
};

// kappa draws per agent from the temporal neighborhood, probability
// proportional to appearance frequency (with replacement). Agents with an
// empty temporal neighborhood get an empty draw list.
inline std::vector<std::vector<int>> sample_spatial_neighbors(const WindowView& win, size_t kappa,
                                                              Rng& rng) {
    if (kappa < 1) throw ConfigError("sample_spatial_neighbors: kappa must be >= 1");
    const size_t N = win.n_agents();
    std::vector<std::vector<int>> out(N);
    std::vector<int> occurrences;
    for (size_t j = 0; j < N; ++j) {
        occurrences.clear();
        for (size_t s = 0; s < win.w; ++s) {
            const auto& nb = win.neighbors(win.t_first() + long(s), j);
            occurrences.insert(occurrences.end(), nb.begin(), nb.end());
        }
        if (occurrences.empty()) continue;
        for (size_t k = 0; k < kappa; ++k)
            out[j].push_back(occurrences[rng.index(occurrences.size())]);
    }
    return out;
}

struct AgentLossValue {
    double L_T = 0.0, L_S = 0.0, L_Agent = 0.0;
    size_t skipped_agents = 0; // empty temporal neighborhood, excluded from L_S
};

// Builds L_Agent = L_T + L_S on the tape. The target branch is evaluated
// with the plain forward and enters as constants, so gradients flow only
// through the online parameters.
inline AgentLossValue agent_losses_tape(Tape& tp, const AgentNet& online, const AgentNet& target,
                                        const WindowView& win,
                                        const std::vector<std::vector<int>>& samples,
                                        int* loss_node, int threads = 0) {
    const size_t N = win.n_agents(), D = online.D, w = win.w;

    // target branch: h~ rows per agent, n~ pooled per agent
    const auto h_tgt = ste_agent_forward_all(target, win, threads);
    std::vector<std::vector<double>> n_tgt(N, std::vector<double>(D));
    {
        std::vector<double> proj(w * D), scratch;
        for (size_t j = 0; j < N; ++j) {
            for (size_t s = 0; s < w; ++s)
                mlp2_apply(target.P, target.proj_s, h_tgt[j].data() + s * D,
                           proj.data() + s * D, scratch);
            mean_rows(proj, w, D, n_tgt[j].data());
        }
    }

    // online branch on the tape, features shared across agents per step
    std::vector<std::vector<TapeStepFeatures>> feats(w, std::vector<TapeStepFeatures>(N));
    for (size_t s = 0; s < w; ++s) {
        const long t = win.t_first() + long(s);
        for (size_t j = 0; j < N; ++j)
            feats[s][j] = tape_step_features(tp, online.enc, tp.input(win.xm(t, j)));
    }
    std::vector<int> lt_terms, ls_terms;
    std::vector<int> m_pool(N, -1);
    {
        std::vector<int> z_nodes(w), vt(w), mt(w);
        std::vector<const TapeStepFeatures*> np;
        for (size_t j = 0; j < N; ++j) {
            for (size_t s = 0; s < w; ++s) {
                const long t = win.t_first() + long(s);
                const auto& nbrs = win.neighbors(t, j);
                np.resize(nbrs.size());
                for (size_t i = 0; i < nbrs.size(); ++i) np[i] = &feats[s][size_t(nbrs[i])];
                z_nodes[s] = tape_spatial_z(tp, online.enc, D, feats[s][j], np);
            }
            const auto h_nodes = tape_temporal_rows(tp, online.enc, D, z_nodes);
            for (size_t s = 0; s < w; ++s) vt[s] = tape_mlp2(tp, online.proj_t, h_nodes[s]);
            const int v_pool = tp.mean(vt);
            for (size_t s = 0; s < w; ++s) {
                const int h_tilde = tp.input({h_tgt[j].data() + s * D, D});
                lt_terms.push_back(tp.cosine(v_pool, h_tilde));
            }
            for (size_t s = 0; s < w; ++s)
                mt[s] = tape_mlp2(tp, online.pred, tape_mlp2(tp, online.proj_s, h_nodes[s]));
            m_pool[j] = tp.mean(mt);
        }
    }
    AgentLossValue out;
    for (size_t j = 0; j < N; ++j) {
        if (samples[j].empty()) {
            out.skipped_agents += 1;
            continue;
        }
        for (int i : samples[j])
            ls_terms.push_back(tp.cosine(m_pool[j], tp.input(n_tgt[size_t(i)])));
    }

    const int lt = tp.mean(lt_terms);
    const double zero = 0.0;
    const int ls = ls_terms.empty() ? tp.input({&zero, 1}) : tp.mean(ls_terms);
    const int total = tp.add(lt, ls);
    out.L_T = tp.scalar(lt);
    out.L_S = tp.scalar(ls);
    out.L_Agent = tp.scalar(total);
    *loss_node = total;
    return out;
}

// Convenience wrapper: loss values plus gradients w.r.t. the online flat
// parameter vector.
inline AgentLossValue agent_losses(const AgentNet& online, const AgentNet& target,
                                   const WindowView& win,
                                   const std::vector<std::vector<int>>& samples,
                                   std::vector<double>* grads = nullptr, int threads = 0) {
    Tape tp(online.P);
    int loss = -1;
    auto v = agent_losses_tape(tp, online, target, win, samples, &loss, threads);
    if (grads) {
        grads->assign(online.P.size(), 0.0);
        tp.backward(loss, *grads);
    }
    return v;
}

struct TrainHyper {
    size_t w = 10;
    size_t D = 128;
    size_t kappa = 5;
    size_t epochs = 10;
    size_t B = 64; // slices per simulation per epoch
    double eta = 0.99;
    double lr = 1e-3;
    uint64_t seed = 1;
    int threads = 0;
};

struct TrainLogRow {
    size_t epoch = 0, slice = 0;
    double L_T = 0, L_S = 0, L_total = 0;
};

// Algorithm: per epoch, per simulation, B random window slices; each slice
// one Adam step on the online branch and one EMA step on the target.
inline AgentModel train_agent(const std::vector<const TraceTensor*>& traces, const TrainHyper& h,
                              std::vector<TrainLogRow>* log = nullptr) {
    if (traces.empty()) throw ConfigError("train_agent: need at least one trace");
    for (const auto* tt : traces)
        if (tt->T < h.w) throw ConfigError("train_agent: trace shorter than the window");
    AgentModel model = AgentModel::init(h.D, h.seed);
    AdamState opt(model.online.P.size(), h.lr);
    Rng rng(derive_seed(h.seed, "agent-train"));
    std::vector<double> grads(model.online.P.size());
    Tape tp(model.online.P);
    for (size_t e = 0; e < h.epochs; ++e) {
        size_t slice_idx = 0;
        for (const auto* tt : traces) {
            for (size_t b = 0; b < h.B; ++b, ++slice_idx) {
                const long tau = long(h.w) - 1 + long(rng.index(tt->T - h.w + 1));
                const auto win = make_window(*tt, tau, h.w);
                const auto samples = sample_spatial_neighbors(win, h.kappa, rng);
                tp.reset();
                int loss = -1;
                const auto v =
                    agent_losses_tape(tp, model.online, model.target, win, samples, &loss,
                                      h.threads);
                if (!std::isfinite(v.L_Agent))
                    throw DivergenceError("train_agent: non-finite loss at epoch " +
                                          std::to_string(e) + " slice " +
                                          std::to_string(slice_idx));
                grads.assign(grads.size(), 0.0);
                tp.backward(loss, grads);
                adam_step(opt, model.online.P.flat(), grads);
                ema_update(model.target.P.flat(), model.online.P.flat(), h.eta);
                if (log) log->push_back({e, slice_idx, v.L_T, v.L_S, v.L_Agent});
            }
        }
    }
    return model;
}

} // namespace hstcl
