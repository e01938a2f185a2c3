// Spatio-temporal encoder shared by the agent level (input dim 4) and the
// region level (input dim 1): one spatial attention layer over neighbors,
// one full temporal attention layer over the window.
//
// The value branch uses the identity f_V(e_i - e_j) = ve_i - ve_j + b_V with
// ve = W_V e + b_V, so per-neighbor dense maps are computed once per entity
// per step and shared across all attending neighbors.
#pragma once

#include <cstring>
#include <span>
#include <vector>

#include "hstcl/autodiff.hpp"
#include "hstcl/common.hpp"
#include "hstcl/params.hpp"

namespace hstcl {

struct EncoderIds {
    int emb = -1, fq = -1, fk = -1, fv = -1; // spatial
    int tq = -1, tk = -1, tv = -1;           // temporal
};

struct Mlp2Ids {
    int l1 = -1, l2 = -1;
};

inline EncoderIds add_encoder(ParamStore& P, const std::string& prefix, size_t in_dim, size_t D) {
    EncoderIds e;
    e.emb = P.add_dense(prefix + ".emb", in_dim, D);
    e.fq = P.add_dense(prefix + ".fq", D, D);
    e.fk = P.add_dense(prefix + ".fk", D, D);
    e.fv = P.add_dense(prefix + ".fv", D, D);
    e.tq = P.add_dense(prefix + ".tq", D, D);
    e.tk = P.add_dense(prefix + ".tk", D, D);
    e.tv = P.add_dense(prefix + ".tv", D, D);
    return e;
}

inline Mlp2Ids add_mlp2(ParamStore& P, const std::string& prefix, size_t D) {
    Mlp2Ids m;
    m.l1 = P.add_dense(prefix + ".l1", D, D);
    m.l2 = P.add_dense(prefix + ".l2", D, D);
    return m;
}

// dense -> tanh -> dense
inline void mlp2_apply(const ParamStore& P, const Mlp2Ids& m, const double* x, double* out,
                       std::vector<double>& scratch) {
    const size_t mid = P.layer(m.l1).out;
    scratch.resize(mid);
    P.apply(m.l1, x, scratch.data());
    for (double& v : scratch) v = std::tanh(v);
    P.apply(m.l2, scratch.data(), out);
}

inline int tape_mlp2(Tape& tp, const Mlp2Ids& m, int x) {
    return tp.dense(m.l2, tp.tanh_(tp.dense(m.l1, x)));
}

// Per-entity per-step spatial maps: e = Emb(x), qe/ke/ve = f_Q/f_K/f_V(e).
struct StepFeatures {
    std::vector<double> e, qe, ke, ve;
};

inline void compute_step_features(const ParamStore& P, const EncoderIds& enc,
                                  std::span<const double> x, size_t D, StepFeatures& f) {
    f.e.resize(D);
    f.qe.resize(D);
    f.ke.resize(D);
    f.ve.resize(D);
    P.apply(enc.emb, x.data(), f.e.data());
    P.apply(enc.fq, f.e.data(), f.qe.data());
    P.apply(enc.fk, f.e.data(), f.ke.data());
    P.apply(enc.fv, f.e.data(), f.ve.data());
}

// out = sum_i softmax(scale * q.k_i)_i * v_i; same operation order as the tape op.
inline void attend_weighted_sum(std::span<const double> q,
                                std::span<const double* const> keys,
                                std::span<const double* const> vals, size_t dim, double scale,
                                double* out, std::vector<double>& alpha) {
    const size_t nk = keys.size();
    alpha.resize(nk);
    double mx = -1e300;
    for (size_t i = 0; i < nk; ++i) {
        alpha[i] = scale * dot(q, {keys[i], dim});
        mx = std::max(mx, alpha[i]);
    }
    double z = 0.0;
    for (size_t i = 0; i < nk; ++i) {
        alpha[i] = std::exp(alpha[i] - mx);
        z += alpha[i];
    }
    for (size_t i = 0; i < nk; ++i) alpha[i] /= z;
    std::memset(out, 0, dim * sizeof(double));
    for (size_t i = 0; i < nk; ++i) {
        const double a = alpha[i];
        const double* v = vals[i];
        for (size_t d = 0; d < dim; ++d) out[d] += a * v[d];
    }
}

// z_j = e_j + sum_i alpha_ij f_V(e_i - e_j); neighbors may be empty.
inline void spatial_attend_features(const ParamStore& P, const EncoderIds& enc,
                                    const StepFeatures& self,
                                    std::span<const StepFeatures* const> neighbors, size_t D,
                                    double* z, std::vector<double>& alpha_scratch) {
    if (neighbors.empty()) {
        std::memcpy(z, self.e.data(), D * sizeof(double));
        return;
    }
    const double scale = 1.0 / std::sqrt(double(D));
    std::vector<const double*> keys(neighbors.size()), vals(neighbors.size());
    for (size_t i = 0; i < neighbors.size(); ++i) {
        keys[i] = neighbors[i]->ke.data();
        vals[i] = neighbors[i]->ve.data();
    }
    std::vector<double> att(D);
    attend_weighted_sum(self.qe, keys, vals, D, scale, att.data(), alpha_scratch);
    const auto bv = P.b(enc.fv);
    for (size_t d = 0; d < D; ++d) z[d] = ((att[d] - self.ve[d]) + bv[d]) + self.e[d];
}

// Full (non-causal) temporal attention over `count` spatial rows.
// z_rows: count x D. h_rows out: count x D. Rows s attend over all steps.
inline void temporal_attend_full(const ParamStore& P, const EncoderIds& enc,
                                 std::span<const double> z_rows, size_t count, size_t D,
                                 std::vector<double>& h_rows) {
    std::vector<double> q(count * D), k(count * D), v(count * D);
    for (size_t t = 0; t < count; ++t) {
        P.apply(enc.tq, z_rows.data() + t * D, q.data() + t * D);
        P.apply(enc.tk, z_rows.data() + t * D, k.data() + t * D);
        P.apply(enc.tv, z_rows.data() + t * D, v.data() + t * D);
    }
    const double scale = 1.0 / std::sqrt(double(D));
    h_rows.assign(count * D, 0.0);
    std::vector<double> alpha;
    std::vector<const double*> keys(count), vals(count);
    for (size_t t = 0; t < count; ++t) {
        keys[t] = k.data() + t * D;
        vals[t] = v.data() + t * D;
    }
    for (size_t s = 0; s < count; ++s)
        attend_weighted_sum({q.data() + s * D, D}, keys, vals, D, scale, h_rows.data() + s * D,
                            alpha);
}

// Sliding-window cache for streaming encoding. Stores spatial rows z, the
// temporal q/k/v rows and the unnormalized attention matrix W[s][t] = q_s.k_t;
// each advance computes only the new step's entries and the new row/column.
class SteWindowCache {
public:
    SteWindowCache(size_t w, size_t D) : w_(w), D_(D) {
        if (w < 1) throw ConfigError("window cache: w must be >= 1");
        z_.assign(w * D, 0.0);
        q_.assign(w * D, 0.0);
        k_.assign(w * D, 0.0);
        v_.assign(w * D, 0.0);
        W_.assign(w * w, 0.0);
    }

    size_t count() const { return count_; }
    long t_next() const { return t_next_; }
    std::span<const double> z_rows() const { return {z_.data(), count_ * D_}; }

    // Advance to step t (must be the next expected step). Returns h rows
    // (count x D) for the current window.
    const std::vector<double>& advance(const ParamStore& P, const EncoderIds& enc, long t,
                                       const StepFeatures& self,
                                       std::span<const StepFeatures* const> neighbors) {
        if (t != t_next_)
            throw CacheError("window cache expected step " + std::to_string(t_next_) +
                             ", got " + std::to_string(t));
        if (count_ == w_) {
            // drop oldest row/column
            std::memmove(z_.data(), z_.data() + D_, (w_ - 1) * D_ * sizeof(double));
            std::memmove(q_.data(), q_.data() + D_, (w_ - 1) * D_ * sizeof(double));
            std::memmove(k_.data(), k_.data() + D_, (w_ - 1) * D_ * sizeof(double));
            std::memmove(v_.data(), v_.data() + D_, (w_ - 1) * D_ * sizeof(double));
            for (size_t s = 0; s + 1 < w_; ++s)
                std::memmove(W_.data() + s * w_, W_.data() + (s + 1) * w_ + 1,
                             (w_ - 1) * sizeof(double));
            count_ -= 1;
        }
        const size_t n = count_;
        double* zn = z_.data() + n * D_;
        spatial_attend_features(P, enc, self, neighbors, D_, zn, alpha_);
        P.apply(enc.tq, zn, q_.data() + n * D_);
        P.apply(enc.tk, zn, k_.data() + n * D_);
        P.apply(enc.tv, zn, v_.data() + n * D_);
        // new column for retained rows, then the new row
        for (size_t s = 0; s < n; ++s)
            W_[s * w_ + n] = dot({q_.data() + s * D_, D_}, {k_.data() + n * D_, D_});
        for (size_t tcol = 0; tcol <= n; ++tcol)
            W_[n * w_ + tcol] = dot({q_.data() + n * D_, D_}, {k_.data() + tcol * D_, D_});
        count_ = n + 1;
        t_next_ = t + 1;

        // h rows from the cached unnormalized scores
        const double scale = 1.0 / std::sqrt(double(D_));
        h_.assign(count_ * D_, 0.0);
        row_.resize(count_);
        for (size_t s = 0; s < count_; ++s) {
            for (size_t tt = 0; tt < count_; ++tt) row_[tt] = scale * W_[s * w_ + tt];
            softmax_inplace(row_);
            double* hs = h_.data() + s * D_;
            for (size_t tt = 0; tt < count_; ++tt) {
                const double a = row_[tt];
                const double* vv = v_.data() + tt * D_;
                for (size_t d = 0; d < D_; ++d) hs[d] += a * vv[d];
            }
        }
        return h_;
    }

    void reset(long t_first = 0) {
        count_ = 0;
        t_next_ = t_first;
    }

private:
    size_t w_, D_;
    size_t count_ = 0;
    long t_next_ = 0;
    std::vector<double> z_, q_, k_, v_, W_, h_, alpha_;
    std::vector<double> row_;
};

// ---- tape-side encoder (online branch in training) ----

// Shared per-entity per-step spatial nodes.
struct TapeStepFeatures {
    int e = -1, qe = -1, ke = -1, ve = -1;
};

inline TapeStepFeatures tape_step_features(Tape& tp, const EncoderIds& enc, int x) {
    TapeStepFeatures f;
    f.e = tp.dense(enc.emb, x);
    f.qe = tp.dense(enc.fq, f.e);
    f.ke = tp.dense(enc.fk, f.e);
    f.ve = tp.dense(enc.fv, f.e);
    return f;
}

inline int tape_spatial_z(Tape& tp, const EncoderIds& enc, size_t D, const TapeStepFeatures& self,
                          std::span<const TapeStepFeatures* const> neighbors) {
    if (neighbors.empty()) return self.e;
    const double scale = 1.0 / std::sqrt(double(D));
    std::vector<int> keys(neighbors.size()), vals(neighbors.size());
    for (size_t i = 0; i < neighbors.size(); ++i) {
        keys[i] = neighbors[i]->ke;
        vals[i] = neighbors[i]->ve;
    }
    const int att = tp.attention(self.qe, keys, vals, scale);
    return tp.add(tp.add(tp.sub(att, self.ve), tp.bias(enc.fv)), self.e);
}

// h-row nodes over the window for one entity, from its z nodes.
inline std::vector<int> tape_temporal_rows(Tape& tp, const EncoderIds& enc, size_t D,
                                           std::span<const int> z_nodes) {
    const size_t count = z_nodes.size();
    std::vector<int> q(count), k(count), v(count), h(count);
    for (size_t t = 0; t < count; ++t) {
        q[t] = tp.dense(enc.tq, z_nodes[t]);
        k[t] = tp.dense(enc.tk, z_nodes[t]);
        v[t] = tp.dense(enc.tv, z_nodes[t]);
    }
    const double scale = 1.0 / std::sqrt(double(D));
    for (size_t s = 0; s < count; ++s) h[s] = tp.attention(q[s], k, v, scale);
    return h;
}

} // namespace hstcl
