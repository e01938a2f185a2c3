#include <catch2/catch_amalgamated.hpp>

#include "hstcl/autodiff.hpp"
#include "hstcl/optim.hpp"
#include "hstcl/ste.hpp"

using namespace hstcl;

namespace {

// Small random composition touching every op: dense layers, attention over a
// few vectors, tanh MLP, mean pooling and a cosine head.
double tape_loss(const ParamStore& P, const EncoderIds& enc, const Mlp2Ids& proj,
                 const std::vector<std::vector<double>>& xs,
                 const std::vector<double>& target_vec) {
    Tape tp(P);
    std::vector<TapeStepFeatures> feats;
    for (const auto& x : xs) feats.push_back(tape_step_features(tp, enc, tp.input(x)));
    std::vector<const TapeStepFeatures*> nbrs;
    for (size_t i = 1; i < feats.size(); ++i) nbrs.push_back(&feats[i]);
    const int z0 = tape_spatial_z(tp, enc, P.layer(enc.fq).out, feats[0], nbrs);
    std::vector<int> zs{z0};
    for (size_t i = 1; i < feats.size(); ++i) zs.push_back(feats[i].e);
    auto h = tape_temporal_rows(tp, enc, P.layer(enc.fq).out, zs);
    std::vector<int> projected;
    for (int hn : h) projected.push_back(tape_mlp2(tp, proj, hn));
    const int pooled = tp.mean(projected);
    const int c = tp.cosine(pooled, tp.input(target_vec));
    return tp.scalar(c);
}

} // namespace

TEST_CASE("tape gradients match finite differences on a full composition", "[autodiff]") {
    const size_t D = 6, in_dim = 4;
    Rng rng(101);
    ParamStore P;
    EncoderIds enc = add_encoder(P, "enc", in_dim, D);
    Mlp2Ids proj = add_mlp2(P, "proj", D);
    P.init_random(rng);

    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> x(in_dim);
        for (double& v : x) v = rng.uniform(-1, 1);
        xs.push_back(x);
    }
    std::vector<double> tgt(D);
    for (double& v : tgt) v = rng.uniform(-1, 1);

    // analytic gradient
    Tape tp(P);
    std::vector<TapeStepFeatures> feats;
    for (const auto& x : xs) feats.push_back(tape_step_features(tp, enc, tp.input(x)));
    std::vector<const TapeStepFeatures*> nbrs;
    for (size_t i = 1; i < feats.size(); ++i) nbrs.push_back(&feats[i]);
    const int z0 = tape_spatial_z(tp, enc, D, feats[0], nbrs);
    std::vector<int> zs{z0};
    for (size_t i = 1; i < feats.size(); ++i) zs.push_back(feats[i].e);
    auto h = tape_temporal_rows(tp, enc, D, zs);
    std::vector<int> projected;
    for (int hn : h) projected.push_back(tape_mlp2(tp, proj, hn));
    const int pooled = tp.mean(projected);
    const int loss = tp.cosine(pooled, tp.input(tgt));
    std::vector<double> grads(P.size(), 0.0);
    tp.backward(loss, grads);

    ParamStore Pfd = P;
    auto fd_loss = [&](const std::vector<double>& flat) {
        Pfd.flat() = flat;
        return tape_loss(Pfd, enc, proj, xs, tgt);
    };
    CHECK(grad_check(fd_loss, P.flat(), grads) < 1e-6);
}

TEST_CASE("tape forward equals the plain helpers", "[autodiff]") {
    const size_t D = 5;
    Rng rng(202);
    ParamStore P;
    EncoderIds enc = add_encoder(P, "enc", 4, D);
    P.init_random(rng);

    std::vector<std::vector<double>> xs(3, std::vector<double>(4));
    for (auto& x : xs)
        for (double& v : x) v = rng.uniform(-1, 1);

    // plain
    std::vector<StepFeatures> pf(3);
    for (size_t i = 0; i < 3; ++i) compute_step_features(P, enc, xs[i], D, pf[i]);
    std::vector<const StepFeatures*> pn{&pf[1], &pf[2]};
    std::vector<double> z(D), alpha;
    spatial_attend_features(P, enc, pf[0], pn, D, z.data(), alpha);
    std::vector<double> zrows;
    zrows.insert(zrows.end(), z.begin(), z.end());
    zrows.insert(zrows.end(), pf[1].e.begin(), pf[1].e.end());
    zrows.insert(zrows.end(), pf[2].e.begin(), pf[2].e.end());
    std::vector<double> h_plain;
    temporal_attend_full(P, enc, zrows, 3, D, h_plain);

    // tape
    Tape tp(P);
    std::vector<TapeStepFeatures> tf;
    for (const auto& x : xs) tf.push_back(tape_step_features(tp, enc, tp.input(x)));
    std::vector<const TapeStepFeatures*> tn{&tf[1], &tf[2]};
    const int zt = tape_spatial_z(tp, enc, D, tf[0], tn);
    std::vector<int> zn{zt, tf[1].e, tf[2].e};
    auto ht = tape_temporal_rows(tp, enc, D, zn);

    for (size_t d = 0; d < D; ++d)
        CHECK(tp.value(zt)[d] == Catch::Approx(z[d]).margin(1e-14));
    for (size_t s = 0; s < 3; ++s)
        for (size_t d = 0; d < D; ++d)
            CHECK(tp.value(ht[s])[d] == Catch::Approx(h_plain[s * D + d]).margin(1e-13));
}

TEST_CASE("spatial value branch is invariant to a common embedding shift", "[autodiff]") {
    // With alpha held fixed, sum_i alpha_i f_V(e_i - e_j) only sees
    // differences, so shifting every e by the same vector changes nothing.
    const size_t D = 4;
    Rng rng(303);
    ParamStore P;
    const int fv = P.add_dense("fv", D, D);
    P.init_random(rng);

    std::vector<std::vector<double>> e(3, std::vector<double>(D));
    for (auto& v : e)
        for (double& x : v) x = rng.uniform(-2, 2);
    std::vector<double> alpha{0.3, 0.7};
    std::vector<double> shift(D);
    for (double& x : shift) x = rng.uniform(-5, 5);

    auto value_sum = [&](const std::vector<std::vector<double>>& emb) {
        std::vector<double> acc(D, 0.0), diff(D), out(D);
        for (size_t i = 1; i < 3; ++i) {
            for (size_t d = 0; d < D; ++d) diff[d] = emb[i][d] - emb[0][d];
            P.apply(fv, diff.data(), out.data());
            for (size_t d = 0; d < D; ++d) acc[d] += alpha[i - 1] * out[d];
        }
        return acc;
    };

    auto base = value_sum(e);
    auto shifted_e = e;
    for (auto& v : shifted_e)
        for (size_t d = 0; d < D; ++d) v[d] += shift[d];
    auto shifted = value_sum(shifted_e);
    for (size_t d = 0; d < D; ++d) CHECK(base[d] == Catch::Approx(shifted[d]).margin(1e-12));
}
