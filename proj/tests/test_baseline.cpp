#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hstcl/baseline.hpp"
#include "hstcl/simkit.hpp"

using namespace hstcl;

namespace {

TraceTensor line_trace(size_t T) {
    // agent 0 at origin moving (1,1); agent 1 static at distance 3
    AgentTrace tr;
    tr.header.n_agents = 2;
    tr.header.bounds_w = tr.header.bounds_h = 100.0;
    tr.header.dataset = "flock";
    tr.header.eval_every = 10;
    tr.header.schedule = {{0, long(T), 0}};
    for (size_t t = 0; t < T; ++t) {
        tr.t.push_back(long(t));
        tr.states.insert(tr.states.end(), {50.0, 50.0, 1.0, 1.0, 53.0, 50.0, 0.0, 0.0});
    }
    return build_trace_tensor(tr, 5.0, 1);
}

} // namespace

TEST_CASE("compute_variables internal and sentinel values", "[baseline]") {
    auto tt = line_trace(6);
    auto win = make_window(tt, 5, 6);

    auto v0 = compute_variables(win, 0, 5.0);
    // heading of velocity (1,1) is pi/4
    CHECK(v0.internal_vars[1] == Catch::Approx(kPi / 4).epsilon(1e-12));
    CHECK(v0.internal_vars[0] == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
    // one static neighbor at distance 3
    for (size_t s = 0; s < 6; ++s) {
        CHECK(v0.external_vars[s * 4 + 2] == Catch::Approx(3.0).epsilon(1e-12));
        CHECK(v0.external_vars[s * 4 + 3] == 1.0);
    }

    // isolated agent: sentinels
    AgentTrace tr;
    tr.header.n_agents = 1;
    tr.header.bounds_w = tr.header.bounds_h = 10.0;
    tr.header.dataset = "flock";
    tr.header.eval_every = 10;
    tr.header.schedule = {{0, 4, 0}};
    for (long t = 0; t < 4; ++t) {
        tr.t.push_back(t);
        tr.states.insert(tr.states.end(), {5, 5, 0.6, 0.8});
    }
    auto solo = build_trace_tensor(tr, 2.0, 1);
    auto wsolo = make_window(solo, 3, 4);
    auto vs = compute_variables(wsolo, 0, 2.0);
    for (size_t s = 0; s < 4; ++s) {
        CHECK(vs.external_vars[s * 4 + 3] == 0.0);                            // count
        CHECK(vs.external_vars[s * 4 + 2] == Catch::Approx(2.0));             // delta sentinel
        CHECK(vs.external_vars[s * 4] == Catch::Approx(vs.internal_vars[s * 2 + 1]));
        CHECK(vs.external_vars[s * 4 + 1] == Catch::Approx(vs.internal_vars[s * 2]));
    }
}

TEST_CASE("ols p-value on near-deterministic and degenerate data", "[baseline]") {
    // y = 2x with vanishing noise: p -> 0
    std::vector<double> x, y;
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
        x.push_back(double(i));
        y.push_back(2.0 * double(i) + 1e-9 * rng.uniform(-1, 1));
    }
    CHECK(ols_slope_pvalue(x, y) < 1e-6);

    // constant response: zero-variance rule gives p = 1
    std::vector<double> yc(10, 3.0);
    CHECK(ols_slope_pvalue(x, yc) == 1.0);
    // constant regressor as well
    std::vector<double> xc(10, 2.0);
    CHECK(ols_slope_pvalue(xc, y) == 1.0);
}

TEST_CASE("ols p-value matches the 4-point hand oracle", "[baseline]") {
    // x=(0,1,2,3), y=(1,2,2,4): slope 0.9, t=3.4016803, p=0.0766194831 (df=2)
    std::vector<double> x{0, 1, 2, 3}, y{1, 2, 2, 4};
    CHECK(ols_slope_pvalue(x, y) == Catch::Approx(0.07661948312336135).epsilon(1e-9));
}

TEST_CASE("ols p-value is invariant to affine rescaling of the regressor", "[baseline]") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const size_t n = 5 + rng.index(20);
        std::vector<double> x(n), y(n), xr(n);
        const double a = std::exp(rng.uniform(-2, 2)), b = rng.uniform(-10, 10);
        for (size_t i = 0; i < n; ++i) {
            x[i] = rng.uniform(-5, 5);
            y[i] = 0.7 * x[i] + rng.uniform(-1, 1);
            xr[i] = a * x[i] + b;
        }
        CHECK(ols_slope_pvalue(x, y) == Catch::Approx(ols_slope_pvalue(xr, y)).margin(1e-9));
    }
}

TEST_CASE("cusum flags a step change and ignores constants", "[baseline]") {
    std::vector<double> constant(200, 0.42);
    auto f = cusum_detect(constant, 0.05, 0.5);
    for (uint8_t v : f) CHECK(v == 0);

    std::vector<double> step;
    for (int i = 0; i < 50; ++i) step.push_back(0.9);
    for (int i = 0; i < 50; ++i) step.push_back(0.1);
    auto fs = cusum_detect(step, 0.05, 0.5);
    long first = -1;
    for (size_t i = 0; i < fs.size(); ++i)
        if (fs[i]) {
            first = long(i);
            break;
        }
    INFO("first flag at " << first);
    CHECK(first >= 50);
    CHECK(first <= 53);

    auto fi = cusum_detect(step, 0.05, std::numeric_limits<double>::infinity());
    for (uint8_t v : fi) CHECK(v == 0);
}

TEST_CASE("collaborate averages pairs then mixes in the flag", "[baseline]") {
    std::vector<double> beliefs{0.2, 0.6};
    std::vector<uint8_t> flags{0, 0};
    std::vector<std::vector<int>> nbrs{{1}, {0}}; // forced pairing
    Rng rng(7);
    auto out = collaborate(beliefs, flags, nbrs, 0.0, rng);
    CHECK(out[0] == Catch::Approx(0.4));
    CHECK(out[1] == Catch::Approx(0.4));

    // mix = 1 -> belief equals the flag
    std::vector<uint8_t> f1{1, 0};
    auto o1 = collaborate(beliefs, f1, nbrs, 1.0, rng);
    CHECK(o1[0] == 1.0);
    CHECK(o1[1] == 0.0);

    // mix = 0.05, belief 0.4, flag 1 -> 0.43 (isolated agent skips averaging)
    std::vector<double> b{0.4};
    std::vector<uint8_t> f{1};
    std::vector<std::vector<int>> iso{{}};
    auto o = collaborate(b, f, iso, 0.05, rng);
    CHECK(o[0] == Catch::Approx(0.43).epsilon(1e-12));

    CHECK_THROWS_AS(collaborate(b, f, iso, 1.5, rng), ConfigError);
}

TEST_CASE("beliefs remain in the unit interval through many rounds", "[baseline]") {
    Rng rng(9);
    const size_t n = 12;
    std::vector<double> beliefs(n);
    for (double& b : beliefs) b = rng.uniform();
    std::vector<std::vector<int>> nbrs(n);
    for (size_t j = 0; j < n; ++j)
        for (size_t i = 0; i < n; ++i)
            if (i != j && rng.uniform() < 0.25) nbrs[j].push_back(int(i));
    for (int round = 0; round < 200; ++round) {
        std::vector<uint8_t> flags(n);
        for (auto& f : flags) f = rng.uniform() < 0.3 ? 1 : 0;
        beliefs = collaborate(beliefs, flags, nbrs, 0.05, rng);
        for (double b : beliefs) {
            CHECK(b >= 0.0);
            CHECK(b <= 1.0);
        }
    }
}

TEST_CASE("global baseline detection on constants, spikes and z=inf", "[baseline]") {
    std::vector<double> constant(100, 7.0);
    CHECK(detect_global_baseline(constant, 50, 3.0).empty());

    // one large spike: exactly one detection at the spike's end (1-based)
    std::vector<double> spiky(100, 5.0);
    Rng rng(11);
    for (size_t i = 0; i < spiky.size(); ++i) spiky[i] += rng.uniform(-0.5, 0.5);
    for (size_t i = 60; i < 63; ++i) spiky[i] = 30.0; // ~10 sigma
    auto det = detect_global_baseline(spiky, 50, 3.0);
    REQUIRE(det.size() == 1);
    CHECK(det[0] == 63); // last flagged index 62, 1-based

    CHECK(detect_global_baseline(spiky, 50, std::numeric_limits<double>::infinity()).empty());
}

TEST_CASE("the full baseline only shares scalar beliefs", "[baseline][slow]") {
    SimConfig sc;
    sc.n_agents = 25;
    sc.world = 20.0;
    sc.n_steps = 2500;
    sc.n_phases = 2;
    sc.seed = 31;
    sc.record_stride = 5;
    auto trace = simulate_flock(sc);
    auto tt = build_trace_tensor(trace, 5.0, 0);
    BaselineConfig bc;
    bc.window = 12;
    bc.delta = 5.0;
    auto run = run_detect_baseline(tt, bc);
    REQUIRE(run.feedback_counts.size() == tt.T);
    for (double c : run.feedback_counts) {
        CHECK(c >= 0.0);
        CHECK(c <= double(sc.n_agents));
    }
    for (double b : run.beliefs_final) {
        CHECK(b >= 0.0);
        CHECK(b <= 1.0);
    }
    // determinism
    auto run2 = run_detect_baseline(tt, bc);
    CHECK(run.feedback_counts == run2.feedback_counts);
}
