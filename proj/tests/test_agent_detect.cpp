#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hstcl/agent_detect.hpp"
#include "hstcl/simkit.hpp"

using namespace hstcl;

TEST_CASE("agent_dissimilarity endpoints and hand case", "[agent_detect]") {
    std::vector<double> a{0.4, -0.2, 0.9};
    CHECK(agent_dissimilarity(a, a) == Catch::Approx(0.0).margin(1e-15));
    std::vector<double> u{1, 0}, nu{-1, 0};
    CHECK(agent_dissimilarity(u, nu) == Catch::Approx(1.0));
    std::vector<double> v{1, 1};
    CHECK(agent_dissimilarity(u, v) == Catch::Approx(0.14644660940672627).epsilon(1e-12));
}

TEST_CASE("communicate endpoint behaviors", "[agent_detect]") {
    std::vector<std::vector<int>> nbrs{{1}, {0}};
    std::vector<double> s{0.2, 0.6}, d{0.8, 0.3};

    auto a1 = communicate(s, d, nbrs, 1.0);
    CHECK(a1[0] == Catch::Approx(0.8));
    CHECK(a1[1] == Catch::Approx(0.3));

    std::vector<double> eq{0.4, 0.4};
    auto a0 = communicate(eq, d, nbrs, 0.0);
    CHECK(a0[0] == Catch::Approx(0.4));
    CHECK(a0[1] == Catch::Approx(0.4));

    // alpha=0.05, d=0.8, self 0.2, one neighbor 0.6 -> 0.42
    auto mix = communicate(s, d, nbrs, 0.05);
    CHECK(mix[0] == Catch::Approx(0.05 * 0.8 + 0.95 * 0.4).epsilon(1e-12));
    CHECK(mix[0] == Catch::Approx(0.42).epsilon(1e-12));

    CHECK_THROWS_AS(communicate(s, d, nbrs, 1.2), ConfigError);
}

TEST_CASE("communicate preserves the unit interval", "[agent_detect]") {
    Rng rng(71);
    for (int rep = 0; rep < 30; ++rep) {
        const size_t n = 2 + rng.index(10);
        std::vector<double> s(n), d(n);
        std::vector<std::vector<int>> nbrs(n);
        for (size_t j = 0; j < n; ++j) {
            s[j] = rng.uniform();
            d[j] = rng.uniform();
            for (size_t i = 0; i < n; ++i)
                if (i != j && rng.uniform() < 0.3) nbrs[j].push_back(int(i));
        }
        auto out = communicate(s, d, nbrs, rng.uniform());
        for (double v : out) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("score diffusion reaches consensus on a fixed connected graph", "[agent_detect]") {
    // alpha = 0: pure averaging over a connected 10-agent graph contracts
    // the spread below 1e-6 within 1e4 rounds.
    const size_t n = 10;
    std::vector<std::vector<int>> nbrs(n);
    for (size_t j = 0; j + 1 < n; ++j) { // path graph: connected
        nbrs[j].push_back(int(j + 1));
        nbrs[j + 1].push_back(int(j));
    }
    Rng rng(73);
    std::vector<double> s(n), d(n, 0.0);
    for (double& v : s) v = rng.uniform();
    size_t rounds = 0;
    double spread = 1.0;
    for (; rounds < 10000; ++rounds) {
        double lo = s[0], hi = s[0];
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        spread = hi - lo;
        if (spread < 1e-6) break;
        s = communicate(s, d, nbrs, 0.0);
    }
    INFO("rounds=" << rounds << " spread=" << spread);
    CHECK(spread < 1e-6);
}

TEST_CASE("score_trace on a window-length trace is all zeros", "[agent_detect]") {
    AgentTrace tr;
    tr.header.n_agents = 2;
    tr.header.bounds_w = tr.header.bounds_h = 10.0;
    tr.header.dataset = "flock";
    tr.header.eval_every = 10;
    tr.header.schedule = {{0, 4, 0}};
    Rng rng(3);
    for (long t = 0; t < 4; ++t) {
        tr.t.push_back(t);
        for (int j = 0; j < 2; ++j)
            tr.states.insert(tr.states.end(), {rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0),
                                               rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    }
    auto tt = build_trace_tensor(tr, 5.0, 1);
    AgentModel m = AgentModel::init(4, 61);
    auto scores = score_trace(m.online, tt, 4, 0.05, 1);
    for (double v : scores.s) CHECK(v == 0.0);
}

TEST_CASE("frozen agents keep scores at zero", "[agent_detect]") {
    AgentTrace tr;
    tr.header.n_agents = 3;
    tr.header.bounds_w = tr.header.bounds_h = 10.0;
    tr.header.dataset = "flock";
    tr.header.eval_every = 10;
    tr.header.schedule = {{0, 20, 0}};
    for (long t = 0; t < 20; ++t) {
        tr.t.push_back(t);
        tr.states.insert(tr.states.end(),
                         {1, 1, 0.2, 0.1, 4, 4, -0.3, 0.2, 8, 2, 0.0, 0.4});
    }
    auto tt = build_trace_tensor(tr, 5.0, 1);
    AgentModel m = AgentModel::init(5, 62);
    auto scores = score_trace(m.online, tt, 4, 0.05, 1);
    // identical windows -> dissimilarity 0 -> averaging zeros stays 0
    for (double v : scores.s) CHECK(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("scores rise around phase changes on a seeded flock", "[agent_detect][slow]") {
    SimConfig sc;
    sc.n_agents = 30;
    sc.world = 20.0;
    sc.n_steps = 4000;
    sc.n_phases = 2;
    sc.seed = 95;
    sc.record_stride = 5;
    auto trace = simulate_flock(sc);
    auto tt = build_trace_tensor(trace, 5.0, 0);

    TrainHyper h;
    h.w = 8;
    h.D = 12;
    h.kappa = 3;
    h.epochs = 3;
    h.B = 16;
    h.seed = 21;
    auto model = train_agent({&tt}, h);
    auto scores = score_trace(model.online, tt, h.w, 0.05, 0);

    // mean agent score inside +-2 eval steps of a schedule boundary vs global
    auto series = scores.mean_series();
    const long ev = trace.header.eval_every; // body steps per eval step
    std::vector<long> boundaries;
    for (size_t i = 1; i < trace.header.schedule.size(); ++i)
        boundaries.push_back(trace.header.schedule[i].start);
    double band = 0.0, global = 0.0;
    size_t band_n = 0;
    for (size_t t = 0; t < series.size(); ++t) global += series[t];
    global /= double(series.size());
    for (long b : boundaries)
        for (long t = b - 2 * ev; t <= b + 2 * ev; ++t)
            if (t >= 0 && t < long(series.size())) {
                band += series[size_t(t)];
                band_n += 1;
            }
    band /= double(band_n);
    INFO("band mean=" << band << " global mean=" << global);
    CHECK(band > global);
}

TEST_CASE("scores stay in the unit interval on real traces", "[agent_detect]") {
    SimConfig sc;
    sc.n_agents = 15;
    sc.world = 15.0;
    sc.n_steps = 500;
    sc.n_phases = 1;
    sc.seed = 96;
    sc.record_stride = 5;
    auto tt = build_trace_tensor(simulate_flock(sc), 5.0, 1);
    AgentModel m = AgentModel::init(6, 63);
    auto scores = score_trace(m.online, tt, 5, 0.05, 1);
    for (double v : scores.s) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
