// Seeded Flock and Pedestrian simulators with scheduled emergent phases,
// plus the objective measures used for ground-truth labeling.
//
// Rule constants are tuned so the objective measure separates phases
// sharply; detectors never see the schedule or the measure.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hstcl/common.hpp"
#include "hstcl/dyngraph.hpp"
#include "hstcl/trace.hpp"

namespace hstcl {

inline constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }

struct FlockParams {
    double speed = 0.8;            // patches per raw step
    double vision = 5.0;           // rule neighborhood radius
    double min_separation = 1.0;
    double max_align_turn = deg2rad(15.0);
    double max_cohere_turn = deg2rad(10.0);
    double max_separate_turn = deg2rad(4.0);
    double wander_turn = deg2rad(40.0); // non-emergent uniform turn bound
};

struct PedestrianParams {
    double speed = 0.35;          // walking speed along x
    double lateral_jitter = 0.60; // non-emergent lateral random walk
    double lane_align = 0.35;     // pull toward same-direction mean y
    double lane_avoid = 0.40;     // push away from opposite-direction mean y
    double interact_radius = 3.0;
    double vy_max = 0.30;
    double lane_threshold = 0.75; // dominance fraction for a lane
    // A lane is a crowded dominated row: the occupancy floor sits above the
    // uniform density so smeared remnants stop counting quickly.
    int lane_min_occupancy = 12;
};

struct SimConfig {
    std::string dataset = "flock"; // flock | pedestrian
    size_t n_agents = 150;
    double world = 51.0; // square world, patches per side
    long n_steps = 10000;
    long eval_every = 50;        // objective sampling period, raw steps
    size_t n_phases = 5;         // emergent intervals; 2*n_phases change points
    double schedule_jitter = 0.1;
    uint64_t seed = 1;
    long record_stride = 1; // body stride of the written trace
    // Explicit phase intervals (raw steps); empty means derive from n_phases.
    std::vector<PhaseInterval> schedule;
    FlockParams flock;
    PedestrianParams ped;
};

inline void validate(const SimConfig& c) {
    if (c.dataset != "flock" && c.dataset != "pedestrian")
        throw ConfigError("dataset must be flock or pedestrian");
    if (c.n_agents == 0) throw ConfigError("n_agents must be > 0");
    if (c.world <= 0) throw ConfigError("world must be > 0");
    if (c.n_steps < 0) throw ConfigError("n_steps must be >= 0");
    if (c.eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (c.record_stride < 1) throw ConfigError("record_stride must be >= 1");
    if (c.record_stride > 1 && c.eval_every % c.record_stride != 0)
        throw ConfigError("eval_every must be divisible by record_stride");
    if (!c.schedule.empty()) {
        long prev = 0;
        for (const auto& s : c.schedule) {
            if (s.start != prev || s.end <= s.start)
                throw ConfigError("schedule intervals must be ordered, disjoint and contiguous");
            prev = s.end;
        }
        if (prev != c.n_steps) throw ConfigError("schedule must cover [0, n_steps)");
    }
}

// Alternating calm/emergent intervals covering [0, n_steps), starting and
// ending calm: 2*n_phases interior boundaries. Boundaries jitter by up to
// +-jitter*segment so runs differ across seeds.
inline std::vector<PhaseInterval> make_schedule(long n_steps, size_t n_phases, double jitter,
                                                Rng& rng) {
    std::vector<PhaseInterval> out;
    if (n_steps <= 0) return out;
    const size_t segs = 2 * n_phases + 1;
    std::vector<long> bounds(segs + 1, 0);
    bounds[segs] = n_steps;
    const double base = double(n_steps) / double(segs);
    for (size_t i = 1; i < segs; ++i) {
        double b = base * double(i) + rng.uniform(-jitter, jitter) * base;
        bounds[i] = std::clamp(long(std::llround(b)), bounds[i - 1] + 1, n_steps - long(segs - i));
    }
    for (size_t i = 0; i < segs; ++i)
        out.push_back({bounds[i], bounds[i + 1], i % 2 == 1 ? 1 : 0});
    return out;
}

inline int phase_at(const std::vector<PhaseInterval>& sched, long t) {
    for (const auto& s : sched)
        if (t >= s.start && t < s.end) return s.phase;
    return 0;
}

// smallest signed angle from a to b, in [-pi, pi]
inline double angle_diff(double a, double b) {
    double d = std::fmod(b - a, 2.0 * kPi);
    if (d > kPi) d -= 2.0 * kPi;
    if (d < -kPi) d += 2.0 * kPi;
    return d;
}

inline double turn_toward(double heading, double target, double max_turn) {
    const double d = angle_diff(heading, target);
    return heading + std::clamp(d, -max_turn, max_turn);
}

namespace detail {

struct Recorder {
    const SimConfig* cfg;
    AgentTrace trace;
    std::vector<double> objective;

    explicit Recorder(const SimConfig& c, std::vector<PhaseInterval> sched_raw) : cfg(&c) {
        trace.header.n_agents = c.n_agents;
        trace.header.bounds_w = c.world;
        trace.header.bounds_h = c.world;
        trace.header.seed = c.seed;
        trace.header.dataset = c.dataset;
        trace.header.stride = c.record_stride;
        trace.header.eval_every = c.eval_every / c.record_stride;
        const long k = c.record_stride;
        for (auto& s : sched_raw) {
            s.start = (s.start + k - 1) / k;
            s.end = (s.end + k - 1) / k;
        }
        trace.header.schedule = std::move(sched_raw);
    }

    void step(long t, std::span<const double> states, double objective_value_or_nan) {
        if (t % cfg->eval_every == 0) objective.push_back(objective_value_or_nan);
        if (t % cfg->record_stride == 0) {
            trace.t.push_back(t);
            trace.states.insert(trace.states.end(), states.begin(), states.end());
        }
    }

    AgentTrace finish() {
        trace.header.objective = std::move(objective);
        return std::move(trace);
    }
};

} // namespace detail

// Count of unit patches containing no agents.
inline double empty_patch_count(std::span<const double> states, size_t n, double world) {
    const auto side = size_t(world);
    std::vector<uint8_t> occ(side * side, 0);
    for (size_t j = 0; j < n; ++j) {
        auto px = size_t(std::min(world - 1e-9, std::max(0.0, states[j * 4])));
        auto py = size_t(std::min(world - 1e-9, std::max(0.0, states[j * 4 + 1])));
        occ[py * side + px] = 1;
    }
    size_t occupied = 0;
    for (uint8_t o : occ) occupied += o;
    return double(side * side - occupied);
}

// Number of unit-height lateral bands whose occupants are dominated by one
// walking direction. dirs: +1 rightward, -1 leftward.
inline double lane_count(std::span<const double> states, std::span<const int> dirs, size_t n,
                         double world, double threshold, int min_occupancy) {
    const auto rows = size_t(world);
    std::vector<int> right(rows, 0), left(rows, 0);
    for (size_t j = 0; j < n; ++j) {
        auto ry = size_t(std::min(world - 1e-9, std::max(0.0, states[j * 4 + 1])));
        (dirs[j] > 0 ? right : left)[ry] += 1;
    }
    double lanes = 0;
    for (size_t r = 0; r < rows; ++r) {
        const int tot = right[r] + left[r];
        if (tot < min_occupancy) continue;
        if (double(std::max(right[r], left[r])) >= threshold * double(tot)) lanes += 1;
    }
    return lanes;
}

// Reynolds-style boids during emergent phases; uniform random-turn wander
// otherwise. Reflecting walls. Agent updates read the previous step's state.
inline AgentTrace simulate_flock(const SimConfig& cfg) {
    validate(cfg);
    if (cfg.dataset != "flock") throw ConfigError("simulate_flock: dataset must be flock");
    Rng rng(derive_seed(cfg.seed, "flock"));
    auto sched = cfg.schedule.empty()
                     ? make_schedule(cfg.n_steps, cfg.n_phases, cfg.schedule_jitter, rng)
                     : cfg.schedule;
    detail::Recorder rec(cfg, sched);

    const size_t N = cfg.n_agents;
    const double world = cfg.world;
    const FlockParams& fp = cfg.flock;
    std::vector<double> px(N), py(N), heading(N);
    for (size_t j = 0; j < N; ++j) {
        px[j] = rng.uniform(0.0, world);
        py[j] = rng.uniform(0.0, world);
        heading[j] = rng.uniform(0.0, 2.0 * kPi);
    }
    std::vector<double> states(N * 4);
    std::vector<double> new_heading(N);
    std::vector<double> pos(N * 2);

    for (long t = 0; t < cfg.n_steps; ++t) {
        for (size_t j = 0; j < N; ++j) {
            states[j * 4] = px[j];
            states[j * 4 + 1] = py[j];
            states[j * 4 + 2] = fp.speed * std::cos(heading[j]);
            states[j * 4 + 3] = fp.speed * std::sin(heading[j]);
        }
        rec.step(t, states, empty_patch_count(states, N, world));

        const bool emergent = phase_at(sched, t) == 1;
        if (emergent) {
            for (size_t j = 0; j < N; ++j) {
                pos[j * 2] = px[j];
                pos[j * 2 + 1] = py[j];
            }
            auto nbrs = build_neighborhoods(pos, N, fp.vision, 2);
            for (size_t j = 0; j < N; ++j) {
                const auto& nb = nbrs[j];
                if (nb.empty()) {
                    new_heading[j] = heading[j];
                    continue;
                }
                // nearest neighbor
                double best_d2 = 1e300, bx = 0, by = 0;
                double sum_cos = 0, sum_sin = 0, cx = 0, cy = 0;
                for (int i : nb) {
                    const double dx = px[size_t(i)] - px[j], dy = py[size_t(i)] - py[j];
                    const double d2 = dx * dx + dy * dy;
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        bx = dx;
                        by = dy;
                    }
                    sum_cos += std::cos(heading[size_t(i)]);
                    sum_sin += std::sin(heading[size_t(i)]);
                    cx += dx;
                    cy += dy;
                }
                if (best_d2 < fp.min_separation * fp.min_separation) {
                    // separate: turn away from the nearest neighbor
                    new_heading[j] =
                        turn_toward(heading[j], std::atan2(-by, -bx), fp.max_separate_turn);
                } else {
                    double h = turn_toward(heading[j], std::atan2(sum_sin, sum_cos),
                                           fp.max_align_turn);
                    h = turn_toward(h, std::atan2(cy, cx), fp.max_cohere_turn);
                    new_heading[j] = h;
                }
            }
        } else {
            for (size_t j = 0; j < N; ++j)
                new_heading[j] = heading[j] + rng.uniform(-fp.wander_turn, fp.wander_turn);
        }

        for (size_t j = 0; j < N; ++j) {
            heading[j] = new_heading[j];
            double nx = px[j] + fp.speed * std::cos(heading[j]);
            double ny = py[j] + fp.speed * std::sin(heading[j]);
            if (nx < 0.0) {
                nx = -nx;
                heading[j] = kPi - heading[j];
            } else if (nx > world) {
                nx = 2.0 * world - nx;
                heading[j] = kPi - heading[j];
            }
            if (ny < 0.0) {
                ny = -ny;
                heading[j] = -heading[j];
            } else if (ny > world) {
                ny = 2.0 * world - ny;
                heading[j] = -heading[j];
            }
            px[j] = std::clamp(nx, 0.0, world);
            py[j] = std::clamp(ny, 0.0, world);
        }
    }
    return rec.finish();
}

// Two populations walking in opposite x directions; wrap-around in x,
// reflecting walls in y. During emergent phases a lane-formation force
// aligns agents laterally with same-direction neighbors and repels them
// from opposite-direction ones.
inline AgentTrace simulate_pedestrian(const SimConfig& cfg) {
    validate(cfg);
    if (cfg.dataset != "pedestrian")
        throw ConfigError("simulate_pedestrian: dataset must be pedestrian");
    Rng rng(derive_seed(cfg.seed, "pedestrian"));
    auto sched = cfg.schedule.empty()
                     ? make_schedule(cfg.n_steps, cfg.n_phases, cfg.schedule_jitter, rng)
                     : cfg.schedule;
    detail::Recorder rec(cfg, sched);

    const size_t N = cfg.n_agents;
    const double world = cfg.world;
    const PedestrianParams& pp = cfg.ped;
    std::vector<double> px(N), py(N), vy(N, 0.0);
    std::vector<int> dir(N);
    for (size_t j = 0; j < N; ++j) {
        px[j] = rng.uniform(0.0, world);
        py[j] = rng.uniform(0.0, world);
        dir[j] = (j % 2 == 0) ? 1 : -1;
    }
    std::vector<double> states(N * 4), pos(N * 2), new_vy(N);

    for (long t = 0; t < cfg.n_steps; ++t) {
        for (size_t j = 0; j < N; ++j) {
            states[j * 4] = px[j];
            states[j * 4 + 1] = py[j];
            states[j * 4 + 2] = double(dir[j]) * pp.speed;
            states[j * 4 + 3] = vy[j];
        }
        rec.step(t, states,
                 lane_count(states, dir, N, world, pp.lane_threshold, pp.lane_min_occupancy));

        const bool emergent = phase_at(sched, t) == 1;
        if (emergent) {
            for (size_t j = 0; j < N; ++j) {
                pos[j * 2] = px[j];
                pos[j * 2 + 1] = py[j];
            }
            auto nbrs = build_neighborhoods(pos, N, pp.interact_radius, 2);
            for (size_t j = 0; j < N; ++j) {
                double same_y = 0, opp_y = 0;
                int n_same = 0, n_opp = 0;
                for (int i : nbrs[j]) {
                    if (dir[size_t(i)] == dir[j]) {
                        same_y += py[size_t(i)];
                        n_same += 1;
                    } else {
                        opp_y += py[size_t(i)];
                        n_opp += 1;
                    }
                }
                double v = 0.2 * rng.uniform(-pp.lateral_jitter, pp.lateral_jitter);
                if (n_same > 0) v += pp.lane_align * (same_y / n_same - py[j]);
                if (n_opp > 0) v += pp.lane_avoid * (py[j] - opp_y / n_opp);
                new_vy[j] = std::clamp(v, -pp.vy_max, pp.vy_max);
            }
        } else {
            for (size_t j = 0; j < N; ++j)
                new_vy[j] = rng.uniform(-pp.lateral_jitter, pp.lateral_jitter);
        }

        for (size_t j = 0; j < N; ++j) {
            vy[j] = new_vy[j];
            px[j] = std::fmod(px[j] + double(dir[j]) * pp.speed + world, world);
            double ny = py[j] + vy[j];
            if (ny < 0.0) ny = -ny;
            if (ny > world) ny = 2.0 * world - ny;
            py[j] = std::clamp(ny, 0.0, world);
        }
    }
    return rec.finish();
}

inline AgentTrace simulate(const SimConfig& cfg) {
    return cfg.dataset == "flock" ? simulate_flock(cfg) : simulate_pedestrian(cfg);
}

// Objective measure recomputed from a trace body (body must be at raw
// resolution for exact agreement with the in-run series).
inline std::vector<double> objective_measure(const AgentTrace& tr) {
    const long every = tr.header.eval_every;
    if (every < 1) throw ConfigError("objective_measure: trace has no eval_every");
    std::vector<double> out;
    std::vector<int> dirs(tr.header.n_agents);
    for (size_t i = 0; i < tr.n_steps(); i += size_t(every)) {
        std::span<const double> st{tr.states.data() + i * tr.header.n_agents * 4,
                                   tr.header.n_agents * 4};
        if (tr.header.dataset == "pedestrian") {
            for (size_t j = 0; j < tr.header.n_agents; ++j)
                dirs[j] = st[j * 4 + 2] >= 0.0 ? 1 : -1;
            PedestrianParams pp;
            out.push_back(lane_count(st, dirs, tr.header.n_agents, tr.header.bounds_w,
                                     pp.lane_threshold, pp.lane_min_occupancy));
        } else {
            out.push_back(empty_patch_count(st, tr.header.n_agents, tr.header.bounds_w));
        }
    }
    return out;
}

} // namespace hstcl
