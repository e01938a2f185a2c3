// Time-indexed interaction graphs over agent traces: radius neighborhoods
// (uniform spatial hash), window views, and the region grid.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "hstcl/common.hpp"
#include "hstcl/trace.hpp"

namespace hstcl {

// N_j = {i != j : dist(i, j) <= delta}, symmetric, ids sorted.
// positions: n x 2 row-major (or stride-4 state rows via `stride`).
inline std::vector<std::vector<int>> build_neighborhoods(std::span<const double> positions,
                                                         size_t n, double delta,
                                                         size_t stride = 2) {
    if (delta <= 0.0) throw ConfigError("build_neighborhoods: delta must be > 0");
    std::vector<std::vector<int>> nbrs(n);
    if (n == 0) return nbrs;
    const double inv = 1.0 / delta;
    auto cell_key = [&](double x, double y) {
        const auto cx = int64_t(std::floor(x * inv)), cy = int64_t(std::floor(y * inv));
        return (uint64_t(cx) << 32) ^ (uint64_t(cy) & 0xffffffffULL);
    };
    std::unordered_map<uint64_t, std::vector<int>> grid;
    grid.reserve(n * 2);
    for (size_t i = 0; i < n; ++i)
        grid[cell_key(positions[i * stride], positions[i * stride + 1])].push_back(int(i));
    const double d2 = delta * delta;
    for (size_t j = 0; j < n; ++j) {
        const double xj = positions[j * stride], yj = positions[j * stride + 1];
        const auto cx = int64_t(std::floor(xj * inv)), cy = int64_t(std::floor(yj * inv));
        for (int64_t dx = -1; dx <= 1; ++dx)
            for (int64_t dy = -1; dy <= 1; ++dy) {
                auto it = grid.find((uint64_t(cx + dx) << 32) ^ (uint64_t(cy + dy) & 0xffffffffULL));
                if (it == grid.end()) continue;
                for (int i : it->second) {
                    if (size_t(i) == j) continue;
                    const double ddx = positions[size_t(i) * stride] - xj;
                    const double ddy = positions[size_t(i) * stride + 1] - yj;
                    if (ddx * ddx + ddy * ddy <= d2) nbrs[j].push_back(i);
                }
            }
        std::sort(nbrs[j].begin(), nbrs[j].end());
    }
    return nbrs;
}

// Trace put on the model time axis: dense state block + per-step
// neighborhoods. `states` keeps raw units (distances, speeds, headings);
// `model_states` carries the encoder inputs with positions normalized by the
// world extent so position and velocity components have comparable scales.
struct TraceTensor {
    size_t T = 0, N = 0;
    double bounds_w = 0.0, bounds_h = 0.0;
    std::vector<double> states;       // T * N * 4, raw
    std::vector<double> model_states; // T * N * 4, normalized encoder inputs
    std::vector<std::vector<int>> nbrs; // T * N

    std::span<const double> x(size_t t, size_t j) const {
        return {states.data() + (t * N + j) * 4, 4};
    }
    std::span<const double> xm(size_t t, size_t j) const {
        return {model_states.data() + (t * N + j) * 4, 4};
    }
    const std::vector<int>& neighbors(size_t t, size_t j) const { return nbrs[t * N + j]; }
    size_t edge_count(size_t t) const {
        size_t c = 0;
        for (size_t j = 0; j < N; ++j) c += nbrs[t * N + j].size();
        return c / 2;
    }
};

inline TraceTensor build_trace_tensor(const AgentTrace& tr, double delta, int threads = 0) {
    TraceTensor tt;
    tt.T = tr.n_steps();
    tt.N = tr.header.n_agents;
    tt.bounds_w = tr.header.bounds_w;
    tt.bounds_h = tr.header.bounds_h;
    tt.states = tr.states;
    tt.model_states = tr.states;
    const double sx = tt.bounds_w > 0 ? 1.0 / tt.bounds_w : 1.0;
    const double sy = tt.bounds_h > 0 ? 1.0 / tt.bounds_h : 1.0;
    for (size_t i = 0; i < tt.model_states.size(); i += 4) {
        tt.model_states[i] *= sx;
        tt.model_states[i + 1] *= sy;
    }
    tt.nbrs.resize(tt.T * tt.N);
    parallel_for(
        tt.T,
        [&](size_t t) {
            auto per_step = build_neighborhoods(
                {tt.states.data() + t * tt.N * 4, tt.N * 4}, tt.N, delta, 4);
            for (size_t j = 0; j < tt.N; ++j) tt.nbrs[t * tt.N + j] = std::move(per_step[j]);
        },
        threads);
    return tt;
}

// A window [tau - w + 1, tau] over a TraceTensor.
struct WindowView {
    const TraceTensor* tt = nullptr;
    long tau = 0;
    size_t w = 0;

    long t_first() const { return tau - long(w) + 1; }
    size_t n_agents() const { return tt->N; }
    std::span<const double> x(long t, size_t j) const { return tt->x(size_t(t), j); }
    std::span<const double> xm(long t, size_t j) const { return tt->xm(size_t(t), j); }
    const std::vector<int>& neighbors(long t, size_t j) const {
        return tt->neighbors(size_t(t), j);
    }
};

inline WindowView make_window(const TraceTensor& tt, long tau, size_t w) {
    if (w < 1) throw ConfigError("window: w must be >= 1");
    if (tau - long(w) + 1 < 0 || tau >= long(tt.T))
        throw ShapeError("window [" + std::to_string(tau - long(w) + 1) + ", " +
                         std::to_string(tau) + "] out of trace bounds");
    return WindowView{&tt, tau, w};
}

// n x n half-open cells partitioning the world rectangle; 4-neighbor
// bidirectional adjacency. Region id = iy * n + ix.
struct RegionGrid {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    size_t n = 0;
    std::vector<std::pair<int, int>> edges; // undirected, first < second
    std::vector<std::vector<int>> adj;      // sorted neighbor lists

    size_t M() const { return n * n; }
};

inline RegionGrid build_region_grid(double x0, double y0, double x1, double y1, size_t n) {
    if (n < 1) throw ConfigError("region grid: n must be >= 1");
    if (!(x1 > x0) || !(y1 > y0)) throw ConfigError("region grid: degenerate bounds");
    RegionGrid g;
    g.x0 = x0;
    g.y0 = y0;
    g.x1 = x1;
    g.y1 = y1;
    g.n = n;
    g.adj.resize(n * n);
    auto id = [n](size_t ix, size_t iy) { return int(iy * n + ix); };
    for (size_t iy = 0; iy < n; ++iy)
        for (size_t ix = 0; ix < n; ++ix) {
            if (ix + 1 < n) g.edges.emplace_back(id(ix, iy), id(ix + 1, iy));
            if (iy + 1 < n) g.edges.emplace_back(id(ix, iy), id(ix, iy + 1));
        }
    for (auto [a, b] : g.edges) {
        g.adj[size_t(a)].push_back(b);
        g.adj[size_t(b)].push_back(a);
    }
    for (auto& v : g.adj) std::sort(v.begin(), v.end());
    return g;
}

// Half-open cells [lo, hi); the last row/column is closed so the world
// maximum maps to cell n-1.
inline int assign_region(double x, double y, const RegionGrid& g) {
    if (x < g.x0 || x > g.x1 || y < g.y0 || y > g.y1)
        throw Error("invariant", "assign_region: position outside bounds after clamping");
    const double cw = (g.x1 - g.x0) / double(g.n), ch = (g.y1 - g.y0) / double(g.n);
    auto ix = size_t(std::min(double(g.n - 1), std::floor((x - g.x0) / cw)));
    auto iy = size_t(std::min(double(g.n - 1), std::floor((y - g.y0) / ch)));
    return int(iy * g.n + ix);
}

} // namespace hstcl
