// Agent trace container and its JSONL file format.
//
// File layout: one header record, then one record per retained step:
//   {"n_agents":..,"bounds":[w,h],"schedule":[[start,end,phase],..],
//    "seed":..,"dataset":..,"stride":..,"eval_every":..,"objective":[..]}
//   {"t":<raw step>,"agents":[[x,y,vx,vy],..]}
//
// Body index i is the model time axis. "t" keeps the raw-step label.
// "schedule" and "eval_every" are expressed in body-index units, so they
// stay valid across downsampling (boundaries remapped with a ceiling so a
// phase never appears to start earlier than it did).
#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hstcl/common.hpp"

namespace hstcl {

struct PhaseInterval {
    long start = 0; // body-index units, [start, end)
    long end = 0;
    int phase = 0; // 1 = emergent
};

struct TraceHeader {
    size_t n_agents = 0;
    double bounds_w = 0.0, bounds_h = 0.0;
    std::vector<PhaseInterval> schedule;
    uint64_t seed = 0;
    std::string dataset;
    long stride = 1;     // raw steps per body step
    long eval_every = 0; // objective sampling period, body-index units
    std::vector<double> objective;
};

struct AgentTrace {
    TraceHeader header;
    std::vector<long> t;        // raw-step labels, one per body step
    std::vector<double> states; // n_steps * n_agents * 4, row-major

    size_t n_steps() const { return t.size(); }
    std::span<const double> agent(size_t ti, size_t j) const {
        return {states.data() + (ti * header.n_agents + j) * 4, 4};
    }
    double* agent_mut(size_t ti, size_t j) {
        return states.data() + (ti * header.n_agents + j) * 4;
    }
};

inline nlohmann::json header_to_json(const TraceHeader& h) {
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& s : h.schedule) sched.push_back({s.start, s.end, s.phase});
    return {{"n_agents", h.n_agents},
            {"bounds", {h.bounds_w, h.bounds_h}},
            {"schedule", sched},
            {"seed", h.seed},
            {"dataset", h.dataset},
            {"stride", h.stride},
            {"eval_every", h.eval_every},
            {"objective", h.objective}};
}

inline TraceHeader header_from_json(const nlohmann::json& j) {
    TraceHeader h;
    h.n_agents = j.at("n_agents").get<size_t>();
    h.bounds_w = j.at("bounds").at(0).get<double>();
    h.bounds_h = j.at("bounds").at(1).get<double>();
    for (const auto& s : j.at("schedule"))
        h.schedule.push_back({s.at(0).get<long>(), s.at(1).get<long>(), s.at(2).get<int>()});
    h.seed = j.at("seed").get<uint64_t>();
    h.dataset = j.at("dataset").get<std::string>();
    h.stride = j.value("stride", 1L);
    h.eval_every = j.value("eval_every", 0L);
    if (j.contains("objective")) h.objective = j.at("objective").get<std::vector<double>>();
    return h;
}

// States quantized to 1e-6 at write time; files stay compact and re-reads
// are exact.
inline double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

inline void write_trace_jsonl(const std::string& path, const AgentTrace& tr) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write trace " + path);
    f << header_to_json(tr.header).dump() << "\n";
    const size_t N = tr.header.n_agents;
    for (size_t i = 0; i < tr.n_steps(); ++i) {
        nlohmann::json agents = nlohmann::json::array();
        for (size_t j = 0; j < N; ++j) {
            auto a = tr.agent(i, j);
            agents.push_back({quantize6(a[0]), quantize6(a[1]), quantize6(a[2]), quantize6(a[3])});
        }
        f << nlohmann::json{{"t", tr.t[i]}, {"agents", std::move(agents)}}.dump() << "\n";
    }
}

inline AgentTrace read_trace_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read trace " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError("trace " + path + " is empty");
    AgentTrace tr;
    tr.header = header_from_json(nlohmann::json::parse(line));
    const size_t N = tr.header.n_agents;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        tr.t.push_back(j.at("t").get<long>());
        const auto& agents = j.at("agents");
        if (agents.size() != N) throw IoError("trace record has wrong agent count");
        for (const auto& a : agents)
            for (int k = 0; k < 4; ++k) tr.states.push_back(a.at(size_t(k)).get<double>());
    }
    return tr;
}

// Keeps body steps 0, k, 2k, ...; schedule boundaries and the objective
// sampling period are remapped to the new body-index units. Ceiling keeps
// an emergent phase from appearing to start before it did.
inline AgentTrace downsample(const AgentTrace& tr, long k) {
    if (k < 1) throw ConfigError("downsample: stride must be >= 1");
    if (k == 1) return tr;
    if (tr.header.eval_every > 0 && tr.header.eval_every % k != 0)
        throw ConfigError("downsample: eval_every must be divisible by the stride");
    AgentTrace out;
    out.header = tr.header;
    out.header.stride = tr.header.stride * k;
    out.header.eval_every = tr.header.eval_every > 0 ? tr.header.eval_every / k : 0;
    for (auto& s : out.header.schedule) {
        s.start = (s.start + k - 1) / k;
        s.end = (s.end + k - 1) / k;
    }
    const size_t N = tr.header.n_agents;
    for (size_t i = 0; i < tr.n_steps(); i += size_t(k)) {
        out.t.push_back(tr.t[i]);
        const double* row = tr.states.data() + i * N * 4;
        out.states.insert(out.states.end(), row, row + N * 4);
    }
    return out;
}

} // namespace hstcl
