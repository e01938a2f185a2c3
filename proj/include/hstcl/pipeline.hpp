// Pipeline orchestration: simulate -> label -> train-agent -> score-agents ->
// coarse-grain -> train-system -> detect / detect-baseline -> evaluate ->
// compare, all driven by one JSON config. Stages communicate only through
// files in the run directory and each writes a manifest.
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hstcl/agent_detect.hpp"
#include "hstcl/agent_model.hpp"
#include "hstcl/baseline.hpp"
#include "hstcl/evalkit.hpp"
#include "hstcl/simkit.hpp"
#include "hstcl/system_model.hpp"

namespace hstcl {

struct SplitSpec {
    size_t train = 5, val = 5, test = 10;
};

struct PipelineConfig {
    std::string dataset = "flock";
    std::string output_dir = "runs/out";
    std::vector<uint64_t> seeds = {1};
    SimConfig sim;
    SplitSpec split;
    double delta = 5.0;
    long downsample_stride = 5;
    TrainHyper agent;  // w = 10
    TrainHyper system; // w = 40
    size_t grid_n = 20;
    double alpha = 0.05;
    size_t neighbor_budget = 0;
    BaselineConfig baseline;
    long theta = 20;
    size_t label_K = 10;
    // Axis the detector thresholds and the metrics run on: "eval" compares
    // on the objective-measure axis, "model" on the (downsampled) model-step
    // axis where the score series natively lives.
    std::string eval_axis = "eval";
    int threads = 0;

    PipelineConfig() {
        agent.w = 10;
        agent.D = 128;
        system.w = 40;
        system.D = 128;
    }

    void validate_config() const {
        if (split.train < 1 || split.val < 1 || split.test < 1)
            throw ConfigError("split counts must each be >= 1");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
        if (agent.eta < 0.0 || agent.eta > 1.0 || system.eta < 0.0 || system.eta > 1.0)
            throw ConfigError("eta must lie in [0, 1]");
        if (theta < 0) throw ConfigError("theta must be >= 0");
        if (eval_axis != "eval" && eval_axis != "model")
            throw ConfigError("eval.axis must be 'eval' or 'model'");
        if (downsample_stride < 1) throw ConfigError("downsample must be >= 1");
        if (sim.eval_every % downsample_stride != 0)
            throw ConfigError("eval_every must be divisible by downsample");
        if (grid_n < 1) throw ConfigError("grid_n must be >= 1");
        if (delta <= 0.0) throw ConfigError("delta must be > 0");
        if (agent.w < 1 || system.w < 1 || agent.D < 1 || system.D < 1)
            throw ConfigError("window sizes and widths must be >= 1");
        if (seeds.empty()) throw ConfigError("need at least one seed");
        validate(sim);
    }
};

inline void hyper_from_json(TrainHyper& h, const nlohmann::json& j) {
    h.w = j.value("w", h.w);
    h.D = j.value("D", h.D);
    h.kappa = j.value("kappa", h.kappa);
    h.epochs = j.value("epochs", h.epochs);
    h.B = j.value("B", h.B);
    h.eta = j.value("eta", h.eta);
    h.lr = j.value("lr", h.lr);
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    c.dataset = j.value("dataset", c.dataset);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();

    c.sim.dataset = c.dataset;
    if (c.dataset == "pedestrian") {
        c.sim.n_agents = 382;
        c.sim.world = 40.0;
    }
    if (j.contains("sim")) {
        const auto& s = j.at("sim");
        c.sim.n_agents = s.value("n_agents", c.sim.n_agents);
        c.sim.world = s.value("world", c.sim.world);
        c.sim.n_steps = s.value("n_steps", c.sim.n_steps);
        c.sim.eval_every = s.value("eval_every", c.sim.eval_every);
        c.sim.n_phases = s.value("n_phases", c.sim.n_phases);
        c.sim.schedule_jitter = s.value("schedule_jitter", c.sim.schedule_jitter);
    }
    if (j.contains("graph")) {
        c.delta = j.at("graph").value("delta", c.delta);
        c.downsample_stride = j.at("graph").value("downsample", c.downsample_stride);
    }
    if (j.contains("split")) {
        c.split.train = j.at("split").value("train", c.split.train);
        c.split.val = j.at("split").value("val", c.split.val);
        c.split.test = j.at("split").value("test", c.split.test);
    }
    if (j.contains("agent")) hyper_from_json(c.agent, j.at("agent"));
    if (j.contains("system")) hyper_from_json(c.system, j.at("system"));
    if (j.contains("detect")) {
        c.alpha = j.at("detect").value("alpha", c.alpha);
        c.neighbor_budget = j.at("detect").value("neighbor_budget", c.neighbor_budget);
        c.grid_n = j.at("detect").value("grid_n", c.grid_n);
    }
    if (j.contains("baseline")) {
        const auto& b = j.at("baseline");
        c.baseline.window = b.value("window", c.baseline.window);
        c.baseline.cusum_drift = b.value("cusum_drift", c.baseline.cusum_drift);
        c.baseline.cusum_threshold = b.value("cusum_threshold", c.baseline.cusum_threshold);
        c.baseline.mix = b.value("mix", c.baseline.mix);
        c.baseline.feedback_threshold =
            b.value("feedback_threshold", c.baseline.feedback_threshold);
        c.baseline.rolling_window = b.value("rolling_window", c.baseline.rolling_window);
        c.baseline.z = b.value("z", c.baseline.z);
    }
    if (j.contains("eval")) {
        c.theta = j.at("eval").value("theta", c.theta);
        c.label_K = j.at("eval").value("K", c.label_K);
        c.eval_axis = j.at("eval").value("axis", c.eval_axis);
    }
    c.threads = j.value("threads", c.threads);
    c.baseline.delta = c.delta;
    c.sim.record_stride = c.downsample_stride;
    c.validate_config();
    return c;
}

inline PipelineConfig load_config(const std::string& path,
                                  const std::vector<std::string>& overrides = {}) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path);
    nlohmann::json j;
    f >> j;
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key.path=value: " + ov);
        const std::string keypath = ov.substr(0, eq), raw = ov.substr(eq + 1);
        nlohmann::json val;
        try {
            val = nlohmann::json::parse(raw);
        } catch (...) {
            val = raw; // unquoted strings
        }
        nlohmann::json* node = &j;
        size_t pos = 0;
        for (;;) {
            const auto dot = keypath.find('.', pos);
            const std::string key = keypath.substr(pos, dot - pos);
            if (dot == std::string::npos) {
                (*node)[key] = val;
                break;
            }
            node = &(*node)[key];
            pos = dot + 1;
        }
    }
    return config_from_json(j);
}

// ---- run layout ----

struct RunId {
    std::string split; // train | val | test
    size_t index = 0;
    std::string name() const { return split + std::to_string(index); }
};

inline std::vector<RunId> all_runs(const PipelineConfig& c) {
    std::vector<RunId> out;
    for (size_t i = 0; i < c.split.train; ++i) out.push_back({"train", i});
    for (size_t i = 0; i < c.split.val; ++i) out.push_back({"val", i});
    for (size_t i = 0; i < c.split.test; ++i) out.push_back({"test", i});
    return out;
}

struct SeedPaths {
    std::filesystem::path root;

    std::filesystem::path trace(const RunId& r) const {
        return root / "traces" / (r.name() + ".jsonl");
    }
    std::filesystem::path labels(const RunId& r) const {
        return root / "labels" / (r.name() + ".json");
    }
    std::filesystem::path agent_ckpt() const { return root / "checkpoints" / "agent.json"; }
    std::filesystem::path system_ckpt() const { return root / "checkpoints" / "system.json"; }
    std::filesystem::path agent_log() const { return root / "logs" / "agent_train.csv"; }
    std::filesystem::path system_log() const { return root / "logs" / "system_train.csv"; }
    std::filesystem::path scores(const RunId& r) const {
        return root / "scores" / (r.name() + ".csv");
    }
    std::filesystem::path regions(const RunId& r) const {
        return root / "regions" / (r.name() + ".csv");
    }
    std::filesystem::path system_scores(const RunId& r) const {
        return root / "system" / (r.name() + ".csv");
    }
    std::filesystem::path detect(const RunId& r) const {
        return root / "detect" / (r.name() + ".json");
    }
    std::filesystem::path detect_agent_only(const RunId& r) const {
        return root / "detect_agent_only" / (r.name() + ".json");
    }
    std::filesystem::path baseline_counts(const RunId& r) const {
        return root / "baseline" / (r.name() + ".csv");
    }
    std::filesystem::path baseline_detect(const RunId& r) const {
        return root / "baseline" / (r.name() + ".json");
    }
    std::filesystem::path report() const { return root / "eval" / "report.json"; }
    std::filesystem::path plot(const RunId& r) const {
        return root / "plots" / (r.name() + ".csv");
    }
    std::filesystem::path manifest(const std::string& stage) const {
        return root / "manifests" / (stage + ".json");
    }
};

inline SeedPaths seed_paths(const PipelineConfig& c, uint64_t seed) {
    return {std::filesystem::path(c.output_dir) / ("seed_" + std::to_string(seed))};
}

inline void require_artifact(const std::filesystem::path& p, const std::string& producer) {
    if (!std::filesystem::exists(p))
        throw DependencyError("missing " + p.string() + "; run stage '" + producer + "' first");
}

// ---- small file helpers ----

inline void ensure_parent(const std::filesystem::path& p) {
    if (!p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
}

inline uint64_t file_hash(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot hash " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    ensure_parent(p);
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f << j.dump() << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot read " + p.string());
    nlohmann::json j;
    f >> j;
    return j;
}

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Manifest written by every stage: config hash, input hashes, outputs,
// wall time. Manifests are logs, not artifacts; determinism guarantees
// apply to the artifact files.
class StageManifest {
public:
    StageManifest(std::string stage, const SeedPaths& sp, uint64_t config_hash)
        : stage_(std::move(stage)), sp_(sp), start_(std::chrono::steady_clock::now()) {
        j_["stage"] = stage_;
        j_["config_hash"] = config_hash;
        j_["inputs"] = nlohmann::json::object();
        j_["outputs"] = nlohmann::json::array();
    }
    void input(const std::filesystem::path& p) { j_["inputs"][p.string()] = file_hash(p); }
    void output(const std::filesystem::path& p) { j_["outputs"].push_back(p.string()); }
    void commit() {
        j_["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start_)
                            .count();
        write_json(sp_.manifest(stage_), j_);
    }

private:
    std::string stage_;
    SeedPaths sp_;
    std::chrono::steady_clock::time_point start_;
    nlohmann::json j_;
};

inline uint64_t config_hash(const PipelineConfig& c) {
    // hash the fields that affect artifacts
    std::string s = c.dataset + "|" + std::to_string(c.sim.n_agents) + "|" +
                    std::to_string(c.sim.n_steps) + "|" + std::to_string(c.grid_n) + "|" +
                    std::to_string(c.agent.D) + "|" + std::to_string(c.system.D);
    return fnv1a64(s);
}

// ---- CSV I/O for the score-like series ----

inline void write_wide_csv(const std::filesystem::path& p, const std::string& id_col,
                           const std::string& value_col, const std::vector<double>& values,
                           size_t T, size_t N) {
    ensure_parent(p);
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f << "t," << id_col << "," << value_col << "\n";
    for (size_t t = 0; t < T; ++t)
        for (size_t j = 0; j < N; ++j)
            f << t << "," << j << "," << fmt_g17(values[t * N + j]) << "\n";
}

inline std::vector<double> read_wide_csv(const std::filesystem::path& p, size_t& T, size_t& N) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot read " + p.string());
    std::string line;
    std::getline(f, line); // header
    std::vector<double> vals;
    size_t max_t = 0, max_j = 0;
    std::vector<std::tuple<size_t, size_t, double>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const size_t t = std::stoul(line.substr(0, c1));
        const size_t j = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
        const double v = std::stod(line.substr(c2 + 1));
        rows.emplace_back(t, j, v);
        max_t = std::max(max_t, t);
        max_j = std::max(max_j, j);
    }
    T = max_t + 1;
    N = max_j + 1;
    vals.assign(T * N, 0.0);
    for (auto [t, j, v] : rows) vals[t * N + j] = v;
    return vals;
}

inline void write_series_csv(const std::filesystem::path& p, const std::vector<double>& series) {
    ensure_parent(p);
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f << "t,score\n";
    for (size_t t = 0; t < series.size(); ++t) f << t << "," << fmt_g17(series[t]) << "\n";
}

inline std::vector<double> read_series_csv(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot read " + p.string());
    std::string line;
    std::getline(f, line);
    std::vector<double> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(std::stod(line.substr(line.find(',') + 1)));
    }
    return out;
}

// ---- stages ----

inline uint64_t run_sim_seed(const PipelineConfig& c, uint64_t seed, const RunId& r) {
    return derive_seed(seed, c.dataset + "/" + r.name());
}

inline void stage_simulate(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("simulate", sp, config_hash(c));
    for (const RunId& r : all_runs(c)) {
        SimConfig sim = c.sim;
        sim.dataset = c.dataset;
        sim.seed = run_sim_seed(c, seed, r);
        sim.record_stride = c.downsample_stride;
        auto trace = simulate(sim);
        ensure_parent(sp.trace(r));
        write_trace_jsonl(sp.trace(r).string(), trace);
        man.output(sp.trace(r));
    }
    man.commit();
}

inline void stage_label(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("label", sp, config_hash(c));
    for (const RunId& r : all_runs(c)) {
        require_artifact(sp.trace(r), "simulate");
        man.input(sp.trace(r));
        auto trace = read_trace_jsonl(sp.trace(r).string());
        auto pts = label_offline(trace.header.objective, c.label_K);
        nlohmann::json j{{"K", c.label_K},
                         {"points", pts},
                         {"T_eval", trace.header.objective.size()}};
        write_json(sp.labels(r), j);
        man.output(sp.labels(r));
    }
    man.commit();
}

inline TraceTensor load_tensor(const PipelineConfig& c, const std::filesystem::path& trace_path) {
    auto trace = read_trace_jsonl(trace_path.string());
    if (trace.header.stride != c.downsample_stride) {
        if (trace.header.stride != 1)
            throw ConfigError("trace stride " + std::to_string(trace.header.stride) +
                              " does not match configured downsample");
        trace = downsample(trace, c.downsample_stride);
    }
    return build_trace_tensor(trace, c.delta, c.threads);
}

inline void write_train_log(const std::filesystem::path& p,
                            const std::vector<TrainLogRow>& rows, const char* loss_names[3]) {
    ensure_parent(p);
    std::ofstream f(p);
    f << "epoch,slice," << loss_names[0] << "," << loss_names[1] << "," << loss_names[2] << "\n";
    for (const auto& r : rows)
        f << r.epoch << "," << r.slice << "," << fmt_g17(r.L_T) << "," << fmt_g17(r.L_S) << ","
          << fmt_g17(r.L_total) << "\n";
}

inline void stage_train_agent(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("train-agent", sp, config_hash(c));
    std::vector<TraceTensor> tensors;
    for (const RunId& r : all_runs(c)) {
        if (r.split != "train") continue;
        require_artifact(sp.trace(r), "simulate");
        man.input(sp.trace(r));
        tensors.push_back(load_tensor(c, sp.trace(r)));
    }
    std::vector<const TraceTensor*> ptrs;
    for (const auto& t : tensors) ptrs.push_back(&t);
    TrainHyper h = c.agent;
    h.seed = derive_seed(seed, "agent-train-stage");
    h.threads = c.threads;
    std::vector<TrainLogRow> log;
    auto model = train_agent(ptrs, h, &log);
    ensure_parent(sp.agent_ckpt());
    save_checkpoint(sp.agent_ckpt().string(), model.online.P, model.target.P,
                    {h.D, h.w, h.seed, "hstcl-0.1"});
    const char* names[3] = {"L_T", "L_S", "L_Agent"};
    write_train_log(sp.agent_log(), log, names);
    man.output(sp.agent_ckpt());
    man.output(sp.agent_log());
    man.commit();
}

inline AgentModel load_agent_model(const PipelineConfig& c, const SeedPaths& sp) {
    AgentModel m;
    m.online = AgentNet::make(c.agent.D);
    m.target = AgentNet::make(c.agent.D);
    load_checkpoint(sp.agent_ckpt().string(), m.online.P, m.target.P);
    return m;
}

inline void stage_score_agents(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("score-agents", sp, config_hash(c));
    require_artifact(sp.agent_ckpt(), "train-agent");
    man.input(sp.agent_ckpt());
    auto model = load_agent_model(c, sp);
    for (const RunId& r : all_runs(c)) {
        require_artifact(sp.trace(r), "simulate");
        auto tt = load_tensor(c, sp.trace(r));
        auto scores = score_trace(model.online, tt, c.agent.w, c.alpha, c.threads,
                                  c.neighbor_budget, run_sim_seed(c, seed, r));
        write_wide_csv(sp.scores(r), "agent_id", "score", scores.s, scores.T, scores.N);
        man.output(sp.scores(r));
    }
    man.commit();
}

inline void stage_coarse_grain(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("coarse-grain", sp, config_hash(c));
    for (const RunId& r : all_runs(c)) {
        require_artifact(sp.trace(r), "simulate");
        require_artifact(sp.scores(r), "score-agents");
        man.input(sp.scores(r));
        auto tt = load_tensor(c, sp.trace(r));
        ScoreSeries scores;
        scores.s = read_wide_csv(sp.scores(r), scores.T, scores.N);
        auto grid = build_region_grid(0, 0, tt.bounds_w, tt.bounds_h, c.grid_n);
        auto rs = coarse_grain(scores, tt, grid);
        write_wide_csv(sp.regions(r), "region_id", "y", rs.y, rs.T, rs.M);
        man.output(sp.regions(r));
    }
    man.commit();
}

inline RegionSeries load_region_series(const PipelineConfig& c, const SeedPaths& sp,
                                       const RunId& r) {
    RegionSeries rs;
    rs.y = read_wide_csv(sp.regions(r), rs.T, rs.M);
    auto grid = build_region_grid(0, 0, 1, 1, c.grid_n); // adjacency only needs n
    if (grid.M() != rs.M) throw ConfigError("region csv does not match grid_n");
    rs.adj = grid.adj;
    rs.active.assign(rs.M, 1);
    finalize_region_inputs(rs);
    return rs;
}

inline void stage_train_system(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("train-system", sp, config_hash(c));
    std::vector<RegionSeries> series;
    for (const RunId& r : all_runs(c)) {
        if (r.split != "train") continue;
        require_artifact(sp.regions(r), "coarse-grain");
        man.input(sp.regions(r));
        series.push_back(load_region_series(c, sp, r));
    }
    std::vector<const RegionSeries*> ptrs;
    for (const auto& s : series) ptrs.push_back(&s);
    TrainHyper h = c.system;
    h.seed = derive_seed(seed, "system-train-stage");
    h.threads = c.threads;
    std::vector<TrainLogRow> log;
    auto model = train_system(ptrs, h, &log);
    ensure_parent(sp.system_ckpt());
    save_checkpoint(sp.system_ckpt().string(), model.online.P, model.target.P,
                    {h.D, h.w, h.seed, "hstcl-0.1"});
    const char* names[3] = {"L_ST", "L_SS", "L_System"};
    write_train_log(sp.system_log(), log, names);
    man.output(sp.system_ckpt());
    man.output(sp.system_log());
    man.commit();
}

inline std::vector<long> load_truth(const SeedPaths& sp, const RunId& r) {
    return read_json(sp.labels(r)).at("points").get<std::vector<long>>();
}

// evaluation-axis period of the model-step series
inline long eval_every_body(const PipelineConfig& c) {
    return c.sim.eval_every / c.downsample_stride;
}

inline void stage_detect(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("detect", sp, config_hash(c));
    require_artifact(sp.system_ckpt(), "train-system");
    man.input(sp.system_ckpt());
    SystemModel model;
    model.online = SystemNet::make(c.system.D);
    model.target = SystemNet::make(c.system.D);
    load_checkpoint(sp.system_ckpt().string(), model.online.P, model.target.P);

    // score series on the configured detection axis, plus agent-only means
    const bool model_axis = c.eval_axis == "model";
    std::map<std::string, std::vector<double>> sys_series, agent_series;
    for (const RunId& r : all_runs(c)) {
        require_artifact(sp.regions(r), "coarse-grain");
        require_artifact(sp.scores(r), "score-agents");
        auto rs = load_region_series(c, sp, r);
        auto series = system_score_series(model.online, rs, c.system.w, c.threads);
        write_series_csv(sp.system_scores(r), series);
        man.output(sp.system_scores(r));
        sys_series[r.name()] =
            model_axis ? series : subsample_series(series, eval_every_body(c));

        ScoreSeries scores;
        scores.s = read_wide_csv(sp.scores(r), scores.T, scores.N);
        auto mean = scores.mean_series();
        agent_series[r.name()] =
            model_axis ? mean : subsample_series(mean, eval_every_body(c));
    }

    // truth labels mapped onto the detection axis (eval sample e sits at
    // model step e * eval_every_body exactly)
    auto truth_on_axis = [&](const RunId& r) {
        auto pts = load_truth(sp, r);
        if (model_axis)
            for (long& p : pts) p *= eval_every_body(c);
        return pts;
    };

    // thresholds from the validation split; each method calibrates its own
    auto calibrate = [&](const std::map<std::string, std::vector<double>>& series) {
        std::vector<ValidationRun> runs;
        for (const RunId& r : all_runs(c)) {
            if (r.split != "val") continue;
            require_artifact(sp.labels(r), "label");
            runs.push_back({series.at(r.name()), truth_on_axis(r)});
        }
        return search_threshold(runs, c.theta);
    };
    const double c_sys = calibrate(sys_series);
    const double c_agent = calibrate(agent_series);
    const std::string axis = model_axis ? "model" : "eval";

    for (const RunId& r : all_runs(c)) {
        auto pts = detect_change_points(sys_series.at(r.name()), c_sys);
        write_json(sp.detect(r), {{"threshold", c_sys}, {"points", pts}, {"axis", axis}});
        man.output(sp.detect(r));
        auto apts = detect_change_points(agent_series.at(r.name()), c_agent);
        write_json(sp.detect_agent_only(r),
                   {{"threshold", c_agent}, {"points", apts}, {"axis", axis}});
        man.output(sp.detect_agent_only(r));
    }
    man.commit();
}

inline void stage_detect_baseline(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("detect-baseline", sp, config_hash(c));
    std::map<std::string, std::vector<double>> counts_eval;
    for (const RunId& r : all_runs(c)) {
        require_artifact(sp.trace(r), "simulate");
        auto tt = load_tensor(c, sp.trace(r));
        BaselineConfig bc = c.baseline;
        bc.delta = c.delta;
        bc.seed = run_sim_seed(c, seed, r);
        auto run = run_detect_baseline(tt, bc, c.threads);
        auto eval_counts = bucket_sum_series(run.feedback_counts, eval_every_body(c));
        write_series_csv(sp.baseline_counts(r), eval_counts);
        man.output(sp.baseline_counts(r));
        counts_eval[r.name()] = std::move(eval_counts);
    }
    // calibrate z on the validation split, scoring F1 on the metric axis
    const bool model_axis = c.eval_axis == "model";
    const long k = eval_every_body(c);
    auto to_metric_axis = [&](std::vector<long> pts) {
        for (long& p : pts) p = model_axis ? (p - 1) * k : p - 1;
        return pts;
    };
    auto truth_on_axis = [&](const RunId& r) {
        auto pts = load_truth(sp, r);
        if (model_axis)
            for (long& p : pts) p *= k;
        return pts;
    };
    const std::vector<double> z_grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0};
    double best_z = c.baseline.z, best_f1 = -1.0;
    for (double z : z_grid) {
        double mean_f1 = 0.0;
        size_t n = 0;
        for (const RunId& r : all_runs(c)) {
            if (r.split != "val") continue;
            require_artifact(sp.labels(r), "label");
            auto det = to_metric_axis(
                detect_global_baseline(counts_eval.at(r.name()), c.baseline.rolling_window, z));
            mean_f1 += f1_at_tolerance(truth_on_axis(r), det, c.theta).f1;
            n += 1;
        }
        mean_f1 /= double(n);
        if (mean_f1 > best_f1) {
            best_f1 = mean_f1;
            best_z = z;
        }
    }
    for (const RunId& r : all_runs(c)) {
        auto pts =
            detect_global_baseline(counts_eval.at(r.name()), c.baseline.rolling_window, best_z);
        write_json(sp.baseline_detect(r), {{"threshold", best_z}, {"points", pts}, {"axis", "eval"}});
        man.output(sp.baseline_detect(r));
    }
    man.commit();
}

struct MethodMetrics {
    double threshold = 0.0;
    std::vector<nlohmann::json> runs;
    double mean_f1 = 0.0, mean_cover = 0.0;
};

inline void stage_evaluate(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("evaluate", sp, config_hash(c));
    const std::vector<std::pair<std::string, std::function<std::filesystem::path(const RunId&)>>>
        methods{{"hstcl", [&](const RunId& r) { return sp.detect(r); }},
                {"hstcl_agent", [&](const RunId& r) { return sp.detect_agent_only(r); }},
                {"detect_baseline", [&](const RunId& r) { return sp.baseline_detect(r); }}};

    nlohmann::json out{{"dataset", c.dataset},
                       {"theta", c.theta},
                       {"seed", seed},
                       {"methods", nlohmann::json::object()}};
    for (const auto& [name, path_of] : methods) {
        MethodMetrics mm;
        bool present = true;
        for (const RunId& r : all_runs(c)) {
            if (r.split != "test") continue;
            if (!std::filesystem::exists(path_of(r))) present = false;
        }
        if (!present) continue; // comparative report includes whichever methods ran
        const bool model_axis = c.eval_axis == "model";
        const long k = eval_every_body(c);
        size_t n = 0;
        for (const RunId& r : all_runs(c)) {
            if (r.split != "test") continue;
            require_artifact(sp.labels(r), "label");
            const auto det_j = read_json(path_of(r));
            mm.threshold = det_j.at("threshold").get<double>();
            auto det = shift_detections(det_j.at("points").get<std::vector<long>>());
            const std::string det_axis = det_j.value("axis", "eval");
            if (model_axis && det_axis == "eval")
                for (long& p : det) p *= k; // eval sample e sits at model step e*k
            auto truth = load_truth(sp, r);
            if (model_axis)
                for (long& p : truth) p *= k;
            const long T_eval = read_json(sp.labels(r)).at("T_eval").get<long>();
            const long T_axis = model_axis ? T_eval * k : T_eval;
            const auto f1 = f1_at_tolerance(truth, det, c.theta);
            const double cov = covering(truth, det, T_axis);
            mm.runs.push_back({{"run", r.name()},
                               {"tp", f1.tp},
                               {"fp", f1.fp},
                               {"precision", f1.precision},
                               {"recall", f1.recall},
                               {"f1", f1.f1},
                               {"covering", cov}});
            mm.mean_f1 += f1.f1;
            mm.mean_cover += cov;
            n += 1;
        }
        mm.mean_f1 /= double(n);
        mm.mean_cover /= double(n);
        out["methods"][name] = {{"threshold", mm.threshold},
                                {"runs", mm.runs},
                                {"mean_f1", mm.mean_f1},
                                {"mean_cover", mm.mean_cover}};
        man.output(sp.report());
    }
    write_json(sp.report(), out);
    man.commit();
}

inline void stage_plot_csv(const PipelineConfig& c, uint64_t seed) {
    const auto sp = seed_paths(c, seed);
    StageManifest man("plot-csv", sp, config_hash(c));
    for (const RunId& r : all_runs(c)) {
        require_artifact(sp.system_scores(r), "detect");
        require_artifact(sp.detect(r), "detect");
        auto series = read_series_csv(sp.system_scores(r));
        if (c.eval_axis != "model") series = subsample_series(series, eval_every_body(c));
        const auto det_j = read_json(sp.detect(r));
        const double thr = det_j.at("threshold").get<double>();
        auto pts = det_j.at("points").get<std::vector<long>>();
        ensure_parent(sp.plot(r));
        std::ofstream f(sp.plot(r));
        f << "t,score,threshold,is_change_point\n";
        for (size_t t = 0; t < series.size(); ++t) {
            const bool is_cp = std::find(pts.begin(), pts.end(), long(t)) != pts.end();
            f << t << "," << fmt_g17(series[t]) << "," << fmt_g17(thr) << "," << (is_cp ? 1 : 0)
              << "\n";
        }
        man.output(sp.plot(r));
    }
    man.commit();
}

inline void run_stage(const PipelineConfig& c, const std::string& stage) {
    for (uint64_t seed : c.seeds) {
        if (stage == "simulate")
            stage_simulate(c, seed);
        else if (stage == "label")
            stage_label(c, seed);
        else if (stage == "train-agent")
            stage_train_agent(c, seed);
        else if (stage == "score-agents")
            stage_score_agents(c, seed);
        else if (stage == "coarse-grain")
            stage_coarse_grain(c, seed);
        else if (stage == "train-system")
            stage_train_system(c, seed);
        else if (stage == "detect")
            stage_detect(c, seed);
        else if (stage == "detect-baseline")
            stage_detect_baseline(c, seed);
        else if (stage == "evaluate")
            stage_evaluate(c, seed);
        else if (stage == "plot-csv")
            stage_plot_csv(c, seed);
        else
            throw ConfigError("unknown stage: " + stage);
    }
}

inline const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages{
        "simulate",     "label",  "train-agent",     "score-agents", "coarse-grain",
        "train-system", "detect", "detect-baseline", "evaluate"};
    return stages;
}

// ---- comparison across seeds ----

struct CompareRow {
    std::string method;
    double f1_mean = 0, f1_std = 0, cover_mean = 0, cover_std = 0;
    size_t n_seeds = 0;
};

inline std::vector<CompareRow> compare_reports(const std::vector<nlohmann::json>& reports) {
    if (reports.empty()) throw ConfigError("compare: need at least one report");
    const long theta = reports.front().at("theta").get<long>();
    const std::string dataset = reports.front().at("dataset").get<std::string>();
    for (const auto& r : reports) {
        if (r.at("theta").get<long>() != theta)
            throw ConfigError("compare: reports disagree on theta");
        if (r.at("dataset").get<std::string>() != dataset)
            throw ConfigError("compare: reports disagree on dataset");
    }
    std::map<std::string, std::vector<std::pair<double, double>>> by_method;
    for (const auto& r : reports)
        for (const auto& [name, m] : r.at("methods").items())
            by_method[name].emplace_back(m.at("mean_f1").get<double>(),
                                         m.at("mean_cover").get<double>());
    std::vector<CompareRow> rows;
    for (const auto& [name, vals] : by_method) {
        CompareRow row;
        row.method = name;
        row.n_seeds = vals.size();
        for (auto [f, c] : vals) {
            row.f1_mean += f;
            row.cover_mean += c;
        }
        row.f1_mean /= double(vals.size());
        row.cover_mean /= double(vals.size());
        for (auto [f, c] : vals) {
            row.f1_std += (f - row.f1_mean) * (f - row.f1_mean);
            row.cover_std += (c - row.cover_mean) * (c - row.cover_mean);
        }
        row.f1_std = std::sqrt(row.f1_std / double(vals.size()));
        row.cover_std = std::sqrt(row.cover_std / double(vals.size()));
        rows.push_back(row);
    }
    return rows;
}

inline void write_compare(const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path,
                          const std::vector<CompareRow>& rows) {
    ensure_parent(csv_path);
    std::ofstream f(csv_path);
    f << "method,f1_mean,f1_std,cover_mean,cover_std,n_seeds\n";
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        f << r.method << "," << fmt_g17(r.f1_mean) << "," << fmt_g17(r.f1_std) << ","
          << fmt_g17(r.cover_mean) << "," << fmt_g17(r.cover_std) << "," << r.n_seeds << "\n";
        j.push_back({{"method", r.method},
                     {"f1_mean", r.f1_mean},
                     {"f1_std", r.f1_std},
                     {"cover_mean", r.cover_mean},
                     {"cover_std", r.cover_std},
                     {"n_seeds", r.n_seeds}});
    }
    write_json(json_path, j);
}

} // namespace hstcl
