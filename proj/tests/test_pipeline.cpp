#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hstcl/pipeline.hpp"

using namespace hstcl;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config_json(const std::string& out_dir) {
    return {
        {"dataset", "flock"},
        {"output_dir", out_dir},
        {"seeds", {7}},
        {"sim", {{"n_agents", 20}, {"world", 15.0}, {"n_steps", 2000}, {"n_phases", 2}}},
        {"split", {{"train", 2}, {"val", 2}, {"test", 2}}},
        {"graph", {{"delta", 5.0}, {"downsample", 5}}},
        {"agent", {{"w", 6}, {"D", 8}, {"kappa", 2}, {"epochs", 1}, {"B", 4}}},
        {"system", {{"w", 10}, {"D", 8}, {"kappa", 2}, {"epochs", 1}, {"B", 4}}},
        {"detect", {{"alpha", 0.05}, {"grid_n", 3}}},
        {"baseline", {{"window", 10}, {"rolling_window", 12}}},
        {"eval", {{"theta", 3}, {"K", 4}}},
        {"threads", 2},
    };
}

PipelineConfig tiny_config(const std::string& out_dir) {
    return config_from_json(tiny_config_json(out_dir));
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("config validation rejects bad values", "[pipeline]") {
    auto j = tiny_config_json("tmp_cfg");
    j["split"]["train"] = 0;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = tiny_config_json("tmp_cfg");
    j["detect"]["alpha"] = 1.5;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = tiny_config_json("tmp_cfg");
    j["graph"]["downsample"] = 7; // eval_every 50 not divisible
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
}

TEST_CASE("dotted overrides reach nested keys", "[pipeline]") {
    const std::string dir = "pipeline_cfg_test";
    fs::create_directories(dir);
    {
        std::ofstream f(dir + "/config.json");
        f << tiny_config_json("unused").dump();
    }
    auto cfg = load_config(dir + "/config.json", {"agent.D=16", "detect.alpha=0.2",
                                                  "output_dir=pipeline_cfg_out"});
    CHECK(cfg.agent.D == 16);
    CHECK(cfg.alpha == Catch::Approx(0.2));
    CHECK(cfg.output_dir == "pipeline_cfg_out");
    fs::remove_all(dir);
}

TEST_CASE("missing upstream artifacts name the producing stage", "[pipeline]") {
    auto cfg = tiny_config("pipeline_dep_test");
    fs::remove_all(cfg.output_dir);
    try {
        run_stage(cfg, "train-agent");
        FAIL("expected a dependency error");
    } catch (const DependencyError& e) {
        CHECK(std::string(e.what()).find("simulate") != std::string::npos);
    }
    fs::remove_all(cfg.output_dir);
}

TEST_CASE("tiny end-to-end pipeline produces a full report", "[pipeline][slow]") {
    auto cfg = tiny_config("pipeline_e2e_test");
    fs::remove_all(cfg.output_dir);
    for (const auto& stage : pipeline_stages()) run_stage(cfg, stage);
    run_stage(cfg, "plot-csv");

    const auto sp = seed_paths(cfg, 7);
    auto report = read_json(sp.report());
    CHECK(report.at("dataset") == "flock");
    REQUIRE(report.at("methods").contains("hstcl"));
    REQUIRE(report.at("methods").contains("hstcl_agent"));
    REQUIRE(report.at("methods").contains("detect_baseline"));
    for (const auto& [name, m] : report.at("methods").items()) {
        CHECK(m.at("runs").size() == 2);
        for (const auto& run : m.at("runs")) {
            CHECK(run.at("f1").get<double>() >= 0.0);
            CHECK(run.at("f1").get<double>() <= 1.0);
            CHECK(run.at("covering").get<double>() >= 0.0);
            CHECK(run.at("covering").get<double>() <= 1.0);
        }
    }

    // checkpoints round-trip exactly
    AgentModel m;
    m.online = AgentNet::make(cfg.agent.D);
    m.target = AgentNet::make(cfg.agent.D);
    auto meta = load_checkpoint(sp.agent_ckpt().string(), m.online.P, m.target.P);
    CHECK(meta.D == cfg.agent.D);
    CHECK(meta.w == cfg.agent.w);
    CHECK(all_finite(m.online.P.flat()));

    // plot CSV exists with the expected header
    auto plot = slurp(sp.plot({"test", 0}));
    CHECK(plot.rfind("t,score,threshold,is_change_point", 0) == 0);

    // manifests recorded inputs and wall time
    auto man = read_json(sp.manifest("detect"));
    CHECK(man.contains("wall_ms"));
    CHECK(man.at("stage") == "detect");

    fs::remove_all(cfg.output_dir);
}

TEST_CASE("re-running stages yields byte-identical artifacts", "[pipeline][slow]") {
    auto cfg = tiny_config("pipeline_determinism_test");
    fs::remove_all(cfg.output_dir);
    for (const auto& stage : pipeline_stages()) run_stage(cfg, stage);
    const auto sp = seed_paths(cfg, 7);

    const auto trace_bytes = slurp(sp.trace({"train", 0}));
    const auto score_bytes = slurp(sp.scores({"test", 1}));
    const auto report_bytes = slurp(sp.report());
    const auto detect_bytes = slurp(sp.detect({"val", 0}));

    // stage isolation: deleting downstream artifacts leaves upstream intact
    fs::remove_all(sp.root / "eval");
    fs::remove_all(sp.root / "detect");
    CHECK(slurp(sp.trace({"train", 0})) == trace_bytes);

    for (const auto& stage : pipeline_stages()) run_stage(cfg, stage);
    CHECK(slurp(sp.trace({"train", 0})) == trace_bytes);
    CHECK(slurp(sp.scores({"test", 1})) == score_bytes);
    CHECK(slurp(sp.report()) == report_bytes);
    CHECK(slurp(sp.detect({"val", 0})) == detect_bytes);
    fs::remove_all(cfg.output_dir);
}

TEST_CASE("compare aggregates reports and rejects mismatches", "[pipeline]") {
    nlohmann::json r1{{"dataset", "flock"},
                      {"theta", 20},
                      {"seed", 1},
                      {"methods",
                       {{"hstcl", {{"mean_f1", 0.8}, {"mean_cover", 0.7}}},
                        {"detect_baseline", {{"mean_f1", 0.5}, {"mean_cover", 0.6}}}}}};
    nlohmann::json r2 = r1;
    r2["seed"] = 2;
    r2["methods"]["hstcl"]["mean_f1"] = 0.6;
    r2["methods"]["detect_baseline"]["mean_f1"] = 0.4;

    auto single = compare_reports({r1});
    REQUIRE(single.size() == 2);

    auto rows = compare_reports({r1, r2});
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        if (row.method == "hstcl") {
            CHECK(row.f1_mean == Catch::Approx(0.7));
            CHECK(row.f1_std == Catch::Approx(0.1));
            CHECK(row.n_seeds == 2);
        } else {
            CHECK(row.f1_mean == Catch::Approx(0.45));
        }
    }

    nlohmann::json bad = r2;
    bad["theta"] = 10;
    CHECK_THROWS_AS(compare_reports({r1, bad}), ConfigError);
    CHECK_THROWS_AS(compare_reports({}), ConfigError);

    write_compare("cmp_test.csv", "cmp_test.json", rows);
    auto j = read_json("cmp_test.json");
    CHECK(j.size() == 2);
    fs::remove("cmp_test.csv");
    fs::remove("cmp_test.json");
}
