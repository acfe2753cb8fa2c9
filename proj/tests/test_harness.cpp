#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "rmfg/errors.hpp"
#include "rmfg/harness.hpp"
#include "rmfg/io.hpp"
#include "support.hpp"

using namespace rmfg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("rmfg_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* small_config = R"({
  "grid": {"n_cells": 15, "n_steps": 40},
  "experiment": {"value_samples": 30, "residual_samples": 10, "n_paths": 200,
                 "sim_steps": 40, "w_cells": 15}
})";

std::string error_of(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
    const RunConfig c = parse_config_text("");
    const RunConfig d;
    CHECK(config_json(c) == config_json(d));
    CHECK(c.experiment.n_cells == 41);
    CHECK(c.experiment.N_list == std::vector<std::size_t>{2, 3});
    CHECK(config_hash(parse_config_text(" \n ")) == config_hash(d));
    const auto dir = scratch("empty");
    io::write_text(dir / "empty.json", "");
    CHECK(config_json(parse_config(dir / "empty.json")) == config_json(d));
    fs::remove_all(dir);
}

TEST_CASE("strict schema") {
    const std::string gamma = error_of(R"({"experiment": {"gamma": 0.1}})");
    CHECK(gamma.find("gamma") != std::string::npos);
    CHECK(gamma.find("experiment") != std::string::npos);
    CHECK(error_of(R"({"gamma": 1})").find("gamma") != std::string::npos);
    CHECK(error_of(R"({"experiment": {"N_list": [5]}})").find("N_list") != std::string::npos);
    CHECK(error_of(R"({"experiment": {"N_list": [3, 2]}})").find("N_list") != std::string::npos);
    CHECK(error_of(R"({"experiment": {"tolerances": {"picard_tol": 0}}})").find("picard_tol") != std::string::npos);
    CHECK(error_of(R"({"experiment": {"tolerances": {"picrad_tol": 1e-9}}})").find("picrad_tol") !=
          std::string::npos);
    CHECK(error_of(R"({"grid": {"n_cells": "many"}})").find("grid.n_cells") != std::string::npos);
    CHECK(error_of(R"({"grid": {"n_cells": 4}})").find("n_cells") != std::string::npos);
    CHECK(error_of(R"({"model": {"horizon_T": -1}})").find("model") != std::string::npos);
    CHECK(error_of(R"({"model": {"diffusion": {"kind": "cubic"}}})").find("kind") != std::string::npos);
    CHECK(error_of(R"({"output": {"formats": ["xml"]}})").find("xml") != std::string::npos);
    CHECK_FALSE(error_of("[1, 2]").empty());
    CHECK_FALSE(error_of("{").empty());
    CHECK_THROWS_AS(parse_config("/nonexistent/rmfg.json"), ConfigError);

    const RunConfig c = parse_config_text(R"({
      "model": {"c_F": 0.5, "diffusion": {"kind": "profile", "amplitude": 0.2}},
      "experiment": {"N_list": [2, 3, 4], "m0": "uniform", "seed": 9,
                     "budgets": {"allow_coarse": true}}})");
    CHECK(c.experiment.model.c_F == 0.5);
    CHECK(c.experiment.model.diffusion.kind == DiffusionSpec::Kind::profile);
    CHECK(c.experiment.seed == 9);
    CHECK(c.experiment.nash.allow_coarse);
    // the canonical form parses back to itself
    CHECK(config_json(parse_config_text(config_json(c))) == config_json(c));
}

TEST_CASE("exit codes") {
    std::ostringstream log;
    const auto dir = scratch("exit");
    RunOverrides o;
    o.output_dir = (dir / "missing").string();
    CHECK(run_command("check", fs::path("/nonexistent/rmfg.json"), o, log) == exit_config);
    CHECK(run_command("fly", RunConfig{}, o, log) == exit_config);

    RunConfig four = parse_config_text(small_config);
    four.experiment.N_list = {2, 4};
    o.output_dir = (dir / "budget").string();
    CHECK(run_command("solve-nash", four, o, log) == exit_budget);

    RunConfig stiff = parse_config_text(small_config);
    stiff.experiment.mfg.max_iter = 1;
    stiff.experiment.m0.assign(15, 0.0);
    stiff.experiment.m0[2] = 1.0;
    o.output_dir = (dir / "stiff").string();
    CHECK(run_command("solve-mfg", stiff, o, log) == exit_numerical);
    fs::remove_all(dir);
}

TEST_CASE("check on defaults passes and writes a manifest") {
    const auto dir = scratch("check");
    std::ostringstream log;
    RunOverrides o;
    o.output_dir = dir.string();
    REQUIRE(run_command("check", RunConfig{}, o, log) == exit_ok);
    const auto check = nlohmann::json::parse(io::read_text(dir / "check.json"));
    CHECK(check.at("pass") == true);
    const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    for (const char* key : {"command", "config", "config_hash", "seed", "versions", "wall_time_seconds", "outputs"}) {
        CHECK(manifest.contains(key));
    }
    // the stored config reproduces the run
    const RunConfig again = parse_config_text(manifest.at("config").dump());
    CHECK(config_hash(again) == config_hash(RunConfig{}));
    fs::remove_all(dir);
}

TEST_CASE("converge emits the report schema and reruns identically") {
    const auto dir = scratch("converge");
    std::ostringstream log;
    const RunConfig c = parse_config_text(small_config);
    RunOverrides o;
    o.output_dir = (dir / "a").string();
    REQUIRE(run_command("converge", c, o, log) == exit_ok);
    const auto report = nlohmann::json::parse(io::read_text(dir / "a" / "report.json"));
    for (const char* key : {"value_gap", "w_gap", "trajectory_gap"}) CHECK(report.at("metrics").contains(key));
    o.output_dir = (dir / "b").string();
    REQUIRE(run_command("converge", c, o, log) == exit_ok);
    const auto cmp = golden_compare(dir / "b", dir / "a", 0.0);
    INFO(cmp.failures.size());
    CHECK(cmp.pass);
    CHECK(cmp.compared_values > 10);
    fs::remove_all(dir);
}

TEST_CASE("command outputs round trip") {
    const auto dir = scratch("io");
    std::ostringstream log;
    const RunConfig c = parse_config_text(small_config);
    RunOverrides o;
    o.output_dir = (dir / "mfg").string();
    REQUIRE(run_command("solve-mfg", c, o, log) == exit_ok);
    const auto u = io::read_matrix_csv(dir / "mfg" / "u.csv");
    CHECK(u.size() == 41);
    CHECK(u.front().size() == 15);

    o.output_dir = (dir / "nash").string();
    REQUIRE(run_command("solve-nash", c, o, log) == exit_ok);
    const Model model = experiment_model(c.experiment, 15);
    const auto v = solve_nash(3, model, c.experiment.time());
    const auto back = io::read_tensor_binary(dir / "nash" / "nash_N3.bin", model.grid(), c.experiment.time());
    CHECK(back.N() == 3);
    CHECK(back.values() == v.values());
    CHECK_THROWS_AS(io::read_tensor_binary(dir / "nash" / "nash_N3.bin", build_grid(16, model.grid().domain()),
                                           c.experiment.time()),
                    InvalidArgument);

    o.output_dir = (dir / "master").string();
    REQUIRE(run_command("eval-master", c, o, log) == exit_ok);
    CHECK_FALSE(fs::exists(dir / "master" / "dm_kernel.csv"));
    CHECK(io::read_field_csv(dir / "master" / "u_slice.csv").size() == 15);
    o.expensive = true;
    REQUIRE(run_command("eval-master", c, o, log) == exit_ok);
    CHECK(io::read_matrix_csv(dir / "master" / "dm_kernel.csv").size() == 15);
    fs::remove_all(dir);
}

TEST_CASE("golden comparison") {
    const auto dir = scratch("golden");
    std::ostringstream log;
    const RunConfig c = parse_config_text(small_config);
    RunOverrides o;
    o.output_dir = (dir / "run").string();
    REQUIRE(run_command("simulate", c, o, log) == exit_ok);
    CHECK(golden_compare(dir / "run", dir / "run").pass);

    // deterministic values: a perturbation beyond rtol is named
    io::write_text(dir / "g1" / "u.csv", "1,2,3\n4,5,6\n");
    io::write_text(dir / "r1" / "u.csv", "1,2,3\n4,5.0001,6\n");
    auto r = golden_compare(dir / "r1", dir / "g1");
    CHECK_FALSE(r.pass);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].find("u.csv: row 1 column 1") != std::string::npos);
    CHECK(golden_compare(dir / "r1", dir / "g1", 1e-3).pass);

    // Monte Carlo rows carry a stderr column and compare by band
    io::write_text(dir / "g2" / "summary.csv", "metric,N,value,stderr\ngap,2,1.00,0.01\n");
    io::write_text(dir / "r2" / "summary.csv", "metric,N,value,stderr\ngap,2,1.02,0.012\n");
    CHECK(golden_compare(dir / "r2", dir / "g2").pass);
    io::write_text(dir / "r2" / "summary.csv", "metric,N,value,stderr\ngap,2,1.10,0.01\n");
    r = golden_compare(dir / "r2", dir / "g2");
    CHECK_FALSE(r.pass);
    CHECK(r.failures[0].find("3 sigma") != std::string::npos);

    // the same in JSON value/stderr pairs
    io::write_text(dir / "g3" / "m.json", R"({"gap": {"value": 1.0, "stderr": 0.01}, "n": 3})");
    io::write_text(dir / "r3" / "m.json", R"({"gap": {"value": 1.02, "stderr": 0.01}, "n": 3})");
    CHECK(golden_compare(dir / "r3", dir / "g3").pass);
    io::write_text(dir / "r3" / "m.json", R"({"gap": {"value": 1.02, "stderr": 0.01}, "n": 4})");
    r = golden_compare(dir / "r3", dir / "g3");
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].find("m.json.n") != std::string::npos);

    // a file missing from the run is a named failure
    fs::remove(dir / "r3" / "m.json");
    r = golden_compare(dir / "r3", dir / "g3");
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].find("m.json: missing") != std::string::npos);
    fs::remove_all(dir);
}
