#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "reachguard/config.hpp"

using namespace reachguard;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    std::ofstream out(name);
    out << content;
    return name;
}

}  // namespace

TEST_CASE("minimal config applies defaults") {
    const auto path = write_temp("cfg_minimal.cfg", "[system]\nname = \"double_integrator\"\n");
    const RunConfig cfg = RunConfig::load(path);
    CHECK(cfg.get_string("system.name") == "double_integrator");
    CHECK(cfg.get_double("solver.gamma") == doctest::Approx(0.9999));
    CHECK(cfg.get_double("agent.epsilon") == doctest::Approx(3.0));
    CHECK(cfg.get_long("critic.batch_size") == 64);
    std::remove(path.c_str());
}

TEST_CASE("range violations are rejected with the offending value") {
    const auto path = write_temp("cfg_bad.cfg", "[solver]\ngamma = 1.2\n");
    try {
        RunConfig::load(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("solver.gamma") != std::string::npos);
        CHECK(msg.find("1.2") != std::string::npos);
    }
    std::remove(path.c_str());

    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("critic.tau", "0"), ConfigError);   // tau in (0, 1]
    CHECK_THROWS_AS(cfg.set("agent.epsilon", "-1"), ConfigError);
    cfg.set("critic.tau", "1");
    cfg.set("agent.epsilon", "0");
}

TEST_CASE("unknown keys are rejected by name") {
    const auto path = write_temp("cfg_unknown.cfg", "[solver]\ngamna = 0.9\n");
    try {
        RunConfig::load(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("solver.gamna") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("later sets override file values") {
    const auto path = write_temp("cfg_override.cfg", "[agent]\nepsilon = 4.2\n");
    RunConfig cfg = RunConfig::load(path);
    CHECK(cfg.get_double("agent.epsilon") == doctest::Approx(4.2));
    cfg.set("agent.epsilon", "3.0");  // flag overrides beat file values
    CHECK(cfg.get_double("agent.epsilon") == doctest::Approx(3.0));
    std::remove(path.c_str());
}

TEST_CASE("lists and booleans parse") {
    RunConfig cfg;
    cfg.set("solver.grid", "81, 81");
    const auto grid = cfg.get_int_list("solver.grid");
    REQUIRE(grid.size() == 2);
    CHECK(grid[0] == 81);
    cfg.set("critic.prioritized", "true");
    CHECK(cfg.get_bool("critic.prioritized"));
    CHECK_THROWS_AS(cfg.set("solver.grid", "81,foo"), ConfigError);
}

TEST_CASE("manifests reload as configs") {
    RunConfig cfg;
    cfg.set("agent.epsilon", "4.2");
    cfg.set("system.name", "bike");
    RunManifest manifest;
    manifest.command = "test";
    manifest.config = cfg.to_json();
    manifest.seeds = {7};
    manifest.write("cfg_manifest.json");

    const RunConfig back = RunConfig::load("cfg_manifest.json");
    CHECK(back.get_double("agent.epsilon") == doctest::Approx(4.2));
    CHECK(back.get_string("system.name") == "bike");
    std::remove("cfg_manifest.json");
}

TEST_CASE("every key carries a documented default") {
    const auto& docs = RunConfig::documented_defaults();
    CHECK(docs.size() > 40);
    CHECK(docs.count("solver.gamma") == 1);
    CHECK(docs.count("agent.epsilon") == 1);
}
