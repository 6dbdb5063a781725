#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sfl/cli.hpp"

using namespace sfl::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sfl_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int call(std::vector<std::string> args) {
  args.insert(args.begin(), "sfl");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return main_entry(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config validation") {
  SUBCASE("defaults are filled in") {
    const auto cfg = parse_config(json{{"scenario", "example1"}});
    CHECK(cfg.params["epsilon"] == 0.01);
    CHECK(cfg.params["ensemble"] == 64);
    CHECK(cfg.output_dir == fs::path("out") / "example1");
    CHECK(cfg.seed == 1);
  }
  SUBCASE("every problem is reported") {
    try {
      parse_config(json{{"scenario", "kuramoto_locked"},
                        {"colour", "red"},
                        {"jobs", 0},
                        {"params", {{"alpha", 3.0}, {"delta", "big"}, {"extra", 1}}}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.errors().size() == 5);
    }
  }
  SUBCASE("unknown scenario and missing id") {
    CHECK_THROWS_AS(parse_config(json{{"scenario", "nope"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"seed", 3}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json::array()), ConfigError);
  }
  SUBCASE("cross-parameter constraints") {
    CHECK_THROWS_AS(parse_config(json{{"scenario", "kuramoto_detuned"}, {"params", {{"u", 2.5}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"scenario", "alpha_sweep"}, {"params", {{"alpha_step", 1e-5}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"scenario", "alpha_sweep"}, {"params", {{"alpha_min", 1.2}, {"alpha_max", 0.5}}}}),
                    ConfigError);
  }
  SUBCASE("overrides win") {
    Overrides ov;
    ov.seed = 42;
    ov.output_dir = fs::path("elsewhere");
    ov.jobs = 2;
    const auto cfg = parse_config(json{{"scenario", "envelope"}, {"seed", 3}}, ov);
    CHECK(cfg.seed == 42);
    CHECK(cfg.jobs == 2);
    CHECK(cfg.output_dir == fs::path("elsewhere"));
  }
  SUBCASE("every scenario parses with defaults") {
    for (const auto& s : scenarios()) CHECK_NOTHROW(parse_config(json{{"scenario", s.id}}));
  }
}

TEST_CASE("invalid config writes nothing") {
  const auto dir = scratch("invalid");
  const auto cfg_path = scratch("invalid.json");
  std::ofstream(cfg_path) << R"({"scenario": "envelope", "params": {"gain": -1}})";
  CHECK(call({"run", cfg_path.string(), "--out", dir.string()}) == 1);
  CHECK_FALSE(fs::exists(dir));
  std::ofstream(cfg_path) << "{ not json";
  CHECK(call({"run", cfg_path.string(), "--out", dir.string()}) == 1);
  CHECK(call({"run", (dir / "missing.json").string()}) == 1);
}

TEST_CASE("sweep command needs a sweep scenario") {
  const auto cfg_path = scratch("notsweep.json");
  std::ofstream(cfg_path) << R"({"scenario": "envelope"})";
  CHECK(call({"sweep", cfg_path.string(), "--out", scratch("notsweep").string()}) == 1);
}

TEST_CASE("summary is reproducible") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  auto cfg = parse_config(json{{"scenario", "kuramoto_locked"}, {"seed", 5}, {"output_dir", a.string()}});
  run_scenario(cfg);
  cfg.output_dir = b;
  cfg.jobs = 2;
  run_scenario(cfg);
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(fs::exists(a / "timing.json"));
  CHECK(fs::exists(a / "plot.py"));
  CHECK(fs::exists(a / "trajectories_M1.csv"));
}

TEST_CASE("example1 scenario") {
  const auto dir = scratch("ex1");
  const auto cfg = parse_config(json{{"scenario", "example1"}, {"seed", 7}, {"output_dir", dir.string()}});
  const auto rs = run_scenario(cfg);
  CHECK_FALSE(rs.any_case_failed);
  CHECK(rs.summary["cases"][0]["verdict"] == "stable");
  CHECK(rs.summary["cases"][0]["lambda"].get<double>() > 0.0);
  CHECK(rs.summary["config"]["seed"] == 7);
}

TEST_CASE("kuramoto_locked verdict map") {
  const auto rs = run_scenario(parse_config(json{{"scenario", "kuramoto_locked"}, {"output_dir", scratch("kl").string()}}));
  CHECK(rs.summary["verdict_map"]["M1"]["eigenvalues"] == "stable");
  CHECK(rs.summary["verdict_map"]["M1"]["simulation"] == "stable");
  CHECK(rs.summary["verdict_map"]["M1prime"]["simulation"] == "unstable");
}

TEST_CASE("alpha sweep flips around pi/3") {
  const auto dir = scratch("as");
  CHECK(call({"sweep", "--out", dir.string(), (fs::path(SFL_CONFIG_DIR) / "alpha_sweep.json").string()}) == 0);
  const auto summary = json::parse(slurp(dir / "summary.json"));
  for (const char* key : {"simulation_flip", "eigen_flip"}) {
    REQUIRE(summary[key].is_array());
    CHECK(summary[key][0].get<double>() < std::numbers::pi / 3);
    CHECK(summary[key][1].get<double>() > std::numbers::pi / 3);
  }
  const std::string csv = slurp(dir / "sweep.csv");
  CHECK(csv.rfind("alpha,u,verdict,lambda,r2,growth,eigen_verdict\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 67);
}

TEST_CASE("u sweep map") {
  const auto rs = run_scenario(parse_config(json{{"scenario", "u_sweep"}, {"output_dir", scratch("us").string()}}));
  for (const auto& c : rs.summary["cases"]) {
    const double alpha = c["alpha"], u = c["u"];
    if (u == 10.0) CHECK(c["verdict"] == "stable");
    if (u == 0.0) CHECK((c["verdict"] == "stable") == (alpha < std::numbers::pi / 3));
  }
}

TEST_CASE("runtime failures give exit code 2") {
  const auto cfg_path = scratch("fail.json");
  // gain 1 makes kappa exceed c1 c3 / c2, so the vanishing case is inadmissible
  std::ofstream(cfg_path) << R"({"scenario": "envelope", "params": {"case": "both", "gain": 1.0}})";
  const auto dir = scratch("fail");
  CHECK(call({"run", cfg_path.string(), "--out", dir.string()}) == 2);
  const auto summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary["status"] == "failed_cases");
  CHECK(summary["cases"][0]["status"] == "error");
  CHECK(summary["cases"][1]["status"] == "ok");
}
