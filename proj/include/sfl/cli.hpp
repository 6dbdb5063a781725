#pragma once

// Scenario runner behind the `sfl` command line tool.
//
// A config is a JSON object
//
//     { "scenario": "example1", "seed": 7, "output_dir": "out/ex1",
//       "jobs": 1, "params": { "epsilon": 0.01 } }
//
// Every scenario has its own parameter table (see scenario_schema); unknown
// keys, wrong types and out-of-range values are all reported together before
// anything is computed or written.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace sfl::cli {

using nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

struct ScenarioConfig {
  std::string scenario;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir;
  std::size_t jobs = 1;
  json params;  // fully resolved, defaults filled in
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::size_t> jobs;
};

struct ParamSpec {
  enum class Kind { number, integer, number_list, choice };
  std::string key;
  Kind kind = Kind::number;
  json fallback;
  double lo = -1e300;
  double hi = 1e300;
  bool lo_open = false;
  bool hi_open = false;
  std::vector<std::string> choices;
  std::string help;
};

struct ScenarioInfo {
  std::string id;
  std::string description;
  bool sweep = false;  // produces a sweep.csv table
  std::vector<ParamSpec> params;
};

const std::vector<ScenarioInfo>& scenarios();
const ScenarioInfo* find_scenario(const std::string& id);

/// Throws ConfigError listing every problem found.
ScenarioConfig parse_config(const json& raw, const Overrides& ov = {});
ScenarioConfig load_config(const std::filesystem::path& path, const Overrides& ov = {});

struct RunSummary {
  json summary;         // written to summary.json; bit-reproducible
  double wall_seconds = 0.0;  // written to timing.json
  bool any_case_failed = false;
  std::vector<std::filesystem::path> files;
};

/// Runs the scenario and writes trajectories, summary.json, timing.json,
/// sweep.csv (sweep scenarios) and plot.py into cfg.output_dir.
RunSummary run_scenario(const ScenarioConfig& cfg);

/// Canonical text of a summary (sorted keys, fixed indentation).
std::string canonical(const json& j);

/// Command line entry point: returns the process exit code
/// (0 success, 1 validation error, 2 runtime failure in at least one case).
int main_entry(int argc, char** argv);

}  // namespace sfl::cli
