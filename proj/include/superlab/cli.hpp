#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace superlab::cli {

inline constexpr const char* kToolVersion = "0.3.0";

using Json = nlohmann::ordered_json;

const std::vector<std::string>& experiment_names();
Json default_params(const std::string& experiment);
// every experiment with its defaults
Json print_defaults();

struct ExperimentConfig {
  std::string experiment;
  Json params;
  std::string output_dir = "out";
  int workers = 1;
  bool operator==(const ExperimentConfig&) const = default;
};

// throws ConfigError with a field-level message
ExperimentConfig validate_config(const std::string& raw_json);
ExperimentConfig validate_config(const Json& raw);
inline ExperimentConfig validate_config(const char* raw_json) { return validate_config(std::string(raw_json)); }
Json to_json(const ExperimentConfig& c);
std::string serialize(const ExperimentConfig& c);
// SUPERLAB_SEED, when set, replaces params.seed
void apply_seed_override(ExperimentConfig& c);

struct Check {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct RunManifest {
  ExperimentConfig config;
  std::string tool_version = kToolVersion;
  double wall_clock_s = 0.0;
  std::vector<Check> checks;
  std::vector<std::string> artifacts;
  bool all_pass() const;
  // wall-clock lives in a separate timing file so the manifest itself is reproducible
  Json to_json() const;
};

// runs the experiment, writes artifacts, manifest.json and timing.json into config.output_dir
RunManifest run_experiment(const ExperimentConfig& config);

// plot-ready .dat files for the artifacts found in dir; returns the written paths
std::vector<std::string> emit_plotdata(const std::string& dir);

// entry point of the superlab tool; returns the process exit code
int run_main(int argc, char** argv);

enum ExitCode { kPass = 0, kCheckFailure = 1, kConfigError = 2, kRuntimeError = 3 };

}  // namespace superlab::cli
