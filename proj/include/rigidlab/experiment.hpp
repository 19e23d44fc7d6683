#pragma once

// Config-driven experiment runner. A config is a JSON object naming one
// experiment kind (bracket, flow, minmax, gamma, weakfield, c0commute,
// rigidity, property-suite) and its inputs; a run writes a CSV data file,
// summary.json (inputs, versions, seed, per-assertion results) and a
// timing.json sidecar with the wall time. The CSV and summary depend only on
// the config.

#include "rigidlab/error.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rigidlab
{

// Every schema and semantic violation found in a config.
class ConfigError : public Error
{
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

// A library error raised while an experiment ran, tagged with the module
// that raised it.
class ExperimentError : public Error
{
public:
    ExperimentError(std::string module, const std::string& message);
    const std::string& module() const { return module_; }

private:
    std::string module_;
};

struct Assertion
{
    std::string name;
    bool pass = false;
    double value = 0.0;
    double bound = 0.0;
};

struct ExperimentOutcome
{
    std::string experiment;
    bool pass = false;
    std::vector<Assertion> assertions;
    // Files written, in order: data CSV, summary.json, timing.json.
    std::vector<std::filesystem::path> files;
    double wall_time_seconds = 0.0;
};

std::string version();

// JSON Schema (draft 2020-12) documents for configs and summaries.
std::string config_schema();
std::string summary_schema();

// Problems in a config, empty when it is valid. Relative grid paths resolve
// against base_dir.
std::vector<std::string> validate_config(const std::string& config_text,
                                         const std::filesystem::path& base_dir = {});

// Throws ConfigError for an invalid config and ExperimentError for runtime
// failures. Outputs go to output_dir, else the config's "output" key
// (relative to base_dir), else base_dir / "rigidlab-out".
ExperimentOutcome run_experiment(const std::string& config_text, const std::filesystem::path& base_dir,
                                 std::optional<std::filesystem::path> output_dir = std::nullopt);

ExperimentOutcome run_experiment_file(const std::filesystem::path& config,
                                      std::optional<std::filesystem::path> output_dir = std::nullopt);

// Writes to path.tmp and renames over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace rigidlab
