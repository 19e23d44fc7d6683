// rigidlab: run experiment configs, list the catalog, print the schemas.
// Exit codes: 0 pass, 1 assertion failure, 2 config error, 3 runtime error.

#include "rigidlab/catalog.hpp"
#include "rigidlab/experiment.hpp"
#include "rigidlab/parallel.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace
{

constexpr int kPass = 0;
constexpr int kAssertionFailure = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

int run(const std::string& config, const std::string& output, unsigned threads)
{
    if (threads > 0) {
        rigidlab::set_worker_count(threads);
    }
    std::optional<std::filesystem::path> out;
    if (!output.empty()) {
        out = output;
    }
    try {
        const auto outcome = rigidlab::run_experiment_file(config, out);
        for (const auto& a : outcome.assertions) {
            std::printf("%s %s value=%.17g bound=%.17g\n", a.pass ? "PASS" : "FAIL", a.name.c_str(), a.value,
                        a.bound);
        }
        for (const auto& f : outcome.files) {
            std::printf("wrote %s\n", f.string().c_str());
        }
        std::printf("%s: %s (%.3f s)\n", outcome.experiment.c_str(), outcome.pass ? "pass" : "FAIL",
                    outcome.wall_time_seconds);
        return outcome.pass ? kPass : kAssertionFailure;
    } catch (const rigidlab::ConfigError& e) {
        std::fprintf(stderr, "config error:\n");
        for (const auto& p : e.problems()) {
            std::fprintf(stderr, "  %s\n", p.c_str());
        }
        return kConfigError;
    } catch (const rigidlab::ExperimentError& e) {
        std::fprintf(stderr, "runtime error in %s\n", e.what());
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return kRuntimeError;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"rigidlab experiment runner"};
    app.set_version_flag("--version", rigidlab::version());
    app.require_subcommand(1);

    std::string config;
    std::string output;
    unsigned threads = 0;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment config");
    run_cmd->add_option("config", config, "Experiment config (JSON)")->required();
    run_cmd->add_option("-o,--output", output, "Output directory");
    run_cmd->add_option("-j,--threads", threads, "Worker count (0 = default)");

    auto* catalog_cmd = app.add_subcommand("catalog", "List built-in Hamiltonians, GFQI and map families");

    bool summary = false;
    auto* schema_cmd = app.add_subcommand("schema", "Print the config JSON schema");
    schema_cmd->add_flag("--summary", summary, "Print the summary schema instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kConfigError;
    }

    if (run_cmd->parsed()) {
        return run(config, output, threads);
    }
    if (catalog_cmd->parsed()) {
        std::cout << rigidlab::catalog::listing();
        return kPass;
    }
    if (schema_cmd->parsed()) {
        std::cout << (summary ? rigidlab::summary_schema() : rigidlab::config_schema()) << "\n";
        return kPass;
    }
    return kConfigError;
}
