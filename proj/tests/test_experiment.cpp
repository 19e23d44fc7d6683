#include "rigidlab/experiment.hpp"

#include "rigidlab/parallel.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rigidlab;
namespace fs = std::filesystem;

namespace
{

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("rigidlab_test_experiment_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const char* kPendulumPair = R"({
  "experiment": "bracket",
  "seed": 5,
  "f": {"catalog": "pendulum"},
  "g": {"catalog": "momentum"},
  "points": 300
})";

bool mentions(const std::vector<std::string>& problems, const std::string& needle)
{
    for (const auto& p : problems) {
        if (p.find(needle) != std::string::npos) return true;
    }
    return false;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(RIGIDLAB_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("pendulum against momentum brackets to -sin q")
{
    const fs::path dir = scratch("pendulum");
    const ExperimentOutcome out = run_experiment(kPendulumPair, dir, dir / "out");
    CHECK(out.pass);
    REQUIRE(out.files.size() == 3);
    std::istringstream csv(slurp(out.files[0]));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "q1,p1,bracket");
    int rows = 0;
    double worst = 0.0;
    while (std::getline(csv, line)) {
        double q = 0, p = 0, b = 0;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf", &q, &p, &b) == 3);
        CHECK(q >= -2.0);
        CHECK(q <= 2.0);
        worst = std::max(worst, std::abs(b + std::sin(q)));
        ++rows;
    }
    CHECK(rows == 300);
    CHECK(worst <= 1e-15);
}

TEST_CASE("same config and seed give byte-identical outputs for any worker count")
{
    const fs::path dir = scratch("determinism");
    set_worker_count(1);
    const auto a = run_experiment(kPendulumPair, dir, dir / "a");
    set_worker_count(3);
    const auto b = run_experiment(kPendulumPair, dir, dir / "b");
    set_worker_count(0);
    CHECK(slurp(a.files[0]) == slurp(b.files[0]));
    CHECK(slurp(a.files[1]) == slurp(b.files[1]));

    std::string other = kPendulumPair;
    other.replace(other.find("\"seed\": 5"), 9, "\"seed\": 6");
    const auto c = run_experiment(other, dir, dir / "c");
    CHECK(slurp(a.files[0]) != slurp(c.files[0]));
}

TEST_CASE("unknown key is named in the schema error")
{
    const std::string cfg = R"({
      "experiment": "flow",
      "hamiltonian": {"catalog": "pendulum"},
      "initial": [0.5, 0.0],
      "integratr": {"dt": 0.001}
    })";
    const auto problems = validate_config(cfg);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("\"integratr\"") != std::string::npos);
    CHECK_THROWS_AS(run_experiment(cfg, scratch("unknown")), ConfigError);
}

TEST_CASE("schema violations are listed exhaustively")
{
    const std::string cfg = R"({
      "experiment": "c0commute",
      "h": {"catalog": "harmonic"},
      "k": {"expression": "q1"},
      "g": {"catalog": "harmonic", "d": 1},
      "n_max": 1,
      "grid": {"box": [0], "count": 1},
      "tolerance": -1,
      "colour": "red"
    })";
    const auto problems = validate_config(cfg);
    CHECK(problems.size() >= 7);
    CHECK(mentions(problems, "config.k: missing required key \"d\""));
    CHECK(mentions(problems, "config.g: unknown key \"d\""));
    CHECK(mentions(problems, "config.n_max: must be >= 2"));
    CHECK(mentions(problems, "config.grid.box: needs at least 2 items"));
    CHECK(mentions(problems, "config.grid.count: must be >= 2"));
    CHECK(mentions(problems, "config.tolerance: must be > 0"));
    CHECK(mentions(problems, "unknown key \"colour\""));
}

TEST_CASE("semantic checks: catalog names, kinds, dimensions, seeds")
{
    CHECK(mentions(validate_config(R"({"experiment": "bracket", "seed": 1,
        "f": {"catalog": "pendulam"}, "g": {"catalog": "momentum"}})"), "unknown catalog entry \"pendulam\""));
    CHECK(mentions(validate_config(R"({"experiment": "bracket", "seed": 1,
        "f": {"catalog": "cos-circle"}, "g": {"catalog": "momentum"}})"), "expected a hamiltonian"));
    CHECK(mentions(validate_config(R"({"experiment": "bracket", "seed": 1,
        "f": {"catalog": "coupled"}, "g": {"catalog": "momentum"}})"), "degrees of freedom differ"));
    CHECK(mentions(validate_config(R"({"experiment": "bracket",
        "f": {"catalog": "pendulum"}, "g": {"catalog": "momentum"}})"), "missing required key \"seed\""));
    CHECK(mentions(validate_config(R"({"experiment": "weakfield",
        "hamiltonian": {"catalog": "kink"}, "point": [0, 0]})"), "missing required key \"seed\""));
    CHECK(mentions(validate_config(R"({"experiment": "flow",
        "hamiltonian": {"catalog": "coupled"}, "initial": [0, 0]})"), "config.initial: needs 4 coordinates"));
    CHECK(mentions(validate_config(R"({"experiment": "rigidity", "family": "pendulum",
        "grid": {"box": [-1, 1], "count": 3}})"), "not a map family"));
    CHECK(mentions(validate_config(R"J({"experiment": "minmax",
        "gfqi": {"catalog": "cos-circle", "base_function": "cos(q1)"}})J"), "matches more than one alternative"));
    CHECK(mentions(validate_config("{not json"), "invalid JSON"));
    CHECK(mentions(validate_config("[]"), "expected an object"));
    CHECK(validate_config(kPendulumPair).empty());
}

TEST_CASE("runtime failures carry the module name")
{
    const std::string cfg = R"({
      "experiment": "rigidity",
      "family": "shear-circle",
      "n_max": 2,
      "grid": {"box": [-1, 1], "count": 5}
    })";
    const fs::path dir = scratch("runtime");
    try {
        run_experiment(cfg, dir, dir / "out");
        FAIL("expected ExperimentError");
    } catch (const ExperimentError& e) {
        CHECK(e.module() == "rigidity");
        CHECK(std::string(e.what()).rfind("rigidity: ", 0) == 0);
    }
}

TEST_CASE("outputs are written atomically and follow the output precedence")
{
    const fs::path dir = scratch("atomic");
    const fs::path target = dir / "file.txt";
    write_file_atomic(target, "first");
    write_file_atomic(target, "second");
    CHECK(slurp(target) == "second");
    CHECK_FALSE(fs::exists(dir / "file.txt.tmp"));

    auto out = run_experiment(kPendulumPair, dir);
    CHECK(out.files[0].parent_path() == dir / "rigidlab-out");
    std::string with_output = kPendulumPair;
    with_output.insert(1, "\"output\": \"custom\",");
    out = run_experiment(with_output, dir);
    CHECK(out.files[0].parent_path() == dir / "custom");
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        CHECK(entry.path().extension() != ".tmp");
    }

    const auto summary = nlohmann::json::parse(slurp(out.files[1]));
    CHECK(summary["seed"] == 5);
    CHECK(summary["config"]["f"]["catalog"] == "pendulum");
    CHECK(summary["pass"] == true);
    CHECK(summary["outputs"][0] == "bracket.csv");
    const auto timing = nlohmann::json::parse(slurp(out.files[2]));
    CHECK(timing["wall_time_seconds"].get<double>() >= 0.0);
}

TEST_CASE("failed assertions are recorded in the summary")
{
    const std::string cfg = R"({
      "experiment": "minmax",
      "gfqi": {"catalog": "cos-circle"},
      "base_resolution": 64,
      "expect_unit": 0.5
    })";
    const fs::path dir = scratch("assert");
    const auto out = run_experiment(cfg, dir, dir / "out");
    CHECK_FALSE(out.pass);
    const auto summary = nlohmann::json::parse(slurp(out.files[1]));
    CHECK(summary["pass"] == false);
    bool found = false;
    for (const auto& a : summary["assertions"]) {
        if (a["name"] == "unit_matches_expected") {
            found = true;
            CHECK(a["pass"] == false);
        }
    }
    CHECK(found);
}

TEST_CASE("published config schema accepts every golden config")
{
    for (const auto& entry : fs::directory_iterator(GOLDEN_DIR)) {
        if (entry.path().extension() != ".json") continue;
        INFO(entry.path().string());
        CHECK(validate_config(slurp(entry.path()), entry.path().parent_path()).empty());
    }
    const auto schema = nlohmann::json::parse(config_schema());
    CHECK(schema["oneOf"].size() == 8);
    CHECK(nlohmann::json::parse(summary_schema()).contains("properties"));
}

TEST_CASE("cli exit codes")
{
    const fs::path dir = scratch("cli");
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream(dir / name) << text;
        return (dir / name).string();
    };
    const std::string pass = write("pass.json", kPendulumPair);
    const std::string fail = write("fail.json", R"({"experiment": "minmax", "gfqi": {"catalog": "cos-circle"},
        "base_resolution": 64, "expect_unit": 0.5})");
    const std::string bad = write("bad.json", R"({"experiment": "flow", "integratr": 1})");
    const std::string broken = write("broken.json", R"({"experiment": )");
    const std::string runtime = write("runtime.json", R"({"experiment": "rigidity", "family": "shear-circle",
        "n_max": 2, "grid": {"box": [-1, 1], "count": 5}})");

    const std::string out = " --output " + (dir / "out").string();
    CHECK(run_cli("run " + pass + out) == 0);
    CHECK(run_cli("run " + pass + out + " --threads 2") == 0);
    CHECK(run_cli("run " + fail + out) == 1);
    CHECK(run_cli("run " + bad + out) == 2);
    CHECK(run_cli("run " + broken + out) == 2);
    CHECK(run_cli("run " + (dir / "missing.json").string() + out) == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("run") == 2);
    CHECK(run_cli("run " + runtime + out) == 3);
    CHECK(run_cli("catalog") == 0);
    CHECK(run_cli("schema") == 0);
    CHECK(run_cli("schema --summary") == 0);
}
