#include "rigidlab/experiment.hpp"

#include "rigidlab/catalog.hpp"
#include "rigidlab/flow.hpp"
#include "rigidlab/gfqi.hpp"
#include "rigidlab/hamlang.hpp"
#include "rigidlab/minmax.hpp"
#include "rigidlab/parallel.hpp"
#include "rigidlab/rigidity.hpp"
#include "rigidlab/weakbracket.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace rigidlab
{

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace
{

constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Schemas

constexpr const char* kConfigSchema = R"JSON({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "$id": "https://rigidlab.invalid/config.schema.json",
  "title": "rigidlab experiment config",
  "oneOf": [
    {"$ref": "#/$defs/bracket"},
    {"$ref": "#/$defs/flow"},
    {"$ref": "#/$defs/minmax"},
    {"$ref": "#/$defs/gamma"},
    {"$ref": "#/$defs/weakfield"},
    {"$ref": "#/$defs/c0commute"},
    {"$ref": "#/$defs/rigidity"},
    {"$ref": "#/$defs/property-suite"}
  ],
  "$defs": {
    "seed": {"type": "integer", "minimum": 0},
    "positive": {"type": "number", "exclusiveMinimum": 0},
    "interval": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "vector": {"type": "array", "items": {"type": "number"}, "minItems": 2},
    "field": {
      "oneOf": [
        {
          "type": "object",
          "properties": {"catalog": {"type": "string"}},
          "required": ["catalog"],
          "additionalProperties": false
        },
        {
          "type": "object",
          "properties": {
            "expression": {"type": "string"},
            "d": {"type": "integer", "minimum": 1},
            "c11": {"type": "boolean"}
          },
          "required": ["expression", "d"],
          "additionalProperties": false
        }
      ]
    },
    "gfqi": {
      "type": "object",
      "properties": {
        "catalog": {"type": "string"},
        "base_function": {"type": "string"},
        "expression": {"type": "string"},
        "grid": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "quadratic": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "cutoff": {"$ref": "#/$defs/positive"},
        "stabilize": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "add_constant": {"type": "number"},
        "negate": {"type": "boolean"}
      },
      "oneOf": [
        {"required": ["catalog"]},
        {"required": ["base_function"]},
        {"required": ["expression"]},
        {"required": ["grid"]}
      ],
      "additionalProperties": false
    },
    "grid": {
      "type": "object",
      "properties": {
        "box": {"$ref": "#/$defs/interval"},
        "count": {"type": "integer", "minimum": 2}
      },
      "required": ["box", "count"],
      "additionalProperties": false
    },
    "integrator": {
      "type": "object",
      "properties": {
        "dt": {"$ref": "#/$defs/positive"},
        "tolerance": {"$ref": "#/$defs/positive"},
        "max_iterations": {"type": "integer", "minimum": 1}
      },
      "additionalProperties": false
    },
    "schedule": {
      "type": "object",
      "properties": {
        "initial_radius": {"$ref": "#/$defs/positive"},
        "shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "shells": {"type": "integer", "minimum": 3},
        "samples": {"type": "integer", "minimum": 8}
      },
      "additionalProperties": false
    },
    "bracket": {
      "type": "object",
      "properties": {
        "experiment": {"const": "bracket"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "f": {"$ref": "#/$defs/field"},
        "g": {"$ref": "#/$defs/field"},
        "h": {"$ref": "#/$defs/field"},
        "points": {"type": "integer", "minimum": 1},
        "box": {"$ref": "#/$defs/interval"},
        "tolerance": {"$ref": "#/$defs/positive"}
      },
      "required": ["experiment", "seed", "f", "g"],
      "additionalProperties": false
    },
    "flow": {
      "type": "object",
      "properties": {
        "experiment": {"const": "flow"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "hamiltonian": {"$ref": "#/$defs/field"},
        "initial": {"$ref": "#/$defs/vector"},
        "time": {"type": "number"},
        "samples": {"type": "integer", "minimum": 1},
        "integrator": {"$ref": "#/$defs/integrator"},
        "energy_tolerance": {"$ref": "#/$defs/positive"}
      },
      "required": ["experiment", "hamiltonian", "initial"],
      "additionalProperties": false
    },
    "minmax": {
      "type": "object",
      "properties": {
        "experiment": {"const": "minmax"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "gfqi": {"$ref": "#/$defs/gfqi"},
        "base_resolution": {"type": "integer", "minimum": 8},
        "fiber_resolution": {"type": "integer", "minimum": 0},
        "check_critical": {"type": "boolean"},
        "expect_unit": {"type": "number"},
        "expect_fundamental": {"type": "number"},
        "cells": {"$ref": "#/$defs/positive"}
      },
      "required": ["experiment", "gfqi"],
      "additionalProperties": false
    },
    "gamma": {
      "type": "object",
      "properties": {
        "experiment": {"const": "gamma"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "gfqi": {"$ref": "#/$defs/gfqi"},
        "other": {"$ref": "#/$defs/gfqi"},
        "base_resolution": {"type": "integer", "minimum": 8},
        "fiber_resolution": {"type": "integer", "minimum": 0},
        "expect": {"type": "number"},
        "cells": {"$ref": "#/$defs/positive"}
      },
      "required": ["experiment", "gfqi"],
      "additionalProperties": false
    },
    "weakfield": {
      "type": "object",
      "properties": {
        "experiment": {"const": "weakfield"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "hamiltonian": {"$ref": "#/$defs/field"},
        "point": {"$ref": "#/$defs/vector"},
        "schedule": {"$ref": "#/$defs/schedule"},
        "expect_singleton": {"type": "boolean"}
      },
      "required": ["experiment", "seed", "hamiltonian", "point"],
      "additionalProperties": false
    },
    "c0commute": {
      "type": "object",
      "properties": {
        "experiment": {"const": "c0commute"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "h": {"$ref": "#/$defs/field"},
        "k": {"$ref": "#/$defs/field"},
        "g": {"$ref": "#/$defs/field"},
        "n_max": {"type": "integer", "minimum": 2},
        "grid": {"$ref": "#/$defs/grid"},
        "tolerance": {"$ref": "#/$defs/positive"},
        "expected_slope": {"type": "number"},
        "slope_tolerance": {"$ref": "#/$defs/positive"},
        "expect_commuting": {"type": "boolean"}
      },
      "required": ["experiment", "h", "k", "g", "grid"],
      "additionalProperties": false
    },
    "rigidity": {
      "type": "object",
      "properties": {
        "experiment": {"const": "rigidity"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "family": {"type": "string"},
        "n_max": {"type": "integer", "minimum": 1},
        "grid": {"$ref": "#/$defs/grid"},
        "table_tolerance": {"$ref": "#/$defs/positive"}
      },
      "required": ["experiment", "family", "grid"],
      "additionalProperties": false
    },
    "property-suite": {
      "type": "object",
      "properties": {
        "experiment": {"const": "property-suite"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "seed": {"$ref": "#/$defs/seed"},
        "points": {"type": "integer", "minimum": 1}
      },
      "required": ["experiment", "seed"],
      "additionalProperties": false
    }
  }
})JSON";

constexpr const char* kSummarySchema = R"JSON({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "$id": "https://rigidlab.invalid/summary.schema.json",
  "title": "rigidlab experiment summary",
  "type": "object",
  "properties": {
    "format": {"const": "rigidlab-summary"},
    "format_version": {"const": 1},
    "experiment": {
      "enum": ["bracket", "flow", "minmax", "gamma", "weakfield", "c0commute", "rigidity", "property-suite"]
    },
    "versions": {
      "type": "object",
      "properties": {
        "rigidlab": {"type": "string"},
        "eigen": {"type": "string"},
        "nlohmann_json": {"type": "string"}
      },
      "required": ["rigidlab", "eigen", "nlohmann_json"]
    },
    "seed": {"type": ["integer", "null"]},
    "config": {"type": "object"},
    "outputs": {"type": "array", "items": {"type": "string"}},
    "timing_file": {"type": "string"},
    "results": {"type": "object"},
    "assertions": {
      "type": "array",
      "items": {
        "type": "object",
        "properties": {
          "name": {"type": "string"},
          "pass": {"type": "boolean"},
          "value": {"type": ["number", "null"]},
          "bound": {"type": ["number", "null"]}
        },
        "required": ["name", "pass", "value", "bound"],
        "additionalProperties": false
      }
    },
    "pass": {"type": "boolean"}
  },
  "required": ["format", "format_version", "experiment", "versions", "seed", "config", "outputs",
               "timing_file", "results", "assertions", "pass"],
  "additionalProperties": false
})JSON";

// ---------------------------------------------------------------------------
// Validation for the schema subset used above: type, const, enum, properties,
// required, additionalProperties, items, minItems, maxItems, minimum,
// exclusiveMinimum, exclusiveMaximum, oneOf and local $ref.

class Validator
{
public:
    explicit Validator(const json& root) : root_(root) {}

    std::vector<std::string> validate(const json& instance) const
    {
        std::vector<std::string> errs;
        check(root_, instance, "config", errs);
        return errs;
    }

private:
    const json& resolve(const json& schema) const
    {
        if (!schema.contains("$ref")) {
            return schema;
        }
        const std::string ref = schema["$ref"].get<std::string>();
        const std::string prefix = "#/$defs/";
        return root_["$defs"][ref.substr(prefix.size())];
    }

    static bool type_matches(const std::string& type, const json& v)
    {
        if (type == "object") return v.is_object();
        if (type == "array") return v.is_array();
        if (type == "string") return v.is_string();
        if (type == "boolean") return v.is_boolean();
        if (type == "integer") return v.is_number_integer();
        if (type == "number") return v.is_number();
        if (type == "null") return v.is_null();
        return false;
    }

    void check(const json& raw, const json& v, const std::string& path, std::vector<std::string>& errs) const
    {
        const json& s = resolve(raw);
        if (s.contains("type")) {
            const json& t = s["type"];
            bool ok = false;
            if (t.is_string()) {
                ok = type_matches(t.get<std::string>(), v);
            } else {
                for (const auto& x : t) ok = ok || type_matches(x.get<std::string>(), v);
            }
            if (!ok) {
                errs.push_back(path + ": expected " + t.dump());
                return;
            }
        }
        if (s.contains("const") && v != s["const"]) {
            errs.push_back(path + ": must be " + s["const"].dump());
        }
        if (s.contains("enum")) {
            bool found = false;
            for (const auto& x : s["enum"]) found = found || x == v;
            if (!found) {
                errs.push_back(path + ": must be one of " + s["enum"].dump());
            }
        }
        if (v.is_number()) {
            const double x = v.get<double>();
            if (s.contains("minimum") && x < s["minimum"].get<double>()) {
                errs.push_back(path + ": must be >= " + s["minimum"].dump());
            }
            if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) {
                errs.push_back(path + ": must be > " + s["exclusiveMinimum"].dump());
            }
            if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) {
                errs.push_back(path + ": must be < " + s["exclusiveMaximum"].dump());
            }
        }
        if (v.is_array()) {
            if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
                errs.push_back(path + ": needs at least " + s["minItems"].dump() + " items");
            }
            if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
                errs.push_back(path + ": allows at most " + s["maxItems"].dump() + " items");
            }
            if (s.contains("items")) {
                for (std::size_t i = 0; i < v.size(); ++i) {
                    check(s["items"], v[i], path + "[" + std::to_string(i) + "]", errs);
                }
            }
        }
        if (v.is_object()) {
            if (s.contains("required")) {
                for (const auto& key : s["required"]) {
                    if (!v.contains(key.get<std::string>())) {
                        errs.push_back(path + ": missing required key \"" + key.get<std::string>() + "\"");
                    }
                }
            }
            const bool closed = s.contains("additionalProperties") && s["additionalProperties"] == false;
            for (auto it = v.begin(); it != v.end(); ++it) {
                if (s.contains("properties") && s["properties"].contains(it.key())) {
                    check(s["properties"][it.key()], it.value(), path + "." + it.key(), errs);
                } else if (closed) {
                    errs.push_back(path + ": unknown key \"" + it.key() + "\"");
                }
            }
        }
        if (s.contains("oneOf")) {
            std::vector<std::vector<std::string>> branch_errs;
            int passing = 0;
            for (const auto& b : s["oneOf"]) {
                branch_errs.emplace_back();
                check(b, v, path, branch_errs.back());
                passing += branch_errs.back().empty() ? 1 : 0;
            }
            if (passing == 0) {
                // Report the closest alternative.
                std::size_t best = 0;
                for (std::size_t i = 1; i < branch_errs.size(); ++i) {
                    if (branch_errs[i].size() < branch_errs[best].size()) best = i;
                }
                errs.insert(errs.end(), branch_errs[best].begin(), branch_errs[best].end());
            } else if (passing > 1) {
                errs.push_back(path + ": matches more than one alternative");
            }
        }
    }

    const json& root_;
};

const json& config_schema_json()
{
    static const json s = json::parse(kConfigSchema);
    return s;
}

// ---------------------------------------------------------------------------
// Formatting and output

std::string fmt17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_row(const std::vector<double>& values)
{
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ',';
        s += fmt17(values[i]);
    }
    return s + "\n";
}

// Uniform double in [0, 1) from the top 53 bits; the mapping is fixed so
// outputs do not depend on the standard library's distributions.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<std::string> coordinate_names(int d)
{
    std::vector<std::string> names;
    for (int i = 1; i <= d; ++i) names.push_back("q" + std::to_string(i));
    for (int i = 1; i <= d; ++i) names.push_back("p" + std::to_string(i));
    return names;
}

// ---------------------------------------------------------------------------
// Inputs

struct FieldInput
{
    ScalarField field;
    int d = 1;
};

FieldInput make_field(const json& node)
{
    if (node.contains("catalog")) {
        const auto* e = catalog::find(node["catalog"].get<std::string>());
        return {catalog::hamiltonian(*e), e->dim};
    }
    const int d = node["d"].get<int>();
    const bool c11 = node.value("c11", false);
    return {hamlang::field_from_source(node["expression"].get<std::string>(), d, Box::unbounded(2 * d), c11), d};
}

int field_dim(const json& node)
{
    if (node.contains("catalog")) {
        const auto* e = catalog::find(node["catalog"].get<std::string>());
        return e ? e->dim : 0;
    }
    return node["d"].get<int>();
}

GFQI make_gfqi(const json& node, const fs::path& base_dir)
{
    GFQI s = [&]() -> GFQI {
        if (node.contains("catalog")) {
            return catalog::gfqi(*catalog::find(node["catalog"].get<std::string>()));
        }
        if (node.contains("base_function")) {
            return from_base_function(node["base_function"].get<std::string>(), node.value("n", 1));
        }
        if (node.contains("expression")) {
            const auto quad = node["quadratic"].get<std::vector<double>>();
            const hamlang::Dims dims{node.value("n", 1), static_cast<int>(quad.size()), false};
            return from_expression(hamlang::parse_expression(node["expression"].get<std::string>(), dims),
                                   QuadraticForm::diagonal(quad), node.value("cutoff", GFQI::kDefaultCutoff));
        }
        std::ifstream in(base_dir / node["grid"].get<std::string>());
        if (!in) {
            throw InvalidArgument("cannot open grid file " + node["grid"].get<std::string>());
        }
        return from_grid(read_grid_gfqi(in));
    }();
    if (node.contains("stabilize")) {
        s = stabilize(s, QuadraticForm::diagonal(node["stabilize"].get<std::vector<double>>()));
    }
    if (node.contains("add_constant")) {
        s = add_constant(s, node["add_constant"].get<double>());
    }
    if (node.value("negate", false)) {
        s = negate(s);
    }
    return s;
}

SampleGrid make_grid(const json& node, int dim)
{
    const double lo = node["box"][0].get<double>();
    const double hi = node["box"][1].get<double>();
    return SampleGrid(Box::cube(dim, lo, hi), node["count"].get<int>());
}

FiltrationOptions filtration_options(const json& cfg)
{
    FiltrationOptions o;
    o.base_resolution = cfg.value("base_resolution", o.base_resolution);
    o.fiber_resolution = cfg.value("fiber_resolution", o.fiber_resolution);
    return o;
}

// Semantic checks that the schema cannot express.
void check_semantics(const json& cfg, const fs::path& base_dir, std::vector<std::string>& errs)
{
    auto check_field = [&](const char* key, catalog::Kind kind) {
        if (!cfg.contains(key) || !cfg[key].is_object() || !cfg[key].contains("catalog")) {
            return;
        }
        const std::string name = cfg[key]["catalog"].get<std::string>();
        const auto* e = catalog::find(name);
        if (!e) {
            errs.push_back(std::string("config.") + key + ".catalog: unknown catalog entry \"" + name + "\"");
        } else if (e->kind != kind) {
            errs.push_back(std::string("config.") + key + ".catalog: \"" + name + "\" is a " +
                           catalog::to_string(e->kind) + ", expected a " + catalog::to_string(kind));
        }
    };
    for (const char* key : {"f", "g", "h", "k", "hamiltonian"}) check_field(key, catalog::Kind::hamiltonian);
    for (const char* key : {"gfqi", "other"}) {
        check_field(key, catalog::Kind::gfqi);
        if (cfg.contains(key) && cfg[key].is_object()) {
            const json& g = cfg[key];
            if (g.contains("expression") && !g.contains("quadratic")) {
                errs.push_back(std::string("config.") + key + ": an expression GFQI needs \"quadratic\"");
            }
            if (g.contains("grid") && g["grid"].is_string()) {
                const fs::path p = base_dir / g["grid"].get<std::string>();
                if (!fs::exists(p)) {
                    errs.push_back(std::string("config.") + key + ".grid: file not found: " + p.string());
                }
            }
        }
    }
    if (cfg.contains("family") && cfg["family"].is_string()) {
        const std::string name = cfg["family"].get<std::string>();
        const auto* e = catalog::find(name);
        if (!e) {
            errs.push_back("config.family: unknown catalog entry \"" + name + "\"");
        } else if (e->kind != catalog::Kind::map_family) {
            errs.push_back("config.family: \"" + name + "\" is not a map family");
        }
    }
    if (!errs.empty()) {
        return;
    }

    const std::string kind = cfg["experiment"].get<std::string>();
    auto dims_agree = [&](std::initializer_list<const char*> keys) {
        int d = 0;
        for (const char* key : keys) {
            if (!cfg.contains(key)) continue;
            const int dk = field_dim(cfg[key]);
            if (d && dk != d) {
                errs.push_back(std::string("config.") + key + ": degrees of freedom differ from the other fields");
            }
            d = d ? d : dk;
        }
        return d;
    };
    auto vector_len = [&](const char* key, int d) {
        if (cfg.contains(key) && static_cast<int>(cfg[key].size()) != 2 * d) {
            errs.push_back(std::string("config.") + key + ": needs " + std::to_string(2 * d) + " coordinates");
        }
    };
    auto ordered = [&](const json& interval, const std::string& where) {
        if (!(interval[0].get<double>() < interval[1].get<double>())) {
            errs.push_back(where + ": lower bound must be below upper bound");
        }
    };
    if (kind == "bracket") {
        dims_agree({"f", "g", "h"});
        if (cfg.contains("box")) ordered(cfg["box"], "config.box");
    } else if (kind == "flow") {
        vector_len("initial", dims_agree({"hamiltonian"}));
    } else if (kind == "weakfield") {
        vector_len("point", dims_agree({"hamiltonian"}));
    } else if (kind == "c0commute") {
        dims_agree({"h", "k", "g"});
    }
    if (cfg.contains("grid") && cfg["grid"].is_object()) {
        ordered(cfg["grid"]["box"], "config.grid.box");
    }
}

// ---------------------------------------------------------------------------
// Experiments

struct RunResult
{
    std::string csv_name;
    std::string csv;
    json results = json::object();
    std::vector<Assertion> assertions;
};

void assert_le(RunResult& r, std::string name, double value, double bound)
{
    r.assertions.push_back({std::move(name), value <= bound, value, bound});
}

void assert_ge(RunResult& r, std::string name, double value, double bound)
{
    r.assertions.push_back({std::move(name), value >= bound, value, bound});
}

ScalarField fd_copy(const ScalarField& f)
{
    return ScalarField(f.domain(), [f](const Vector& x) { return f(x); }, Regularity::smooth);
}

RunResult run_bracket(const json& cfg)
{
    const FieldInput f = make_field(cfg["f"]);
    const FieldInput g = make_field(cfg["g"]);
    const int d = f.d;
    const int points = cfg.value("points", 1000);
    const double lo = cfg.contains("box") ? cfg["box"][0].get<double>() : -2.0;
    const double hi = cfg.contains("box") ? cfg["box"][1].get<double>() : 2.0;
    const double tol = cfg.value("tolerance", 1e-6);

    std::mt19937_64 rng(cfg["seed"].get<std::uint64_t>());
    std::vector<Vector> xs(points, Vector(2 * d));
    for (auto& x : xs)
        for (int i = 0; i < 2 * d; ++i) x[i] = lo + (hi - lo) * unit_uniform(rng);

    const ScalarField ffd = fd_copy(f.field);
    const ScalarField gfd = fd_copy(g.field);
    std::vector<double> exact(points), rel(points);
    parallel_for(static_cast<std::size_t>(points), [&](std::size_t i) {
        exact[i] = poisson_bracket(f.field, g.field, PhasePoint(xs[i]));
        const double fd = poisson_bracket(ffd, gfd, PhasePoint(xs[i]));
        rel[i] = std::abs(fd - exact[i]) / std::max(1.0, std::abs(exact[i]));
    });

    RunResult r;
    r.csv_name = "bracket.csv";
    std::string header;
    for (const auto& n : coordinate_names(d)) header += n + ",";
    r.csv = header + "bracket\n";
    double max_rel = 0.0;
    for (int i = 0; i < points; ++i) {
        std::vector<double> row(xs[i].data(), xs[i].data() + 2 * d);
        row.push_back(exact[i]);
        r.csv += join_row(row);
        max_rel = std::max(max_rel, rel[i]);
    }
    r.results["points"] = points;
    r.results["max_relative_error_fd"] = max_rel;
    assert_le(r, "fd_matches_exact", max_rel, tol);

    if (cfg.contains("h")) {
        const FieldInput h = make_field(cfg["h"]);
        std::vector<double> jac(points);
        parallel_for(static_cast<std::size_t>(points), [&](std::size_t i) {
            jac[i] = jacobi_residual(f.field, g.field, h.field, PhasePoint(xs[i]));
        });
        double worst = 0.0;
        for (double v : jac) worst = std::max(worst, v);
        r.results["max_jacobi_residual"] = worst;
        assert_le(r, "jacobi_residual", worst, tol);
    }
    return r;
}

RunResult run_flow(const json& cfg)
{
    const FieldInput h = make_field(cfg["hamiltonian"]);
    const Vector x0 = Eigen::Map<const Vector>(cfg["initial"].get<std::vector<double>>().data(), 2 * h.d);
    const double time = cfg.value("time", 1.0);
    const int samples = cfg.value("samples", 10);
    IntegratorConfig ic;
    if (cfg.contains("integrator")) {
        const json& i = cfg["integrator"];
        ic.dt = i.value("dt", ic.dt);
        ic.tolerance = i.value("tolerance", ic.tolerance);
        ic.max_iterations = i.value("max_iterations", ic.max_iterations);
    }
    ic.validate();
    const double etol = cfg.value("energy_tolerance", 1e-6);

    RunResult r;
    r.csv_name = "flow.csv";
    std::string header = "t,";
    for (const auto& n : coordinate_names(h.d)) header += n + ",";
    r.csv = header + "energy\n";
    const double e0 = h.field(x0);
    double drift = 0.0;
    Vector x = x0;
    for (int i = 0; i <= samples; ++i) {
        if (i > 0) {
            x = integrate_flow(h.field, PhasePoint(x), time / samples, ic).coords();
        }
        const double e = h.field(x);
        drift = std::max(drift, std::abs(e - e0));
        std::vector<double> row{time * i / samples};
        row.insert(row.end(), x.data(), x.data() + 2 * h.d);
        row.push_back(e);
        r.csv += join_row(row);
    }
    r.results["energy_drift"] = drift;
    assert_le(r, "energy_drift", drift, etol);
    return r;
}

RunResult run_minmax(const json& cfg, const fs::path& base_dir)
{
    const GFQI s = make_gfqi(cfg["gfqi"], base_dir);
    const MinmaxResult m = minmax_values(s, filtration_options(cfg));
    const double cells = cfg.value("cells", 2.0);
    const double tol = std::max(cells * m.cell_tolerance, 1e-9);

    RunResult r;
    r.csv_name = "diagram.csv";
    std::ostringstream out;
    write_diagram_csv(out, m.diagram);
    r.csv = out.str();
    r.results["unit"] = m.unit;
    r.results["fundamental"] = m.fundamental;
    r.results["cell_tolerance"] = m.cell_tolerance;
    r.results["c_box"] = m.c_box;
    if (cfg.value("check_critical", true)) {
        const bool cu = critical_value_check(s, m.unit, tol);
        const bool cf = critical_value_check(s, m.fundamental, tol);
        r.assertions.push_back({"unit_is_critical", cu, m.unit, tol});
        r.assertions.push_back({"fundamental_is_critical", cf, m.fundamental, tol});
    }
    if (cfg.contains("expect_unit")) {
        assert_le(r, "unit_matches_expected", std::abs(m.unit - cfg["expect_unit"].get<double>()), tol);
    }
    if (cfg.contains("expect_fundamental")) {
        assert_le(r, "fundamental_matches_expected",
                  std::abs(m.fundamental - cfg["expect_fundamental"].get<double>()), tol);
    }
    return r;
}

RunResult run_gamma(const json& cfg, const fs::path& base_dir)
{
    const GFQI s = make_gfqi(cfg["gfqi"], base_dir);
    const FiltrationOptions opt = filtration_options(cfg);
    const GammaResult g =
        cfg.contains("other") ? gamma_distance(s, make_gfqi(cfg["other"], base_dir), opt) : gamma_invariant(s, opt);
    const double cells = cfg.value("cells", 2.0);
    const double tol = std::max(cells * g.cell_tolerance, 1e-9);

    RunResult r;
    r.csv_name = "gamma.csv";
    r.csv = "quantity,value\n";
    r.csv += "gamma," + fmt17(g.gamma) + "\n";
    r.csv += "unit," + fmt17(g.unit) + "\n";
    r.csv += "fundamental," + fmt17(g.fundamental) + "\n";
    r.csv += "cell_tolerance," + fmt17(g.cell_tolerance) + "\n";
    r.csv += std::string("clamped,") + (g.clamped ? "1" : "0") + "\n";
    r.results["gamma"] = g.gamma;
    r.results["unit"] = g.unit;
    r.results["fundamental"] = g.fundamental;
    r.results["cell_tolerance"] = g.cell_tolerance;
    r.results["clamped"] = g.clamped;
    assert_ge(r, "gamma_nonnegative", g.gamma, 0.0);
    if (cfg.contains("expect")) {
        assert_le(r, "gamma_matches_expected", std::abs(g.gamma - cfg["expect"].get<double>()), tol);
    }
    return r;
}

RunResult run_weakfield(const json& cfg)
{
    const FieldInput h = make_field(cfg["hamiltonian"]);
    const Vector x = Eigen::Map<const Vector>(cfg["point"].get<std::vector<double>>().data(), 2 * h.d);
    SamplingSchedule sched;
    if (cfg.contains("schedule")) {
        const json& s = cfg["schedule"];
        sched.initial_radius = s.value("initial_radius", sched.initial_radius);
        sched.shrink = s.value("shrink", sched.shrink);
        sched.shells = s.value("shells", sched.shells);
        sched.samples = s.value("samples", sched.samples);
    }
    sched.seed = cfg["seed"].get<std::uint64_t>();
    const ConvexSetCloud cloud = weak_hamiltonian_field(h.field, x, sched);

    RunResult r;
    r.csv_name = "cloud.csv";
    std::ostringstream out;
    write_cloud_csv(out, cloud);
    r.csv = out.str();
    r.results["cloud"] = json::parse(cloud_provenance_json(cloud));
    r.results["diameter"] = cloud.diameter();
    assert_ge(r, "rays_accepted", cloud.accepted_rays, 1.0);
    if (cfg.contains("expect_singleton")) {
        const bool want = cfg["expect_singleton"].get<bool>();
        r.assertions.push_back({"singleton_matches_expected", cloud.singleton == want, cloud.singleton ? 1.0 : 0.0,
                                want ? 1.0 : 0.0});
    }
    return r;
}

RunResult run_c0commute(const json& cfg)
{
    const FieldInput h = make_field(cfg["h"]);
    const FieldInput k = make_field(cfg["k"]);
    const FieldInput g = make_field(cfg["g"]);
    const int n_max = cfg.value("n_max", 64);
    const SampleGrid grid = make_grid(cfg["grid"], 2 * h.d);
    const double tol = cfg.value("tolerance", 1e-2);
    const ScalarField H = h.field;
    const ScalarField G = g.field;
    const ScalarField K = k.field;
    const C0CommuteReport rep = c0_commute_defect(
        [H, G](int n) { return linear_combination({H, G}, {1.0, 1.0 / n}); }, [K](int) { return K; }, H, K, grid,
        n_max, tol);

    RunResult r;
    r.csv_name = "c0commute.csv";
    r.csv = "n,h_distance,k_distance,bracket\n";
    for (const auto& row : rep.rows) {
        r.csv += std::to_string(row.n) + "," + fmt17(row.h_distance) + "," + fmt17(row.k_distance) + "," +
                 fmt17(row.bracket) + "\n";
    }
    r.results["bracket_slope"] = rep.bracket_slope;
    r.results["commuting_evidence"] = rep.commuting_evidence;
    if (cfg.contains("expected_slope")) {
        assert_le(r, "bracket_slope", std::abs(rep.bracket_slope - cfg["expected_slope"].get<double>()),
                  cfg.value("slope_tolerance", 0.1));
    }
    if (cfg.contains("expect_commuting")) {
        const bool want = cfg["expect_commuting"].get<bool>();
        r.assertions.push_back({"commuting_matches_expected", rep.commuting_evidence == want,
                                rep.rows.back().bracket, tol});
    }
    return r;
}

RunResult run_rigidity(const json& cfg)
{
    const catalog::Entry& e = *catalog::find(cfg["family"].get<std::string>());
    const int d = catalog::family_degrees_of_freedom(e);
    const int n_max = cfg.value("n_max", 8);
    RigidityOptions opt;
    opt.table_tolerance = cfg.value("table_tolerance", opt.table_tolerance);
    const RigidityReport rep = limit_rigidity_experiment(catalog::family(e), DiffeoSample::identity(d),
                                                         catalog::family_support(e), make_grid(cfg["grid"], 2 * d),
                                                         n_max, opt);
    RunResult r;
    r.csv_name = "rigidity.csv";
    std::ostringstream out;
    write_rigidity_csv(out, rep);
    r.csv = out.str();
    r.results["limit_max_table_deviation"] = rep.limit.max_table_deviation;
    r.results["limit_at_infinity_deviation"] = rep.limit.at_infinity_deviation;
    r.results["limit_C_estimate"] = rep.limit.c_estimate;
    for (const auto& row : rep.rows) {
        assert_le(r, "sup_distance_n" + std::to_string(row.n), row.sup_distance, catalog::family_bound(e, row.n));
    }
    assert_le(r, "limit_table_equals_E",
              std::max(rep.limit.max_table_deviation, rep.limit.at_infinity_deviation), opt.table_tolerance);
    return r;
}

RunResult run_property_suite(const json& cfg)
{
    std::mt19937_64 rng(cfg["seed"].get<std::uint64_t>());
    const int points = cfg.value("points", 50);
    auto random_point = [&](int m, double lo, double hi) {
        Vector x(m);
        for (int i = 0; i < m; ++i) x[i] = lo + (hi - lo) * unit_uniform(rng);
        return x;
    };

    std::vector<const catalog::Entry*> smooth;
    for (const auto& e : catalog::entries()) {
        if (e.kind == catalog::Kind::hamiltonian && e.family == "smooth" && e.dim == 1) smooth.push_back(&e);
    }

    RunResult r;
    double antisym = 0.0;
    double fd_err = 0.0;
    double jac = 0.0;
    for (std::size_t a = 0; a < smooth.size(); ++a) {
        const ScalarField f = catalog::hamiltonian(*smooth[a]);
        const ScalarField ffd = fd_copy(f);
        for (std::size_t b = 0; b < smooth.size(); ++b) {
            const ScalarField g = catalog::hamiltonian(*smooth[b]);
            const ScalarField gfd = fd_copy(g);
            const ScalarField h = catalog::hamiltonian(*smooth[(a + b + 1) % smooth.size()]);
            for (int i = 0; i < points; ++i) {
                const PhasePoint x(random_point(2, -2, 2));
                const double fg = poisson_bracket(f, g, x);
                antisym = std::max(antisym, std::abs(fg + poisson_bracket(g, f, x)));
                fd_err = std::max(fd_err, std::abs(poisson_bracket(ffd, gfd, x) - fg) / std::max(1.0, std::abs(fg)));
                jac = std::max(jac, jacobi_residual(f, g, h, x));
            }
        }
    }
    assert_le(r, "bracket_antisymmetry", antisym, 1e-12);
    assert_le(r, "fd_bracket_matches_exact", fd_err, 1e-6);
    assert_le(r, "jacobi_identity", jac, 1e-6);

    double tilde = 0.0;
    for (int d = 1; d <= 3; ++d) {
        for (int trial = 0; trial < 5; ++trial) {
            Matrix m = Matrix::Identity(2 * d, 2 * d);
            for (int s = 0; s < 4; ++s) {
                Matrix sym(d, d);
                for (int i = 0; i < d; ++i)
                    for (int j = i; j < d; ++j) sym(i, j) = sym(j, i) = 2.0 * unit_uniform(rng) - 1.0;
                Matrix u = Matrix::Identity(2 * d, 2 * d);
                if (s % 2 == 0) u.topRightCorner(d, d) = sym;
                else u.bottomLeftCorner(d, d) = sym;
                m = u * m;
            }
            const RigidityMap phi = RigidityMap::from_diffeo(DiffeoSample::linear(m));
            for (int i = 0; i < points; ++i) {
                tilde = std::max(tilde, tilde_brackets(phi, PhasePoint(random_point(2 * d, -2, 2))).cwiseAbs().maxCoeff());
            }
        }
    }
    assert_le(r, "tilde_brackets_vanish", tilde, 1e-8);

    double kernel_defect = 0.0;
    for (int d = 2; d <= 20; ++d) {
        const ExactKernel k = coupling_matrix_kernel(d);
        const bool ok = k.rank == d - 1 && k.determinant == "0" && k.kernel.size() == 1 &&
                        k.kernel[0] == std::vector<long long>(d, 1);
        kernel_defect = std::max(kernel_defect, ok ? 0.0 : 1.0);
    }
    assert_le(r, "coupling_kernel_is_diagonal_line", kernel_defect, 0.0);

    double symp = 0.0;
    for (int n = 1; n <= 4; ++n) {
        const RigidityMap phi = generating_shear(1, 2.0, n);
        for (int i = 0; i < points; ++i) {
            symp = std::max(symp, symplecticity_defect(phi.map, PhasePoint(random_point(2, -3, 3))));
        }
    }
    assert_le(r, "shear_members_symplectic", symp, 1e-9);

    r.csv_name = "properties.csv";
    r.csv = "property,value,bound,pass\n";
    for (const auto& a : r.assertions) {
        r.csv += a.name + "," + fmt17(a.value) + "," + fmt17(a.bound) + "," + (a.pass ? "1" : "0") + "\n";
    }
    r.results["points"] = points;
    return r;
}

// Maps an error raised inside an experiment to the module that raised it.
std::string module_of(const std::string& kind)
{
    if (kind == "bracket") return "phase";
    if (kind == "flow") return "flow";
    if (kind == "minmax" || kind == "gamma") return "minmax";
    if (kind == "weakfield" || kind == "c0commute") return "weakbracket";
    if (kind == "rigidity") return "rigidity";
    return "cli";
}

json parse_config(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("config: invalid JSON: ") + e.what()});
    }
}

std::vector<std::string> collect_problems(const json& cfg, const fs::path& base_dir)
{
    if (!cfg.is_object()) {
        return {"config: expected an object"};
    }
    std::vector<std::string> errs = Validator(config_schema_json()).validate(cfg);
    if (errs.empty()) {
        check_semantics(cfg, base_dir, errs);
    }
    return errs;
}

} // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error([&] {
          std::string m = "invalid config";
          for (const auto& p : problems) m += "\n  " + p;
          return m;
      }()),
      problems_(std::move(problems))
{
}

ExperimentError::ExperimentError(std::string module, const std::string& message)
    : Error(module + ": " + message), module_(std::move(module))
{
}

std::string version() { return kVersion; }

std::string config_schema() { return kConfigSchema; }

std::string summary_schema() { return kSummarySchema; }

std::vector<std::string> validate_config(const std::string& config_text, const fs::path& base_dir)
{
    try {
        return collect_problems(parse_config(config_text), base_dir);
    } catch (const ConfigError& e) {
        return e.problems();
    }
}

void write_file_atomic(const fs::path& path, const std::string& contents)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out << contents;
        out.flush();
        if (!out) {
            throw Error("write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

ExperimentOutcome run_experiment(const std::string& config_text, const fs::path& base_dir,
                                 std::optional<fs::path> output_dir)
{
    const json cfg = parse_config(config_text);
    const std::vector<std::string> problems = collect_problems(cfg, base_dir);
    if (!problems.empty()) {
        throw ConfigError(problems);
    }
    const std::string kind = cfg["experiment"].get<std::string>();

    fs::path out_dir = output_dir ? *output_dir
                                  : (cfg.contains("output") ? base_dir / cfg["output"].get<std::string>()
                                                            : base_dir / "rigidlab-out");

    const auto start = std::chrono::steady_clock::now();
    RunResult res;
    try {
        if (kind == "bracket") res = run_bracket(cfg);
        else if (kind == "flow") res = run_flow(cfg);
        else if (kind == "minmax") res = run_minmax(cfg, base_dir);
        else if (kind == "gamma") res = run_gamma(cfg, base_dir);
        else if (kind == "weakfield") res = run_weakfield(cfg);
        else if (kind == "c0commute") res = run_c0commute(cfg);
        else if (kind == "rigidity") res = run_rigidity(cfg);
        else res = run_property_suite(cfg);
    } catch (const ExperimentError&) {
        throw;
    } catch (const Error& e) {
        throw ExperimentError(module_of(kind), e.what());
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    ExperimentOutcome outcome;
    outcome.experiment = kind;
    outcome.assertions = res.assertions;
    outcome.pass = true;
    for (const auto& a : res.assertions) outcome.pass = outcome.pass && a.pass;
    outcome.wall_time_seconds = wall;

    json summary;
    summary["format"] = "rigidlab-summary";
    summary["format_version"] = 1;
    summary["experiment"] = kind;
    summary["versions"] = {
        {"rigidlab", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
    };
    summary["seed"] = cfg.contains("seed") ? json(cfg["seed"]) : json(nullptr);
    summary["config"] = cfg;
    summary["outputs"] = json::array({res.csv_name});
    summary["timing_file"] = "timing.json";
    summary["results"] = res.results;
    json asserts = json::array();
    for (const auto& a : res.assertions) {
        asserts.push_back({{"name", a.name}, {"pass", a.pass}, {"value", a.value}, {"bound", a.bound}});
    }
    summary["assertions"] = asserts;
    summary["pass"] = outcome.pass;

    json timing;
    timing["experiment"] = kind;
    timing["wall_time_seconds"] = wall;
    timing["workers"] = worker_count();

    fs::create_directories(out_dir);
    const fs::path csv = out_dir / res.csv_name;
    const fs::path sum = out_dir / "summary.json";
    const fs::path tim = out_dir / "timing.json";
    write_file_atomic(csv, res.csv);
    write_file_atomic(sum, summary.dump(2) + "\n");
    write_file_atomic(tim, timing.dump(2) + "\n");
    outcome.files = {csv, sum, tim};
    return outcome;
}

ExperimentOutcome run_experiment_file(const fs::path& config, std::optional<fs::path> output_dir)
{
    std::ifstream in(config, std::ios::binary);
    if (!in) {
        throw ConfigError({"config: cannot open " + config.string()});
    }
    std::ostringstream text;
    text << in.rdbuf();
    return run_experiment(text.str(), config.parent_path(), std::move(output_dir));
}

} // namespace rigidlab
