#include "rigidlab/catalog.hpp"

#include "rigidlab/hamlang.hpp"

#include <cmath>
#include <sstream>

namespace rigidlab::catalog
{

namespace
{

constexpr const char* kTwoPiQ1 = "6.283185307179586*q1";
constexpr const char* kTwoPiQ2 = "6.283185307179586*q2";

// Flow family: time-1 flows of bump_hill / n.
constexpr double kHillAmplitude = 0.8;
constexpr double kHillRadius = 3.0;
constexpr double kFlowStep = 1e-2;

Entry ham(std::string name, std::string family, std::string source, int d, std::string description,
          bool c11 = false, std::optional<double> support = std::nullopt)
{
    Entry e;
    e.name = std::move(name);
    e.kind = Kind::hamiltonian;
    e.family = std::move(family);
    e.source = std::move(source);
    e.dim = d;
    e.c11 = c11;
    e.support = support;
    e.description = std::move(description);
    return e;
}

Entry gen(std::string name, std::string family, std::string source, int n, std::vector<double> quadratic,
          std::string description)
{
    Entry e;
    e.name = std::move(name);
    e.kind = Kind::gfqi;
    e.family = std::move(family);
    e.source = std::move(source);
    e.dim = n;
    e.quadratic = std::move(quadratic);
    e.description = std::move(description);
    return e;
}

Entry fam(std::string name, std::string source, int d, double support, std::string description)
{
    Entry e;
    e.name = std::move(name);
    e.kind = Kind::map_family;
    e.family = "symplectic";
    e.source = std::move(source);
    e.dim = d;
    e.support = support;
    e.description = std::move(description);
    return e;
}

std::string hill_source()
{
    std::ostringstream s;
    s << kHillAmplitude << "*bump(q1/" << kHillRadius << ")*bump(p1/" << kHillRadius << ")";
    return s.str();
}

std::vector<Entry> build()
{
    const std::string cos1 = std::string("cos(") + kTwoPiQ1 + ")";
    const std::string cos2 = std::string("cos(") + kTwoPiQ2 + ")";
    std::vector<Entry> v;
    v.push_back(ham("free", "smooth", "p1^2/2", 1, "free particle"));
    v.push_back(ham("harmonic", "smooth", "q1^2/2 + p1^2/2", 1, "harmonic oscillator"));
    v.push_back(ham("pendulum", "smooth", "p1^2/2 + cos(q1)", 1, "pendulum"));
    v.push_back(ham("momentum", "smooth", "p1", 1, "momentum; {pendulum, momentum} = -sin q"));
    v.push_back(ham("pendulum-bump", "smooth", "(p1^2/2 + cos(q1))*bump(q1/8)*bump(p1/8)", 1,
                    "pendulum cut off outside [-8, 8]^2", false, 8.0));
    v.push_back(ham("bump-hill", "smooth", hill_source(), 1, "compactly supported hill", false, kHillRadius));
    v.push_back(ham("coupled", "smooth", "q1*p2 - q2*p1 + p1^2*p2^2/4", 2, "rotation plus quartic coupling"));
    v.push_back(ham("c11-square", "c11", "q1*abs(q1)/2", 1, "q|q|/2", true));
    v.push_back(ham("c11-well", "c11", "q1*abs(q1)/2 + p1^2/2", 1, "q|q|/2 plus kinetic energy", true));
    v.push_back(ham("kink", "lipschitz", "abs(q1)", 1, "|q|"));
    v.push_back(ham("kink-max", "lipschitz", "max(q1, p1)", 1, "max(q, p)"));
    v.push_back(gen("cos-circle", "fiberless", cos1, 1, {}, "graph of d cos(2 pi q) on T^1"));
    v.push_back(gen("cos-torus", "fiberless", cos1 + " + " + cos2 + "/2", 2, {},
                    "graph of d(cos 2 pi q1 + cos 2 pi q2 / 2) on T^2"));
    v.push_back(gen("cos-circle-plus", "stabilized", cos1 + " + xi1^2", 1, {1.0},
                    "cos-circle stabilized by (+1)"));
    v.push_back(gen("cos-circle-minus", "stabilized", cos1 + " - xi1^2", 1, {-1.0},
                    "cos-circle stabilized by (-1)"));
    v.push_back(fam("flow-bump-hill", hill_source(), 1, kHillRadius, "time-1 flows of bump-hill / n"));
    v.push_back(fam("shear-circle", shear_generating_source(1, 2.0, 1), 1, 3.0,
                    "generating-function shears with sin(2 pi n q) / (2 pi n)^2, d = 1, R = 2"));
    v.push_back(fam("shear-plane", shear_generating_source(2, 4.0, 1), 2, 5.0,
                    "generating-function shears with sin(2 pi n q) / (2 pi n)^2, d = 2, R = 4"));
    return v;
}

double shear_radius(const Entry& e) { return e.dim == 1 ? 2.0 : 4.0; }

} // namespace

const char* to_string(Kind kind)
{
    switch (kind) {
    case Kind::hamiltonian: return "hamiltonian";
    case Kind::gfqi: return "gfqi";
    case Kind::map_family: return "map-family";
    }
    return "?";
}

hamlang::Dims Entry::dims() const
{
    switch (kind) {
    case Kind::gfqi: return hamlang::Dims{dim, static_cast<int>(quadratic.size()), false};
    default: return hamlang::Dims{dim, 0, true};
    }
}

const std::vector<Entry>& entries()
{
    static const std::vector<Entry> all = build();
    return all;
}

const Entry* find(std::string_view name)
{
    for (const auto& e : entries()) {
        if (e.name == name) {
            return &e;
        }
    }
    return nullptr;
}

ScalarField hamiltonian(const Entry& e)
{
    if (e.kind != Kind::hamiltonian) {
        throw InvalidArgument("catalog: " + e.name + " is not a Hamiltonian");
    }
    ScalarField f = hamlang::field_from_source(e.source, e.dim, Box::unbounded(2 * e.dim), e.c11);
    if (e.support) {
        f = f.with_support(Box::cube(2 * e.dim, -*e.support, *e.support));
    }
    return f;
}

GFQI gfqi(const Entry& e)
{
    if (e.kind != Kind::gfqi) {
        throw InvalidArgument("catalog: " + e.name + " is not a generating function");
    }
    if (e.quadratic.empty()) {
        return from_base_function(e.source, e.dim);
    }
    return from_expression(hamlang::parse_expression(e.source, e.dims()), QuadraticForm::diagonal(e.quadratic),
                           e.cutoff);
}

RigidityFamily family(const Entry& e)
{
    if (e.kind != Kind::map_family) {
        throw InvalidArgument("catalog: " + e.name + " is not a map family");
    }
    if (e.name == "flow-bump-hill") {
        const ScalarField h = hamlang::field_from_source(e.source, 1, Box::unbounded(2));
        return flow_family(h, IntegratorConfig{kFlowStep, 1e-13, 50}, family_support(e));
    }
    return shear_family(e.dim, shear_radius(e));
}

double family_bound(const Entry& e, int n)
{
    if (e.kind != Kind::map_family) {
        throw InvalidArgument("catalog: " + e.name + " is not a map family");
    }
    if (e.name == "flow-bump-hill") {
        // |dH/dq|, |dH/dp| <= a * 3.75 / R.
        return flow_family_bound(std::sqrt(2.0) * kHillAmplitude * 3.75 / kHillRadius, n);
    }
    return shear_family_bound(e.dim, shear_radius(e), n);
}

Box family_support(const Entry& e)
{
    if (e.kind != Kind::map_family) {
        throw InvalidArgument("catalog: " + e.name + " is not a map family");
    }
    if (e.name == "flow-bump-hill") {
        return Box::cube(2, -kHillRadius, kHillRadius);
    }
    return shear_support(e.dim, shear_radius(e));
}

int family_degrees_of_freedom(const Entry& e) { return e.dim; }

std::string listing()
{
    std::ostringstream out;
    for (const auto& e : entries()) {
        out << e.name << "\t" << to_string(e.kind) << "\t" << e.family;
        out << "\t" << (e.kind == Kind::gfqi ? "n=" : "d=") << e.dim;
        if (!e.quadratic.empty()) {
            out << " k=" << e.quadratic.size();
        }
        if (e.c11) {
            out << " c11";
        }
        if (e.support) {
            out << " support=" << *e.support;
        }
        out << "\t" << e.source << "\t" << e.description << "\n";
    }
    return out.str();
}

} // namespace rigidlab::catalog
