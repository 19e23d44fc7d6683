#pragma once

// Built-in Hamiltonians, generating functions and symplectic map families,
// addressable by name from experiment configs.

#include "rigidlab/gfqi.hpp"
#include "rigidlab/phase.hpp"
#include "rigidlab/rigidity.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rigidlab::catalog
{

enum class Kind
{
    hamiltonian,
    gfqi,
    map_family,
};

const char* to_string(Kind kind);

struct Entry
{
    std::string name;
    Kind kind = Kind::hamiltonian;
    // smooth, c11, lipschitz, fiberless, stabilized or symplectic.
    std::string family;
    // Hamiltonian or GFQI core in hamlang; for map families the Hamiltonian
    // or generating function of member n = 1.
    std::string source;
    // Degrees of freedom for phase-space entries, base dimension for GFQI.
    int dim = 1;
    // GFQI fiber form (diagonal); empty for fiberless entries.
    std::vector<double> quadratic;
    double cutoff = 1.0;
    bool c11 = false;
    // Half-width of the declared support cube in phase space.
    std::optional<double> support;
    std::string description;

    // Variable layout the source parses with.
    hamlang::Dims dims() const;
};

const std::vector<Entry>& entries();
// nullptr when the name is unknown.
const Entry* find(std::string_view name);

// Field on R^{2d} with exact derivatives and the declared support.
ScalarField hamiltonian(const Entry& e);
GFQI gfqi(const Entry& e);
RigidityFamily family(const Entry& e);
// Closed-form bound on |Phi_n - id| for a map family.
double family_bound(const Entry& e, int n);
// Support box of a map family.
Box family_support(const Entry& e);
int family_degrees_of_freedom(const Entry& e);

// One line per entry: name, kind, family, flags and source.
std::string listing();

} // namespace rigidlab::catalog
