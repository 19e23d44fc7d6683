#pragma once

// Set-valued calculus for Lipschitz Hamiltonians: the weak Hamiltonian field,
// the Rampazzo-Sussmann bracket of Lipschitz vector fields, the weak Lie
// bracket, support-function Hausdorff distances, and a harness that measures
// C0-commutation of approximating sequences.

#include "rigidlab/error.hpp"
#include "rigidlab/phase.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rigidlab
{

struct SamplingSchedule
{
    double initial_radius = 1e-2;
    double shrink = 0.5;
    int shells = 6;
    int samples = 32;
    std::uint64_t seed = 1;

    void validate() const;
};

// A convex set represented by the hull of finitely many generators.
struct ConvexSetCloud
{
    std::vector<Vector> points;
    // Set when the sampled limits agreed and the value at x was returned.
    bool singleton = false;
    SamplingSchedule schedule;
    // Rays whose limit estimate was accepted.
    int accepted_rays = 0;

    int dim() const { return points.empty() ? 0 : static_cast<int>(points.front().size()); }
    double support(const Vector& direction) const;
    double diameter() const;

    static ConvexSetCloud single(Vector v);
};

// A vector field that may be undefined on a null set.
struct VectorField
{
    int dim = 0;
    std::function<std::optional<Vector>(const Vector&)> eval;
    std::string description;
};

// X_H = E DH; undefined where H has no gradient.
VectorField hamiltonian_field(const ScalarField& H);
VectorField constant_field(Vector v);

// Samples E DH on rays x + r u for r = r0 s^j, estimates the limit along
// each ray by Richardson extrapolation in r, and returns the cloud of ray
// limits. When the limits span at most 1e-6 the singleton {E DH(x)} is
// returned instead. Rays whose successive extrapolations disagree are
// discarded; if every ray is discarded DifferentiationError is raised.
ConvexSetCloud weak_hamiltonian_field(const ScalarField& H, const Vector& x, const SamplingSchedule& sched = {});

// Rampazzo-Sussmann bracket: limits of Df g - Dg f along rays, with
// Jacobians by central differences.
ConvexSetCloud rs_lie_bracket(const VectorField& f, const VectorField& g, const Vector& x,
                              const SamplingSchedule& sched = {});

// The pointwise bracket {H, K} = <DH, E DK> from first derivatives only, as a
// Lipschitz field differentiated by finite differences.
ScalarField first_order_bracket(const ScalarField& H, const ScalarField& K);

// The weak field of {H, K}. H and K must be smooth or C^{1,1}.
ConvexSetCloud weak_lie_bracket(const ScalarField& H, const ScalarField& K, const Vector& x,
                                const SamplingSchedule& sched = {});

// Unit directions for support-function comparisons in R^m: +-e_i followed by
// a Halton sequence mapped to the sphere. count >= 2m.
std::vector<Vector> comparison_directions(int m, int count);
// 64 directions in R^2, 256 otherwise.
int default_direction_count(int m);

// max_u |h_A(u) - h_B(u)| over comparison_directions and, for small clouds,
// the directions of all generator differences. A lower bound on the
// Hausdorff distance of the hulls, exact as the direction set fills the sphere.
double hausdorff_distance(const ConvexSetCloud& a, const ConvexSetCloud& b, int direction_count = 0);

void write_cloud_csv(std::ostream& out, const ConvexSetCloud& cloud);
// Schedule and acceptance record as a JSON object.
std::string cloud_provenance_json(const ConvexSetCloud& cloud);

struct C0CommuteRow
{
    int n = 0;
    double h_distance = 0.0;
    double k_distance = 0.0;
    double bracket = 0.0;
};

struct C0CommuteReport
{
    std::vector<C0CommuteRow> rows;
    // Least-squares slope of log(bracket) against log(n); NaN when a bracket
    // value is 0.
    double bracket_slope = 0.0;
    double tolerance = 0.0;
    // All three columns nonincreasing and the last bracket below tolerance.
    bool commuting_evidence = false;
};

using FieldFamily = std::function<ScalarField(int)>;

// Sup norms over the grid of H_n - H, K_n - K and {H_n, K_n} for n = 1..n_max.
C0CommuteReport c0_commute_defect(const FieldFamily& h_seq, const FieldFamily& k_seq, const ScalarField& H,
                                  const ScalarField& K, const SampleGrid& grid, int n_max, double tolerance = 1e-2);

} // namespace rigidlab
