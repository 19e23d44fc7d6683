#pragma once

// Min-max critical values c(1, S) and c(mu, S) of a GFQI from Z/2 persistent
// homology of a cubical lower-star filtration, the gamma invariant and
// distance, and lower bounds for the Hamiltonian metric gamma-hat.

#include "rigidlab/error.hpp"
#include "rigidlab/gfqi.hpp"
#include "rigidlab/phase.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace rigidlab
{

struct FiltrationOptions
{
    // Vertices per base axis (periodic).
    int base_resolution = 256;
    // Vertices per fiber axis; 0 picks 65, 33 or 17 for k = 1, 2, >= 3.
    int fiber_resolution = 0;
    // Half-width of the value window; 0 estimates it from S.
    double c_box = 0.0;

    void validate() const;
};

// Cells of the product grid T^n x [-R, R]^k in doubled coordinates: along a
// periodic axis with N vertices coordinate 2i is vertex i and 2i+1 the edge
// (i, i+1 mod N); along a closed axis with M vertices there are 2M-1
// coordinates. Flat indices are row-major, last axis fastest. The cone over
// the subcomplex {value <= -c_box} is appended: the cone vertex has index
// cell_count() and the cone over cell i has index cell_count() + 1 + i.
class CubicalFiltration
{
public:
    int base_dim() const { return n_; }
    int fiber_dim() const { return k_; }
    const std::vector<int>& vertex_counts() const { return vertex_counts_; }
    const std::vector<int>& shape() const { return shape_; }
    double extent() const { return extent_; }
    double c_box() const { return c_box_; }
    // Largest |S| change along a base-axis edge with |xi|_inf <= C + 1: the
    // value resolution of one grid cell.
    double cell_tolerance() const { return cell_tolerance_; }

    std::size_t cell_count() const { return values_.size(); }
    double value(std::size_t cell) const { return values_[cell]; }
    const std::vector<double>& values() const { return values_; }
    int dimension(std::size_t cell) const;
    std::vector<std::size_t> boundary(std::size_t cell) const;

    bool has_cone() const { return !coned_.empty(); }
    // Cells whose value is <= -c_box, in increasing index order.
    const std::vector<std::size_t>& coned_cells() const { return coned_; }

    friend CubicalFiltration build_filtration(const GFQI& s, const FiltrationOptions& options);

private:
    int n_ = 1;
    int k_ = 0;
    std::vector<int> vertex_counts_;
    std::vector<int> shape_;
    std::vector<std::size_t> strides_;
    double extent_ = 0.0;
    double c_box_ = 0.0;
    double cell_tolerance_ = 0.0;
    std::vector<double> values_;
    std::vector<std::size_t> coned_;
};

CubicalFiltration build_filtration(const GFQI& s, const FiltrationOptions& options = {});

struct PersistencePair
{
    int degree = 0;
    double birth = 0.0;
    // +inf for essential classes.
    double death = std::numeric_limits<double>::infinity();

    bool essential() const { return death == std::numeric_limits<double>::infinity(); }
};

struct PersistenceDiagram
{
    // Sorted by (degree, birth, death). Zero-length pairs and the class of the
    // cone vertex are omitted.
    std::vector<PersistencePair> pairs;

    std::vector<double> essential_births(int degree) const;
    std::size_t essential_count(int degree) const;
    int max_degree() const;
};

PersistenceDiagram compute_persistence(const CubicalFiltration& f);

// CSV with header degree,birth,death; death empty for essential classes.
void write_diagram_csv(std::ostream& out, const PersistenceDiagram& d);

enum class MinmaxClass
{
    unit,
    fundamental,
};

struct MinmaxResult
{
    double unit = 0.0;
    double fundamental = 0.0;
    double cell_tolerance = 0.0;
    double c_box = 0.0;
    PersistenceDiagram diagram;
};

// Essential births in degrees i- (unit) and i- + n (fundamental). The
// essential census must be binomial(n, d - i-) in every degree d, otherwise
// TopologyError is raised.
MinmaxResult minmax_values(const GFQI& s, const FiltrationOptions& options = {});
double minmax_value(const GFQI& s, MinmaxClass which, const FiltrationOptions& options = {});

// True iff Newton polishing from the local minima of |DS| on a grid finds a
// point with |DS| <= tol and |S - lambda| <= tol.
bool critical_value_check(const GFQI& s, double lambda, double tol);

struct GammaResult
{
    double gamma = 0.0;
    double unit = 0.0;
    double fundamental = 0.0;
    double cell_tolerance = 0.0;
    // The raw difference was within one cell of 0 and reported as 0.
    bool clamped = false;
};

GammaResult gamma_invariant(const GFQI& s, const FiltrationOptions& options = {});
// gamma_invariant(ominus(s1, s2)).
GammaResult gamma_distance(const GFQI& s1, const GFQI& s2, const FiltrationOptions& options = {});

struct PropertyCheck
{
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Duality c(1, -S) = -c(mu, S) for S1 and S2, and subadditivity
// c(1, S1 + S2) >= c(1, S1) + c(1, S2) and c(mu, S1 + S2) >= c(1, S1) + c(mu, S2)
// with the sum over separate fiber blocks. Tolerance: two grid cells.
std::vector<PropertyCheck> property_checks(const GFQI& s1, const GFQI& s2, const FiltrationOptions& options = {});

// The image of graph(df) under the time-t flow of H, for a fiberless f and an
// H that does not depend on p along the swept segments
// {(q, Df(q) - s dH/dq) : 0 <= s <= t}: it is graph(d(f - t h)) with
// h(q) = H(q, Df(q)). The independence is checked on samples; a violation
// raises InvalidArgument.
GFQI image_under_flow(const ScalarField& H, const GFQI& f, double t, int resolution = 256);

struct HatGammaBound
{
    // A lower bound on gamma-hat, never the value itself.
    double lower_bound = 0.0;
    std::vector<double> per_member;
    double cell_tolerance = 0.0;
};

// max over the family of gamma(phi^t(L), L).
HatGammaBound hatgamma_lower_bound(const ScalarField& H, const std::vector<GFQI>& family, double t,
                                   const FiltrationOptions& options = {});
// max over t in {0, 0.1, ..., 1} of the bound above.
HatGammaBound hatgamma_sup_lower_bound(const ScalarField& H, const std::vector<GFQI>& family,
                                       const FiltrationOptions& options = {});

} // namespace rigidlab
