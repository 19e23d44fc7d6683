#pragma once

// Generating functions quadratic at infinity on the torus T^n (n = 1, 2):
// S(q; xi) on T^n x R^k with S = xi^T Q xi + r(q) once |xi| > C.

#include "rigidlab/error.hpp"
#include "rigidlab/hamlang.hpp"
#include "rigidlab/phase.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rigidlab
{

class QuadraticForm
{
public:
    // The empty form (k = 0).
    QuadraticForm() = default;
    // Symmetric within 1e-12 and no eigenvalue in (-1e-9, 1e-9).
    explicit QuadraticForm(Matrix q);

    static QuadraticForm diagonal(const std::vector<double>& entries);
    static QuadraticForm direct_sum(const QuadraticForm& a, const QuadraticForm& b);

    int size() const { return static_cast<int>(q_.rows()); }
    const Matrix& matrix() const { return q_; }
    int negative_index() const { return negative_index_; }
    // Smallest |eigenvalue|; +inf for the empty form.
    double smallest_magnitude() const { return smallest_magnitude_; }

    double operator()(const Vector& xi) const;
    QuadraticForm negated() const;

private:
    Matrix q_ = Matrix(0, 0);
    int negative_index_ = 0;
    double smallest_magnitude_ = std::numeric_limits<double>::infinity();
};

// A group of fiber coordinates. The residual S - Q may depend on a block
// only while |xi_block| <= cutoff; pure quadratic blocks (stabilizations)
// never enter the residual.
struct FiberBlock
{
    int size = 0;
    double cutoff = 0.0;
    bool pure_quadratic = false;
};

class GFQI
{
public:
    using ValueFn = std::function<double(const Vector&)>;
    using GradientFn = std::function<std::optional<Vector>(const Vector&)>;

    // General constructor. value and gradient act on z = (q_1..q_n, xi_1..xi_k);
    // gradient may be empty, in which case central differences are used.
    GFQI(int n, QuadraticForm quad, double cutoff, ValueFn value, GradientFn gradient,
         std::string description);

    static constexpr double kDefaultCutoff = 1.0;

    int base_dim() const { return n_; }
    int fiber_dim() const { return quad_.size(); }
    const QuadraticForm& quad() const { return quad_; }
    int negative_index() const { return quad_.negative_index(); }
    // Largest block cutoff (kDefaultCutoff when no block has a residual).
    double cutoff() const;
    const std::vector<FiberBlock>& blocks() const { return blocks_; }
    // Built by a difference (or sum) of two GFQI: S - Q is independent of xi
    // only once every block is beyond its own cutoff.
    bool difference_type() const { return difference_type_; }
    const std::string& description() const { return description_; }
    bool has_exact_gradient() const { return static_cast<bool>(core_->gradient); }

    double operator()(const Vector& z) const;
    double value(const Vector& q, const Vector& xi) const;
    std::optional<Vector> gradient(const Vector& z) const;

    // max |(S - Q)(q, xi1) - (S - Q)(q, xi2)| over random pairs of fiber
    // points that are beyond the cutoff in every residual block; zero when S
    // is quadratic at infinity (up to a function of q alone).
    double quadratic_at_infinity_defect(int samples, std::uint64_t seed) const;
    // max |S(q + e_i; xi) - S(q; xi)| over random samples.
    double periodicity_defect(int samples, std::uint64_t seed) const;

    // Shares the core of the operand; used by the operations below.
    GFQI with(QuadraticForm quad, std::vector<FiberBlock> blocks, ValueFn value, GradientFn gradient,
              std::string description, bool difference_type) const;

private:
    struct Core
    {
        ValueFn value;
        GradientFn gradient;
    };

    GFQI() = default;

    int n_ = 1;
    QuadraticForm quad_;
    std::vector<FiberBlock> blocks_;
    bool difference_type_ = false;
    std::string description_;
    std::shared_ptr<const Core> core_;
};

// k = 0 generating function of graph(df). f is an expression in q1..qn with
// no fiber variables; it must be 1-periodic in every q.
GFQI from_base_function(const hamlang::Expression& f);
GFQI from_base_function(std::string_view source, int n);

// S given by an expression in (q, xi) (no momenta); the quadratic form fixes k.
GFQI from_expression(const hamlang::Expression& s, QuadraticForm quad, double cutoff);

// Grid-sampled S on T^n x [-R, R]^k, interpolated with cubic Lagrange
// stencils. Outside the fiber box, S = Q(xi) + (S - Q)(q, clamp(xi)). The
// cutoff of the result is the declared one plus two fiber grid cells.
struct GridGfqiData
{
    int n = 1;
    int k = 0;
    std::vector<int> resolutions;
    double extent = 0.0;
    double cutoff = 1.0;
    Matrix quad = Matrix(0, 0);
    std::vector<double> samples;
};

GFQI from_grid(const GridGfqiData& data);

// Text format: one JSON header line
//   {"format":"rigidlab-gfqi-grid","version":1,"n":..,"k":..,"resolutions":[..],
//    "extent":R,"cutoff":C,"Q":[[..],..]}
// followed by whitespace-separated samples in row-major order (last axis
// fastest). Base axes hold resolution points of [0, 1); fiber axes hold
// resolution points of [-R, R] including both ends.
GridGfqiData read_grid_gfqi(std::istream& in);
void write_grid_gfqi(std::ostream& out, const GridGfqiData& data);
GridGfqiData sample_grid_gfqi(const GFQI& s, const std::vector<int>& resolutions, double extent);

// S1(q; xi1) - S2(q; xi2) with quad block-diag(Q1, -Q2).
GFQI ominus(const GFQI& s1, const GFQI& s2);
// S1(q; xi1) + S2(q; xi2) with quad block-diag(Q1, Q2).
GFQI direct_sum(const GFQI& s1, const GFQI& s2);
// S(q; xi) + eta^T B eta.
GFQI stabilize(const GFQI& s, const QuadraticForm& b);
GFQI add_constant(const GFQI& s, double c);
// -S, with quad -Q.
GFQI negate(const GFQI& s);

// A fiber-preserving map (q, xi) -> (q, phi(q, xi)).
struct FiberDiffeo
{
    std::function<Vector(const Vector& q, const Vector& xi)> map;
    // Derivative of phi with respect to (q, xi), k x (n + k); optional.
    std::function<Matrix(const Vector& q, const Vector& xi)> jacobian;
    bool identity = false;

    static FiberDiffeo identity_map();
    // xi -> xi + bump(|xi| / radius) v; a diffeomorphism when
    // |v| < radius / 3.75, and the identity for |xi| >= radius.
    static FiberDiffeo bump_shift(Vector v, double radius);
};

// S o (id, phi). phi must be the identity for |xi| > C with C = s.cutoff();
// this is checked on random samples and violations raise InvalidArgument.
// Every block of the result carries a residual with cutoff at least C.
GFQI apply_fiber_diffeo(const GFQI& s, const FiberDiffeo& phi, std::uint64_t seed = 1);

struct WavefrontPoint
{
    Vector q;
    Vector p;
    Vector xi;
    double residual = 0.0;
};

struct WavefrontSample
{
    std::vector<WavefrontPoint> points;
    double residual_bound = 0.0;
    // Set when no seed converged.
    bool empty_warning = false;
};

// Scans T^n x [-R, R]^k (R = C + 1) with base_resolution points per base axis
// and fiber_resolution per fiber axis, Newton-polishes seeds in xi at fixed q
// and returns (q, dS/dq) at fiber-critical points with |dS/dxi| <= residual_tol.
WavefrontSample wavefront(const GFQI& s, int base_resolution, double residual_tol,
                          int fiber_resolution = 33);

// Largest |p| difference between two wavefronts at matching q samples: for
// each point of a the closest point of b with equal q is compared.
double wavefront_distance(const WavefrontSample& a, const WavefrontSample& b);

} // namespace rigidlab
