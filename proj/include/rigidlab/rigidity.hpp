#pragma once

// The linear-algebraic skeleton of C0 rigidity for symplectomorphisms: the
// coupling matrix d I - J and its exact kernel, the tilde transformation, the
// constancy system A DC = 0 with A = DPhi E, Jacobi eliminations, and limit
// experiments on C0-convergent families of symplectic maps.

#include "rigidlab/error.hpp"
#include "rigidlab/flow.hpp"
#include "rigidlab/phase.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rigidlab
{

using IntegerMatrix = std::vector<std::vector<long long>>;

// The d x d matrix with d-1 on the diagonal and -1 elsewhere.
struct CouplingMatrix
{
    int d = 0;
    IntegerMatrix entries;

    static CouplingMatrix of(int d);
};

struct ExactKernel
{
    int rank = 0;
    // Determinant in lowest terms, e.g. "0" or "-3/2"; empty for non-square input.
    std::string determinant;
    // Primitive integer vectors, one per free column of the reduced row
    // echelon form, in column order.
    IntegerMatrix kernel;
};

// Rank, determinant and kernel basis by Gauss-Jordan elimination over the
// rationals. Throws DomainError if a kernel vector overflows long long.
ExactKernel exact_rank_kernel(const IntegerMatrix& m);

// For d >= 2: rank d-1 and kernel span{(1, ..., 1)}. For d = 1: rank 0 and
// kernel span{(1)}.
ExactKernel coupling_matrix_kernel(int d);

// A map of R^{2d} given both as a whole and as component fields
// Q_1..Q_d, P_1..P_d.
struct RigidityMap
{
    DiffeoSample map;
    std::vector<ScalarField> components;
    // Declared support: the map is the identity outside this box.
    std::optional<Box> support;
    std::string description;

    int degrees_of_freedom() const { return map.dim / 2; }

    // Components read off the forward map and its Jacobian rows; second
    // derivatives by differencing the Jacobian.
    static RigidityMap from_diffeo(DiffeoSample map, std::string description = {});
    // Components as hamlang expressions in (q, p); exact first and second
    // derivatives.
    static RigidityMap from_expressions(const std::vector<std::string>& sources, int d,
                                        std::string description = {});
};

// The matrix T of the tilde step: Qt_i = Q_i + (1/sqrt d) sum_k P_k,
// Pt_i = P_i + (1/sqrt d) sum_k Q_k, i.e. (Qt, Pt) = T (Q, P).
Matrix tilde_matrix(int d);

// T o Phi with components built as linear combinations of the originals.
RigidityMap tilde_transform(const RigidityMap& phi);

// {Qt_i, Pt_i}(x) for i = 1..d.
Vector tilde_brackets(const RigidityMap& phi, const PhasePoint& x);

struct ConstancySystem
{
    Matrix a;
    double determinant = 0.0;
};

// A = DPhi(x) E; the rows of A DC are {Phi_i, C}.
ConstancySystem constancy_system(const RigidityMap& phi, const PhasePoint& x);

struct JacobiEntry
{
    // 'Q' for {Q_i, {Q_j, P_j}}, 'P' for {P_i, {Q_j, P_j}}; indices are 0-based.
    char kind = 'Q';
    int i = 0;
    int j = 0;
    double value = 0.0;
};

struct JacobiReport
{
    std::vector<JacobiEntry> entries;
    double max_abs = 0.0;
    double tolerance = 0.0;
    bool pass = true;
};

// Evaluates {Q_i, {Q_j, P_j}} and {P_i, {Q_j, P_j}} for all i != j. Throws
// DifferentiationError when a component lacks second derivatives.
JacobiReport jacobi_elimination_check(const RigidityMap& phi, const PhasePoint& x, double tolerance = 1e-6);

// Jacobian of a map by weighted least squares over the 3^m stencil
// x + diag(step) k, k in {-1, 0, 1}^m, with Gaussian weights exp(-|k|^2 / 2).
Matrix mollified_jacobian(const std::function<Vector(const Vector&)>& map, const Vector& x, const Vector& step);

using RigidityFamily = std::function<RigidityMap(int)>;

struct RigidityOptions
{
    // Every member must satisfy symplecticity_defect <= this on the grid.
    double symplectic_tolerance = 1e-8;
    // Stencil step per axis for the limit Jacobian; 0 uses the grid spacing.
    double stencil_step = 0.0;
    // Pass threshold for the limit table and the at-infinity collar.
    double table_tolerance = 1e-6;
};

struct RigidityRow
{
    // 0 marks the row of the declared limit.
    int n = 0;
    double sup_distance = 0.0;
    // max over the grid of max |table - E|.
    double max_table_deviation = 0.0;
    // Mean and population variance over the grid of C = mean_i {Q_i, P_i}.
    double c_estimate = 0.0;
    double c_variance = 0.0;
    // max |table - E| over grid points outside the support box.
    double at_infinity_deviation = 0.0;
};

struct RigidityReport
{
    // Members n = 1..n_max, tables from their exact Jacobians.
    std::vector<RigidityRow> rows;
    // The declared limit, table from mollified Jacobians.
    RigidityRow limit;
    double tolerance = 0.0;
    // Limit table within tolerance of E on the whole grid and on the collar.
    bool limit_symplectic = false;
};

// Measures sup_x |Phi_n(x) - Phi(x)| over the grid for each member and the
// bracket table of the declared limit. Throws InvalidArgument for a
// non-symplectic member or a grid without points outside the support box,
// and ConvergenceError when the last member is farther from the limit than
// the first.
RigidityReport limit_rigidity_experiment(const RigidityFamily& family, const DiffeoSample& limit,
                                         const Box& support, const SampleGrid& grid, int n_max,
                                         const RigidityOptions& options = {});

void write_rigidity_csv(std::ostream& out, const RigidityReport& report);

// Constructive families.

// Phi_n = time-1 flow of H/n.
RigidityFamily flow_family(const ScalarField& H, const IntegratorConfig& cfg = {},
                           std::optional<Box> support = std::nullopt);

// sup |DH| / n bounds |Phi_n - id| for the midpoint flow of H/n.
double flow_family_bound(double gradient_bound, int n);

// The exact symplectic map with generating function q.P + f_n(q, P),
// f_n = (2 pi n)^{-2} sum_i sin(2 pi n q_i) prod_j bump(q_j/R) bump(P_j/R):
// p = P + f_q(q, P), Q = q + f_P(q, P). Identity outside [-R, R]^d x
// [-R - 1, R + 1]^d; requires R >= 2.
RigidityMap generating_shear(int d, double radius, int n);
// The hamlang source of f_n with P in the p slots.
std::string shear_generating_source(int d, double radius, int n);
RigidityFamily shear_family(int d, double radius);

// Closed-form bound on |Phi_n(x) - x| for generating_shear.
double shear_family_bound(int d, double radius, int n);

// The support box [-R, R]^d x [-R - 1, R + 1]^d of generating_shear.
Box shear_support(int d, double radius);

} // namespace rigidlab
