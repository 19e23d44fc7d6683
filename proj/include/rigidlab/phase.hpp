#pragma once

// Phase-space calculus on R^{2d} with coordinates ordered (q_1..q_d, p_1..p_d).
//
// Sign convention: E = [[0, I], [-I, 0]], so X_H = E DH = (dH/dp, -dH/dq) and
// {f, g} = sum_i (df/dq_i dg/dp_i - df/dp_i dg/dq_i) = <Df, E Dg>, giving
// {q_i, p_j} = +delta_ij.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace rigidlab
{

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class PhasePoint
{
public:
    // Implicit so that plain coordinate vectors can be passed wherever a
    // phase point is expected; the length must be even and positive.
    PhasePoint(Vector coords);
    PhasePoint(int d, Vector coords);

    static PhasePoint from_qp(const Vector& q, const Vector& p);

    int degrees_of_freedom() const { return d_; }
    const Vector& coords() const { return coords_; }
    double q(int i) const { return coords_[i]; }
    double p(int i) const { return coords_[d_ + i]; }

    operator const Vector&() const { return coords_; }

private:
    int d_;
    Vector coords_;
};

// The 2d x 2d matrix [[0, I], [-I, 0]].
Matrix symplectic_matrix(int d);

// Axis-aligned box, optionally periodic along some axes (a torus factor).
// Bounds may be infinite for unbounded domains.
struct Box
{
    Vector lower;
    Vector upper;
    std::vector<bool> periodic;

    Box() = default;
    Box(Vector lower, Vector upper, std::vector<bool> periodic = {});

    static Box cube(int dim, double lo, double hi);
    static Box unit_torus(int dim);
    static Box unbounded(int dim);

    int dim() const { return static_cast<int>(lower.size()); }
    bool bounded() const;
    bool contains(const Vector& x, double slack = 1e-12) const;
    Vector center() const;
};

// Uniform sample grid on a bounded box. Periodic axes hold `count` points
// lo + i (hi - lo) / count; closed axes hold `count` points including both
// endpoints. Points are enumerated with the last axis varying fastest.
class SampleGrid
{
public:
    SampleGrid(Box box, std::vector<int> counts);
    SampleGrid(Box box, int count);

    const Box& box() const { return box_; }
    const std::vector<int>& counts() const { return counts_; }
    int dim() const { return box_.dim(); }
    std::size_t size() const { return size_; }
    double spacing(int axis) const;
    double coordinate(int axis, int index) const;
    std::vector<int> multi_index(std::size_t flat) const;
    std::size_t flat_index(const std::vector<int>& multi) const;
    Vector point(std::size_t flat) const;

private:
    Box box_;
    std::vector<int> counts_;
    std::size_t size_ = 0;
};

enum class GradientMode
{
    exact,
    finite_difference,
    finite_difference_unsafe,
};

enum class Regularity
{
    smooth,
    c11,
    lipschitz,
};

const char* to_string(GradientMode mode);
const char* to_string(Regularity regularity);

// A real function on a box in R^m with first (and for smooth fields second)
// derivatives. Gradients return nullopt where the field is not differentiable.
// Immutable and cheap to copy; all callbacks must be reentrant.
class ScalarField
{
public:
    using ValueFn = std::function<double(const Vector&)>;
    using GradientFn = std::function<std::optional<Vector>(const Vector&)>;
    using HessianFn = std::function<std::optional<Matrix>(const Vector&)>;

    // Derivatives by central finite differences.
    ScalarField(Box domain, ValueFn value, Regularity regularity = Regularity::smooth);

    // Caller-supplied exact gradient; hessian may be empty.
    ScalarField(Box domain, ValueFn value, GradientFn gradient, HessianFn hessian,
                Regularity regularity);

    int dim() const { return state_->domain.dim(); }
    const Box& domain() const { return state_->domain; }
    GradientMode gradient_mode() const { return state_->mode; }
    Regularity regularity() const { return state_->regularity; }
    bool has_exact_hessian() const { return static_cast<bool>(state_->hessian); }
    bool supports_second_order() const;

    double operator()(const Vector& x) const;
    std::optional<Vector> gradient(const Vector& x) const;
    Vector require_gradient(const Vector& x) const;
    std::optional<Matrix> hessian(const Vector& x) const;

    std::optional<double> lipschitz_estimate() const { return state_->lipschitz; }
    std::optional<Box> support() const { return state_->support; }

    ScalarField with_lipschitz(double bound) const;
    ScalarField with_support(Box support) const;

private:
    struct State
    {
        Box domain;
        ValueFn value;
        GradientFn gradient;
        HessianFn hessian;
        GradientMode mode = GradientMode::finite_difference;
        Regularity regularity = Regularity::smooth;
        std::optional<double> lipschitz;
        std::optional<Box> support;
    };

    explicit ScalarField(std::shared_ptr<const State> state) : state_(std::move(state)) {}

    void check_domain(const Vector& x) const;

    std::shared_ptr<const State> state_;
};

// Finite-difference step rule: h_i = eps^{1/3} max(1, |x_i|).
double fd_step(double xi);

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x);

// Central-difference Jacobian of a vector map (rows are output components).
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& map, const Vector& x);

// Hessian from values, 4-point stencil with one Richardson level.
Matrix fd_hessian_from_values(const std::function<double(const Vector&)>& f, const Vector& x);

// Hessian as the Richardson-extrapolated Jacobian of a gradient.
Matrix fd_hessian_from_gradient(const std::function<Vector(const Vector&)>& grad,
                                const Vector& x);

// sum_i c_i f_i, derivatives combined linearly.
ScalarField linear_combination(const std::vector<ScalarField>& fields,
                               const std::vector<double>& coefficients);

double poisson_bracket(const ScalarField& f, const ScalarField& g, const PhasePoint& x);

// The pointwise bracket {f, g} as a field. Its gradient is
// Hf E Dg - Hg E Df, exact when both inputs have exact Hessians.
ScalarField bracket_field(const ScalarField& f, const ScalarField& g);

Vector hamiltonian_vector_field(const ScalarField& H, const PhasePoint& x);

// |{f,{g,h}} + {g,{h,f}} + {h,{f,g}}|. Refuses fields without second-order
// differentiation.
double jacobi_residual(const ScalarField& f, const ScalarField& g, const ScalarField& h,
                       const PhasePoint& x);

// A map of R^{2d} with Jacobian access.
struct DiffeoSample
{
    int dim = 0;
    std::function<Vector(const Vector&)> forward;
    std::function<Matrix(const Vector&)> jacobian;
    std::function<Vector(const Vector&)> inverse;

    static DiffeoSample identity(int d);
    static DiffeoSample linear(Matrix m);
    static DiffeoSample from_forward(int dim, std::function<Vector(const Vector&)> forward);
};

// ||DPhi^T E DPhi - E||_F at x.
double symplecticity_defect(const DiffeoSample& phi, const PhasePoint& x);

// Entry (i, j) is {Phi_i, Phi_j}(x) = (DPhi E DPhi^T)_{ij}.
Matrix bracket_relation_table(const DiffeoSample& phi, const PhasePoint& x);

// sup H - inf H over a nested dyadic grid of at least `resolution` points per
// axis (the resolution is rounded up to a power of two, which makes the value
// nondecreasing in the resolution). Unbounded domains use the declared support.
double c0_norm(const ScalarField& H, int resolution);

// Tensor-product cubic Lagrange interpolation of grid samples. Periodic axes
// wrap; closed axes need at least 4 points and use one-sided stencils at the
// ends.
double interpolate_cubic(const SampleGrid& grid, const std::vector<double>& samples, const Vector& x);

// max |H| over the points of a grid.
double sup_norm(const ScalarField& H, const SampleGrid& grid);

} // namespace rigidlab
