#pragma once

// Hamiltonian flows by the implicit midpoint rule, commutator isotopies and
// recovery of the Hamiltonian that generates a sampled isotopy.

#include "rigidlab/error.hpp"
#include "rigidlab/phase.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rigidlab
{

struct IntegratorConfig
{
    double dt = 1e-3;
    double tolerance = 1e-12;
    int max_iterations = 50;

    void validate() const;
};

// x(t) from x0 under X_H. The interval is split into ceil(|t| / dt) equal
// steps, so negative t runs the exact inverse of the positive-time map (the
// midpoint rule is symmetric). t = 0 returns x0 unchanged.
PhasePoint integrate_flow(const ScalarField& H, const PhasePoint& x0, double t,
                          const IntegratorConfig& cfg = {});

struct FlowWithJacobian
{
    Vector point;
    Matrix jacobian;
};

// Flow together with the derivative of the discrete flow map, propagated by
// (I - h/2 A) J' = (I + h/2 A) J with A = E Hess H at the step midpoint.
// This is the exact Jacobian of the midpoint map and is symplectic to
// roundoff. Needs second derivatives of H.
FlowWithJacobian integrate_flow_with_jacobian(const ScalarField& H, const PhasePoint& x0, double t,
                                              const IntegratorConfig& cfg = {});

// The time-t map as a DiffeoSample; the inverse integrates backwards.
DiffeoSample flow_map(const ScalarField& H, double t, const IntegratorConfig& cfg = {});

// A family of maps theta_t with theta_0 = id, evaluated on demand.
class Isotopy
{
public:
    enum class Kind
    {
        flow,
        commutator,
        external,
    };

    using MapFn = std::function<Vector(double, const Vector&)>;

    static Isotopy flow(ScalarField H, IntegratorConfig cfg, std::vector<double> times = {});

    // theta_t = phi^t psi^s phi^{-t} psi^{-s} with phi the flow of H and psi
    // that of K.
    static Isotopy commutator(ScalarField H, ScalarField K, double s, IntegratorConfig cfg,
                              std::vector<double> times = {});

    static Isotopy external(int dim, MapFn forward, MapFn inverse, std::string description,
                            std::vector<double> times = {});

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    const std::string& description() const { return description_; }
    const std::vector<double>& times() const { return times_; }
    // Smallest time step the maps are resolved at; central differences in t
    // use multiples of it.
    double time_resolution() const { return time_resolution_; }

    Vector apply(double t, const Vector& x) const { return forward_(t, x); }
    Vector apply_inverse(double t, const Vector& x) const { return inverse_(t, x); }
    DiffeoSample at(double t) const;

private:
    Kind kind_ = Kind::external;
    int dim_ = 0;
    std::string description_;
    std::vector<double> times_;
    double time_resolution_ = 1e-3;
    MapFn forward_;
    MapFn inverse_;
};

Isotopy commutator_isotopy(const ScalarField& H, const ScalarField& K, double s,
                           const IntegratorConfig& cfg = {});

// sup over grid points of |phi^t psi^s x - psi^s phi^t x|.
double commutation_defect(const ScalarField& H, const ScalarField& K, double s, double t,
                          const SampleGrid& grid, const IntegratorConfig& cfg = {});

struct ReconstructionOptions
{
    // Half-width of the central time difference; rounded to a multiple of the
    // isotopy's time resolution.
    double time_step = 1e-3;
    double curl_tolerance = 1e-4;
};

struct Reconstruction
{
    ScalarField hamiltonian;
    // Grid samples of H_t in grid order, normalized to 0 at the box center.
    std::vector<double> samples;
    double max_curl = 0.0;
};

// Recovers H_t with X_{H_t} = (d/dt theta_t) o theta_t^{-1} on a closed grid.
// The closedness of -E V_t is tested with fourth-order differences before the
// line integration; failure raises ClosednessError.
Reconstruction reconstruct_hamiltonian_sampled(const Isotopy& iso, const SampleGrid& grid, double t,
                                               const ReconstructionOptions& options = {});

ScalarField reconstruct_hamiltonian(const Isotopy& iso, const SampleGrid& grid, double t,
                                    const ReconstructionOptions& options = {});

} // namespace rigidlab
