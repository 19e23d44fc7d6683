#include "rigidlab/flow.hpp"

#include "rigidlab/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace rigidlab
{

namespace
{

Vector apply_e(const Vector& v)
{
    const int d = static_cast<int>(v.size()) / 2;
    Vector r(v.size());
    r.head(d) = v.tail(d);
    r.tail(d) = -v.head(d);
    return r;
}

Vector gradient_at(const ScalarField& H, const Vector& x)
{
    if (!H.domain().contains(x)) {
        throw IntegrationError("integrate_flow: trajectory left the domain of H");
    }
    auto g = H.gradient(x);
    if (!g) {
        throw DifferentiationError("integrate_flow: gradient of H undefined along the trajectory");
    }
    return *g;
}

int step_count(double t, double dt)
{
    if (t == 0.0) {
        return 0;
    }
    const double ratio = std::abs(t) / dt;
    // Guard against ratios like 1000.0000000001 so that t = N dt uses h = dt.
    return std::max(1, static_cast<int>(std::ceil(ratio * (1.0 - 1e-12))));
}

// One implicit midpoint step; returns the new point and the converged midpoint.
Vector midpoint_step(const ScalarField& H, const Vector& x, double h, const IntegratorConfig& cfg,
                     Vector* midpoint = nullptr)
{
    Vector x1 = x + h * apply_e(gradient_at(H, x));
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const Vector mid = 0.5 * (x + x1);
        const Vector next = x + h * apply_e(gradient_at(H, mid));
        const double change = (next - x1).lpNorm<Eigen::Infinity>();
        x1 = next;
        if (change <= cfg.tolerance * std::max(1.0, x1.lpNorm<Eigen::Infinity>())) {
            if (midpoint) {
                *midpoint = 0.5 * (x + x1);
            }
            return x1;
        }
    }
    throw IntegrationError("integrate_flow: fixed-point iteration did not converge in " +
                           std::to_string(cfg.max_iterations) + " iterations");
}

std::vector<double> default_times()
{
    std::vector<double> t(11);
    for (int i = 0; i <= 10; ++i) t[i] = 0.1 * i;
    return t;
}

std::vector<double> checked_times(std::vector<double> times)
{
    if (times.empty()) {
        return default_times();
    }
    if (times.front() != 0.0 || !std::is_sorted(times.begin(), times.end()) ||
        std::adjacent_find(times.begin(), times.end()) != times.end()) {
        throw InvalidArgument("Isotopy: time grid must start at 0 and increase strictly");
    }
    return times;
}

// Fourth-order central derivative along `axis` at a flat index (needs two
// neighbours on each side).
double central4(const SampleGrid& grid, const std::vector<double>& f, std::vector<int> idx, int axis)
{
    const double h = grid.spacing(axis);
    auto at = [&](int offset) {
        idx[axis] += offset;
        const double v = f[grid.flat_index(idx)];
        idx[axis] -= offset;
        return v;
    };
    return (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h);
}

} // namespace

void IntegratorConfig::validate() const
{
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw InvalidArgument("IntegratorConfig: dt must be positive");
    }
    if (!(tolerance > 0.0)) {
        throw InvalidArgument("IntegratorConfig: tolerance must be positive");
    }
    if (max_iterations < 1) {
        throw InvalidArgument("IntegratorConfig: max_iterations must be at least 1");
    }
}

PhasePoint integrate_flow(const ScalarField& H, const PhasePoint& x0, double t, const IntegratorConfig& cfg)
{
    cfg.validate();
    if (!std::isfinite(t)) {
        throw InvalidArgument("integrate_flow: time must be finite");
    }
    if (x0.coords().size() != H.dim()) {
        throw InvalidArgument("integrate_flow: point and Hamiltonian dimensions differ");
    }
    const int n = step_count(t, cfg.dt);
    Vector x = x0.coords();
    if (n == 0) {
        return PhasePoint(x);
    }
    const double h = t / n;
    for (int i = 0; i < n; ++i) {
        x = midpoint_step(H, x, h, cfg);
    }
    return PhasePoint(x);
}

FlowWithJacobian integrate_flow_with_jacobian(const ScalarField& H, const PhasePoint& x0, double t,
                                              const IntegratorConfig& cfg)
{
    cfg.validate();
    if (!H.has_exact_hessian() && !H.supports_second_order()) {
        throw DifferentiationError("integrate_flow_with_jacobian: H has no second derivatives");
    }
    const int dim = H.dim();
    const int n = step_count(t, cfg.dt);
    FlowWithJacobian out{x0.coords(), Matrix::Identity(dim, dim)};
    if (n == 0) {
        return out;
    }
    const double h = t / n;
    const Matrix E = symplectic_matrix(dim / 2);
    const Matrix I = Matrix::Identity(dim, dim);
    for (int i = 0; i < n; ++i) {
        Vector mid;
        out.point = midpoint_step(H, out.point, h, cfg, &mid);
        auto hess = H.hessian(mid);
        if (!hess) {
            throw DifferentiationError("integrate_flow_with_jacobian: Hessian undefined along the trajectory");
        }
        const Matrix A = E * (*hess);
        out.jacobian = (I - 0.5 * h * A).partialPivLu().solve((I + 0.5 * h * A) * out.jacobian);
    }
    return out;
}

DiffeoSample flow_map(const ScalarField& H, double t, const IntegratorConfig& cfg)
{
    cfg.validate();
    DiffeoSample phi;
    phi.dim = H.dim();
    phi.forward = [H, t, cfg](const Vector& x) { return integrate_flow(H, x, t, cfg).coords(); };
    phi.inverse = [H, t, cfg](const Vector& x) { return integrate_flow(H, x, -t, cfg).coords(); };
    if (H.has_exact_hessian() || H.supports_second_order()) {
        phi.jacobian = [H, t, cfg](const Vector& x) {
            return integrate_flow_with_jacobian(H, x, t, cfg).jacobian;
        };
    } else {
        auto forward = phi.forward;
        phi.jacobian = [forward](const Vector& x) { return fd_jacobian(forward, x); };
    }
    return phi;
}

// ---------------------------------------------------------------------------
// Isotopy

Isotopy Isotopy::flow(ScalarField H, IntegratorConfig cfg, std::vector<double> times)
{
    cfg.validate();
    Isotopy iso;
    iso.kind_ = Kind::flow;
    iso.dim_ = H.dim();
    iso.description_ = "flow of H";
    iso.times_ = checked_times(std::move(times));
    iso.time_resolution_ = cfg.dt;
    iso.forward_ = [H, cfg](double t, const Vector& x) { return integrate_flow(H, x, t, cfg).coords(); };
    iso.inverse_ = [H, cfg](double t, const Vector& x) { return integrate_flow(H, x, -t, cfg).coords(); };
    return iso;
}

Isotopy Isotopy::commutator(ScalarField H, ScalarField K, double s, IntegratorConfig cfg,
                            std::vector<double> times)
{
    cfg.validate();
    if (H.dim() != K.dim()) {
        throw InvalidArgument("commutator_isotopy: H and K live on different spaces");
    }
    Isotopy iso;
    iso.kind_ = Kind::commutator;
    iso.dim_ = H.dim();
    iso.description_ = "commutator of (H, K, s=" + std::to_string(s) + ")";
    iso.times_ = checked_times(std::move(times));
    iso.time_resolution_ = cfg.dt;
    iso.forward_ = [H, K, s, cfg](double t, const Vector& x) {
        Vector y = integrate_flow(K, x, -s, cfg).coords();
        y = integrate_flow(H, y, -t, cfg).coords();
        y = integrate_flow(K, y, s, cfg).coords();
        return integrate_flow(H, y, t, cfg).coords();
    };
    iso.inverse_ = [H, K, s, cfg](double t, const Vector& x) {
        Vector y = integrate_flow(H, x, -t, cfg).coords();
        y = integrate_flow(K, y, -s, cfg).coords();
        y = integrate_flow(H, y, t, cfg).coords();
        return integrate_flow(K, y, s, cfg).coords();
    };
    return iso;
}

Isotopy Isotopy::external(int dim, MapFn forward, MapFn inverse, std::string description,
                          std::vector<double> times)
{
    if (dim < 2 || dim % 2 != 0 || !forward || !inverse) {
        throw InvalidArgument("Isotopy::external: need an even dimension and both map directions");
    }
    Isotopy iso;
    iso.kind_ = Kind::external;
    iso.dim_ = dim;
    iso.description_ = std::move(description);
    iso.times_ = checked_times(std::move(times));
    iso.time_resolution_ = 0.0;
    iso.forward_ = std::move(forward);
    iso.inverse_ = std::move(inverse);
    return iso;
}

DiffeoSample Isotopy::at(double t) const
{
    DiffeoSample phi;
    phi.dim = dim_;
    auto fwd = forward_;
    auto inv = inverse_;
    phi.forward = [fwd, t](const Vector& x) { return fwd(t, x); };
    phi.inverse = [inv, t](const Vector& x) { return inv(t, x); };
    auto forward = phi.forward;
    phi.jacobian = [forward](const Vector& x) { return fd_jacobian(forward, x); };
    return phi;
}

Isotopy commutator_isotopy(const ScalarField& H, const ScalarField& K, double s, const IntegratorConfig& cfg)
{
    return Isotopy::commutator(H, K, s, cfg);
}

double commutation_defect(const ScalarField& H, const ScalarField& K, double s, double t,
                          const SampleGrid& grid, const IntegratorConfig& cfg)
{
    if (H.dim() != K.dim() || grid.dim() != H.dim()) {
        throw InvalidArgument("commutation_defect: dimension mismatch");
    }
    std::vector<double> defect(grid.size(), 0.0);
    parallel_for(grid.size(), [&](std::size_t i) {
        const Vector x = grid.point(i);
        const Vector a = integrate_flow(H, integrate_flow(K, x, s, cfg), t, cfg).coords();
        const Vector b = integrate_flow(K, integrate_flow(H, x, t, cfg), s, cfg).coords();
        defect[i] = (a - b).norm();
    });
    return *std::max_element(defect.begin(), defect.end());
}

// ---------------------------------------------------------------------------
// Reconstruction

Reconstruction reconstruct_hamiltonian_sampled(const Isotopy& iso, const SampleGrid& grid, double t,
                                               const ReconstructionOptions& options)
{
    const int dim = grid.dim();
    if (dim != iso.dim()) {
        throw InvalidArgument("reconstruct_hamiltonian: grid and isotopy dimensions differ");
    }
    for (int a = 0; a < dim; ++a) {
        if (grid.box().periodic[a]) {
            throw InvalidArgument("reconstruct_hamiltonian: grid axes must be closed intervals");
        }
        if (grid.counts()[a] < 5) {
            throw InvalidArgument("reconstruct_hamiltonian: need at least 5 points per axis");
        }
    }
    if (!(options.time_step > 0.0)) {
        throw InvalidArgument("reconstruct_hamiltonian: time step must be positive");
    }
    double delta = options.time_step;
    if (iso.time_resolution() > 0.0) {
        delta = std::max(1.0, std::round(delta / iso.time_resolution())) * iso.time_resolution();
    }

    // G = -E V = DH_t at every grid point.
    std::vector<Vector> G(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        const Vector y = grid.point(i);
        const Vector x = iso.apply_inverse(t, y);
        if (!x.allFinite()) {
            throw IntegrationError("reconstruct_hamiltonian: inversion failed");
        }
        const Vector v = (iso.apply(t + delta, x) - iso.apply(t - delta, x)) / (2.0 * delta);
        G[i] = -apply_e(v);
    });

    Reconstruction out{ScalarField(grid.box(), [](const Vector&) { return 0.0; }), {}, 0.0};

    // Closedness: D_j G_i = D_i G_j at interior points.
    std::vector<std::vector<double>> component(dim, std::vector<double>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (int a = 0; a < dim; ++a) component[a][i] = G[i][a];
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::vector<int> idx = grid.multi_index(i);
        for (int a = 0; a < dim; ++a) {
            if (idx[a] < 2 || idx[a] > grid.counts()[a] - 3) continue;
            for (int b = a + 1; b < dim; ++b) {
                if (idx[b] < 2 || idx[b] > grid.counts()[b] - 3) continue;
                const double curl = central4(grid, component[a], idx, b) - central4(grid, component[b], idx, a);
                out.max_curl = std::max(out.max_curl, std::abs(curl));
            }
        }
    }
    if (!(out.max_curl <= options.curl_tolerance)) {
        throw ClosednessError("reconstruct_hamiltonian: curl " + std::to_string(out.max_curl) +
                              " exceeds tolerance; the isotopy is not Hamiltonian to working precision");
    }

    // Line integration from the lower corner: first along axis 0, then each
    // later axis starting from the already-filled hyperplane.
    std::vector<double> H(grid.size(), 0.0);
    for (int a = 0; a < dim; ++a) {
        const int count = grid.counts()[a];
        const double h = grid.spacing(a);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            std::vector<int> idx = grid.multi_index(i);
            if (idx[a] != 0) continue;
            bool later_zero = true;
            for (int b = a + 1; b < dim; ++b) later_zero = later_zero && idx[b] == 0;
            if (!later_zero) continue;
            std::vector<double> f(count);
            std::vector<std::size_t> flat(count);
            for (int m = 0; m < count; ++m) {
                idx[a] = m;
                flat[m] = grid.flat_index(idx);
                f[m] = component[a][flat[m]];
            }
            double acc = H[flat[0]];
            for (int m = 0; m + 1 < count; ++m) {
                double piece;
                if (m == 0) {
                    piece = 9 * f[0] + 19 * f[1] - 5 * f[2] + f[3];
                } else if (m == count - 2) {
                    piece = f[m - 2] - 5 * f[m - 1] + 19 * f[m] + 9 * f[m + 1];
                } else {
                    piece = -f[m - 1] + 13 * f[m] + 13 * f[m + 1] - f[m + 2];
                }
                acc += h / 24.0 * piece;
                H[flat[m + 1]] = acc;
            }
        }
    }

    const double base = interpolate_cubic(grid, H, grid.box().center());
    for (double& v : H) v -= base;
    out.samples = H;
    auto shared = std::make_shared<const std::vector<double>>(std::move(H));
    const SampleGrid g = grid;
    out.hamiltonian = ScalarField(grid.box(), [g, shared](const Vector& x) {
        return interpolate_cubic(g, *shared, x);
    });
    return out;
}

ScalarField reconstruct_hamiltonian(const Isotopy& iso, const SampleGrid& grid, double t,
                                    const ReconstructionOptions& options)
{
    return reconstruct_hamiltonian_sampled(iso, grid, t, options).hamiltonian;
}

} // namespace rigidlab
