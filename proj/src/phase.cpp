#include "rigidlab/phase.hpp"

#include "rigidlab/error.hpp"
#include "rigidlab/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace rigidlab
{

namespace
{

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_finite(const Vector& x, const char* what)
{
    if (!x.allFinite()) {
        throw InvalidArgument(std::string(what) + ": coordinates must be finite");
    }
}

} // namespace

PhasePoint::PhasePoint(Vector coords)
    : d_(static_cast<int>(coords.size() / 2)), coords_(std::move(coords))
{
    if (coords_.size() == 0 || coords_.size() % 2 != 0) {
        throw InvalidArgument("PhasePoint: coordinate count must be 2d with d >= 1");
    }
    require_finite(coords_, "PhasePoint");
}

PhasePoint::PhasePoint(int d, Vector coords) : d_(d), coords_(std::move(coords))
{
    if (d < 1) {
        throw InvalidArgument("PhasePoint: d must be at least 1");
    }
    if (coords_.size() != 2 * d) {
        throw InvalidArgument("PhasePoint: expected " + std::to_string(2 * d) +
                              " coordinates, got " + std::to_string(coords_.size()));
    }
    require_finite(coords_, "PhasePoint");
}

PhasePoint PhasePoint::from_qp(const Vector& q, const Vector& p)
{
    if (q.size() != p.size()) {
        throw InvalidArgument("PhasePoint: q and p lengths differ");
    }
    Vector c(q.size() + p.size());
    c << q, p;
    return PhasePoint(static_cast<int>(q.size()), std::move(c));
}

Matrix symplectic_matrix(int d)
{
    if (d < 1) {
        throw InvalidArgument("symplectic_matrix: d must be at least 1");
    }
    Matrix e = Matrix::Zero(2 * d, 2 * d);
    e.topRightCorner(d, d) = Matrix::Identity(d, d);
    e.bottomLeftCorner(d, d) = -Matrix::Identity(d, d);
    return e;
}

// ---------------------------------------------------------------------------
// Box / SampleGrid

Box::Box(Vector lo, Vector hi, std::vector<bool> per)
    : lower(std::move(lo)), upper(std::move(hi)), periodic(std::move(per))
{
    if (lower.size() != upper.size() || lower.size() == 0) {
        throw InvalidArgument("Box: bound lengths differ or are empty");
    }
    if (periodic.empty()) {
        periodic.assign(lower.size(), false);
    }
    if (periodic.size() != static_cast<std::size_t>(lower.size())) {
        throw InvalidArgument("Box: periodic flag count does not match dimension");
    }
    for (int i = 0; i < lower.size(); ++i) {
        if (std::isnan(lower[i]) || std::isnan(upper[i]) || !(lower[i] < upper[i])) {
            throw InvalidArgument("Box: require lower < upper on every axis");
        }
        if (periodic[i] && !(std::isfinite(lower[i]) && std::isfinite(upper[i]))) {
            throw InvalidArgument("Box: periodic axes need finite bounds");
        }
    }
}

Box Box::cube(int dim, double lo, double hi)
{
    return Box(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
}

Box Box::unit_torus(int dim)
{
    return Box(Vector::Zero(dim), Vector::Ones(dim), std::vector<bool>(dim, true));
}

Box Box::unbounded(int dim)
{
    const double inf = std::numeric_limits<double>::infinity();
    return Box(Vector::Constant(dim, -inf), Vector::Constant(dim, inf));
}

bool Box::bounded() const { return lower.allFinite() && upper.allFinite(); }

bool Box::contains(const Vector& x, double slack) const
{
    if (x.size() != lower.size()) {
        return false;
    }
    for (int i = 0; i < x.size(); ++i) {
        if (periodic[i]) {
            continue;
        }
        const double tol_lo = slack * std::max(1.0, std::isfinite(lower[i]) ? std::abs(lower[i]) : 1.0);
        const double tol_hi = slack * std::max(1.0, std::isfinite(upper[i]) ? std::abs(upper[i]) : 1.0);
        if (x[i] < lower[i] - tol_lo || x[i] > upper[i] + tol_hi) {
            return false;
        }
    }
    return true;
}

Vector Box::center() const
{
    if (!bounded()) {
        throw DomainError("Box::center: box is unbounded");
    }
    return 0.5 * (lower + upper);
}

SampleGrid::SampleGrid(Box box, std::vector<int> counts) : box_(std::move(box)), counts_(std::move(counts))
{
    if (!box_.bounded()) {
        throw InvalidArgument("SampleGrid: box must be bounded");
    }
    if (counts_.size() != static_cast<std::size_t>(box_.dim())) {
        throw InvalidArgument("SampleGrid: one count per axis required");
    }
    size_ = 1;
    for (std::size_t a = 0; a < counts_.size(); ++a) {
        const int min_count = box_.periodic[a] ? 1 : 2;
        if (counts_[a] < min_count) {
            throw InvalidArgument("SampleGrid: too few points on axis " + std::to_string(a));
        }
        size_ *= static_cast<std::size_t>(counts_[a]);
    }
}

SampleGrid::SampleGrid(Box box, int count)
    : SampleGrid(box, std::vector<int>(static_cast<std::size_t>(box.dim()), count))
{
}

double SampleGrid::spacing(int axis) const
{
    const double width = box_.upper[axis] - box_.lower[axis];
    return box_.periodic[axis] ? width / counts_[axis] : width / (counts_[axis] - 1);
}

double SampleGrid::coordinate(int axis, int index) const
{
    if (!box_.periodic[axis] && index == counts_[axis] - 1) {
        return box_.upper[axis];
    }
    return box_.lower[axis] + index * spacing(axis);
}

std::vector<int> SampleGrid::multi_index(std::size_t flat) const
{
    std::vector<int> m(counts_.size());
    for (int a = static_cast<int>(counts_.size()) - 1; a >= 0; --a) {
        m[a] = static_cast<int>(flat % counts_[a]);
        flat /= counts_[a];
    }
    return m;
}

std::size_t SampleGrid::flat_index(const std::vector<int>& m) const
{
    std::size_t flat = 0;
    for (std::size_t a = 0; a < counts_.size(); ++a) {
        flat = flat * counts_[a] + static_cast<std::size_t>(m[a]);
    }
    return flat;
}

Vector SampleGrid::point(std::size_t flat) const
{
    const auto m = multi_index(flat);
    Vector x(dim());
    for (int a = 0; a < dim(); ++a) {
        x[a] = coordinate(a, m[a]);
    }
    return x;
}

const char* to_string(GradientMode mode)
{
    switch (mode) {
    case GradientMode::exact: return "exact";
    case GradientMode::finite_difference: return "finite-difference";
    case GradientMode::finite_difference_unsafe: return "finite-difference-unsafe";
    }
    return "unknown";
}

const char* to_string(Regularity regularity)
{
    switch (regularity) {
    case Regularity::smooth: return "smooth";
    case Regularity::c11: return "C1,1";
    case Regularity::lipschitz: return "C0-Lipschitz";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Finite differences

double fd_step(double xi) { return std::cbrt(kEps) * std::max(1.0, std::abs(xi)); }

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x)
{
    Vector g(x.size());
    Vector y = x;
    for (int i = 0; i < x.size(); ++i) {
        const double h = fd_step(x[i]);
        y[i] = x[i] + h;
        const double fp = f(y);
        y[i] = x[i] - h;
        const double fm = f(y);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& map, const Vector& x)
{
    Vector y = x;
    Matrix jac;
    for (int i = 0; i < x.size(); ++i) {
        const double h = fd_step(x[i]);
        y[i] = x[i] + h;
        const Vector fp = map(y);
        y[i] = x[i] - h;
        const Vector fm = map(y);
        y[i] = x[i];
        if (i == 0) {
            jac.resize(fp.size(), x.size());
        }
        jac.col(i) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

Matrix fd_hessian_from_values(const std::function<double(const Vector&)>& f, const Vector& x)
{
    const int m = static_cast<int>(x.size());
    auto stencil = [&](const Vector& steps) {
        Matrix h(m, m);
        Vector y = x;
        const double f0 = f(x);
        for (int i = 0; i < m; ++i) {
            y[i] = x[i] + steps[i];
            const double fp = f(y);
            y[i] = x[i] - steps[i];
            const double fm = f(y);
            y[i] = x[i];
            h(i, i) = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
            for (int j = 0; j < i; ++j) {
                double acc = 0.0;
                for (int si : {1, -1}) {
                    for (int sj : {1, -1}) {
                        y[i] = x[i] + si * steps[i];
                        y[j] = x[j] + sj * steps[j];
                        acc += si * sj * f(y);
                    }
                }
                y[i] = x[i];
                y[j] = x[j];
                h(i, j) = h(j, i) = acc / (4.0 * steps[i] * steps[j]);
            }
        }
        return h;
    };
    Vector steps(m);
    for (int i = 0; i < m; ++i) {
        steps[i] = std::pow(kEps, 1.0 / 6.0) * std::max(1.0, std::abs(x[i]));
    }
    const Matrix coarse = stencil(steps);
    const Matrix fine = stencil(0.5 * steps);
    return (4.0 * fine - coarse) / 3.0;
}

Matrix fd_hessian_from_gradient(const std::function<Vector(const Vector&)>& grad, const Vector& x)
{
    const int m = static_cast<int>(x.size());
    auto stencil = [&](const Vector& steps) {
        Matrix h(m, m);
        Vector y = x;
        for (int j = 0; j < m; ++j) {
            y[j] = x[j] + steps[j];
            const Vector gp = grad(y);
            y[j] = x[j] - steps[j];
            const Vector gm = grad(y);
            y[j] = x[j];
            h.col(j) = (gp - gm) / (2.0 * steps[j]);
        }
        return h;
    };
    Vector steps(m);
    for (int i = 0; i < m; ++i) {
        steps[i] = std::pow(kEps, 0.2) * std::max(1.0, std::abs(x[i]));
    }
    const Matrix r = (4.0 * stencil(0.5 * steps) - stencil(steps)) / 3.0;
    return 0.5 * (r + r.transpose());
}

// ---------------------------------------------------------------------------
// ScalarField

ScalarField::ScalarField(Box domain, ValueFn value, Regularity regularity)
{
    if (!value) {
        throw InvalidArgument("ScalarField: value function is empty");
    }
    auto s = std::make_shared<State>();
    s->domain = std::move(domain);
    s->value = std::move(value);
    s->regularity = regularity;
    s->mode = regularity == Regularity::lipschitz ? GradientMode::finite_difference_unsafe
                                                  : GradientMode::finite_difference;
    state_ = std::move(s);
}

ScalarField::ScalarField(Box domain, ValueFn value, GradientFn gradient, HessianFn hessian,
                         Regularity regularity)
{
    if (!value || !gradient) {
        throw InvalidArgument("ScalarField: value and gradient functions are required");
    }
    auto s = std::make_shared<State>();
    s->domain = std::move(domain);
    s->value = std::move(value);
    s->gradient = std::move(gradient);
    s->hessian = std::move(hessian);
    s->regularity = regularity;
    s->mode = GradientMode::exact;
    state_ = std::move(s);
}

bool ScalarField::supports_second_order() const
{
    return state_->regularity == Regularity::smooth &&
           state_->mode != GradientMode::finite_difference_unsafe;
}

void ScalarField::check_domain(const Vector& x) const
{
    if (x.size() != dim()) {
        throw InvalidArgument("ScalarField: point has dimension " + std::to_string(x.size()) +
                              ", field expects " + std::to_string(dim()));
    }
    if (!state_->domain.contains(x)) {
        throw DomainError("ScalarField: point outside the field's domain");
    }
}

double ScalarField::operator()(const Vector& x) const
{
    check_domain(x);
    return state_->value(x);
}

std::optional<Vector> ScalarField::gradient(const Vector& x) const
{
    check_domain(x);
    if (state_->gradient) {
        return state_->gradient(x);
    }
    return fd_gradient(state_->value, x);
}

Vector ScalarField::require_gradient(const Vector& x) const
{
    auto g = gradient(x);
    if (!g) {
        throw DifferentiationError("gradient undefined at the requested point");
    }
    return *g;
}

std::optional<Matrix> ScalarField::hessian(const Vector& x) const
{
    check_domain(x);
    if (state_->hessian) {
        return state_->hessian(x);
    }
    if (!supports_second_order()) {
        throw DifferentiationError(std::string("second derivatives unavailable for ") +
                                   to_string(state_->regularity) + " field");
    }
    if (state_->gradient) {
        const auto& g = state_->gradient;
        bool undefined = false;
        Matrix h = fd_hessian_from_gradient(
            [&](const Vector& y) {
                auto gy = g(y);
                if (!gy) {
                    undefined = true;
                    return Vector(Vector::Zero(x.size()));
                }
                return *gy;
            },
            x);
        if (undefined) {
            return std::nullopt;
        }
        return h;
    }
    return fd_hessian_from_values(state_->value, x);
}

ScalarField ScalarField::with_lipschitz(double bound) const
{
    if (!(bound >= 0.0) || !std::isfinite(bound)) {
        throw InvalidArgument("ScalarField: Lipschitz estimate must be finite and nonnegative");
    }
    auto s = std::make_shared<State>(*state_);
    s->lipschitz = bound;
    return ScalarField(std::move(s));
}

ScalarField ScalarField::with_support(Box support) const
{
    if (support.dim() != dim() || !support.bounded()) {
        throw InvalidArgument("ScalarField: support must be a bounded box of the same dimension");
    }
    auto s = std::make_shared<State>(*state_);
    s->support = std::move(support);
    return ScalarField(std::move(s));
}

ScalarField linear_combination(const std::vector<ScalarField>& fields,
                               const std::vector<double>& coefficients)
{
    if (fields.empty() || fields.size() != coefficients.size()) {
        throw InvalidArgument("linear_combination: need one coefficient per field");
    }
    const int dim = fields.front().dim();
    bool all_exact = true;
    bool all_hessian = true;
    Regularity reg = Regularity::smooth;
    for (const auto& f : fields) {
        if (f.dim() != dim) {
            throw InvalidArgument("linear_combination: dimension mismatch");
        }
        all_exact = all_exact && f.gradient_mode() == GradientMode::exact;
        all_hessian = all_hessian && f.has_exact_hessian();
        reg = std::max(reg, f.regularity());
    }

    auto value = [fields, coefficients](const Vector& x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            acc += coefficients[i] * fields[i](x);
        }
        return acc;
    };
    if (!all_exact) {
        return ScalarField(fields.front().domain(), value, reg);
    }
    auto gradient = [fields, coefficients](const Vector& x) -> std::optional<Vector> {
        Vector acc = Vector::Zero(x.size());
        for (std::size_t i = 0; i < fields.size(); ++i) {
            auto g = fields[i].gradient(x);
            if (!g) {
                return std::nullopt;
            }
            acc += coefficients[i] * *g;
        }
        return acc;
    };
    ScalarField::HessianFn hessian;
    if (all_hessian) {
        hessian = [fields, coefficients](const Vector& x) -> std::optional<Matrix> {
            Matrix acc = Matrix::Zero(x.size(), x.size());
            for (std::size_t i = 0; i < fields.size(); ++i) {
                auto h = fields[i].hessian(x);
                if (!h) {
                    return std::nullopt;
                }
                acc += coefficients[i] * *h;
            }
            return acc;
        };
    }
    return ScalarField(fields.front().domain(), value, gradient, hessian, reg);
}

// ---------------------------------------------------------------------------
// Brackets

namespace
{

int half_dim(int dim, const char* what)
{
    if (dim < 2 || dim % 2 != 0) {
        throw InvalidArgument(std::string(what) + ": phase-space dimension must be 2d, d >= 1");
    }
    return dim / 2;
}

double bracket_of_gradients(const Vector& df, const Vector& dg)
{
    const int d = static_cast<int>(df.size() / 2);
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
        acc += df[i] * dg[d + i] - df[d + i] * dg[i];
    }
    return acc;
}

// E v without forming E.
Vector apply_symplectic(const Vector& v)
{
    const int d = static_cast<int>(v.size() / 2);
    Vector out(v.size());
    out.head(d) = v.tail(d);
    out.tail(d) = -v.head(d);
    return out;
}

} // namespace

double poisson_bracket(const ScalarField& f, const ScalarField& g, const PhasePoint& x)
{
    if (f.dim() != g.dim()) {
        throw InvalidArgument("poisson_bracket: fields live on different spaces");
    }
    half_dim(f.dim(), "poisson_bracket");
    return bracket_of_gradients(f.require_gradient(x), g.require_gradient(x));
}

ScalarField bracket_field(const ScalarField& f, const ScalarField& g)
{
    if (f.dim() != g.dim()) {
        throw InvalidArgument("bracket_field: fields live on different spaces");
    }
    half_dim(f.dim(), "bracket_field");
    auto value = [f, g](const Vector& x) {
        return bracket_of_gradients(f.require_gradient(x), g.require_gradient(x));
    };
    // Brackets of C^{1,1} inputs are only Lipschitz.
    if (!(f.supports_second_order() && g.supports_second_order())) {
        return ScalarField(f.domain(), value, Regularity::lipschitz);
    }
    auto gradient = [f, g](const Vector& x) -> std::optional<Vector> {
        auto df = f.gradient(x);
        auto dg = g.gradient(x);
        if (!df || !dg) {
            return std::nullopt;
        }
        auto hf = f.hessian(x);
        auto hg = g.hessian(x);
        if (!hf || !hg) {
            return std::nullopt;
        }
        return Vector(*hf * apply_symplectic(*dg) - *hg * apply_symplectic(*df));
    };
    return ScalarField(f.domain(), value, gradient, {}, Regularity::smooth);
}

Vector hamiltonian_vector_field(const ScalarField& H, const PhasePoint& x)
{
    half_dim(H.dim(), "hamiltonian_vector_field");
    return apply_symplectic(H.require_gradient(x));
}

double jacobi_residual(const ScalarField& f, const ScalarField& g, const ScalarField& h,
                       const PhasePoint& x)
{
    for (const ScalarField* field : {&f, &g, &h}) {
        if (!field->supports_second_order()) {
            throw DifferentiationError(
                std::string("jacobi_residual: second-order differentiation unavailable (") +
                to_string(field->regularity()) + ", " + to_string(field->gradient_mode()) + ")");
        }
    }
    const double a = poisson_bracket(f, bracket_field(g, h), x);
    const double b = poisson_bracket(g, bracket_field(h, f), x);
    const double c = poisson_bracket(h, bracket_field(f, g), x);
    return std::abs(a + b + c);
}

// ---------------------------------------------------------------------------
// Maps

DiffeoSample DiffeoSample::identity(int d)
{
    DiffeoSample s;
    s.dim = 2 * d;
    s.forward = [](const Vector& x) { return x; };
    s.jacobian = [n = 2 * d](const Vector&) { return Matrix(Matrix::Identity(n, n)); };
    s.inverse = [](const Vector& x) { return x; };
    return s;
}

DiffeoSample DiffeoSample::linear(Matrix m)
{
    if (m.rows() != m.cols() || m.rows() % 2 != 0) {
        throw InvalidArgument("DiffeoSample::linear: matrix must be 2d x 2d");
    }
    DiffeoSample s;
    s.dim = static_cast<int>(m.rows());
    Eigen::FullPivLU<Matrix> lu(m);
    if (!lu.isInvertible()) {
        throw InvalidArgument("DiffeoSample::linear: matrix is singular");
    }
    Matrix inv = lu.inverse();
    s.forward = [m](const Vector& x) { return Vector(m * x); };
    s.jacobian = [m](const Vector&) { return m; };
    s.inverse = [inv](const Vector& x) { return Vector(inv * x); };
    return s;
}

DiffeoSample DiffeoSample::from_forward(int dim, std::function<Vector(const Vector&)> forward)
{
    DiffeoSample s;
    s.dim = dim;
    s.forward = forward;
    s.jacobian = [forward](const Vector& x) { return fd_jacobian(forward, x); };
    return s;
}

namespace
{

Matrix checked_jacobian(const DiffeoSample& phi, const Vector& x)
{
    if (!phi.jacobian) {
        throw InvalidArgument("DiffeoSample: no Jacobian available");
    }
    if (x.size() != phi.dim) {
        throw InvalidArgument("DiffeoSample: point dimension mismatch");
    }
    Matrix j = phi.jacobian(x);
    if (j.rows() != phi.dim || j.cols() != phi.dim) {
        throw InvalidArgument("DiffeoSample: Jacobian has wrong shape");
    }
    if (!j.allFinite()) {
        throw DomainError("DiffeoSample: Jacobian is not finite");
    }
    return j;
}

} // namespace

double symplecticity_defect(const DiffeoSample& phi, const PhasePoint& x)
{
    const Matrix j = checked_jacobian(phi, x);
    if (std::abs(j.determinant()) < 1e-14) {
        throw DomainError("symplecticity_defect: Jacobian is singular");
    }
    const Matrix e = symplectic_matrix(phi.dim / 2);
    return (j.transpose() * e * j - e).norm();
}

Matrix bracket_relation_table(const DiffeoSample& phi, const PhasePoint& x)
{
    const Matrix j = checked_jacobian(phi, x);
    return j * symplectic_matrix(phi.dim / 2) * j.transpose();
}

// ---------------------------------------------------------------------------
// Norms

double c0_norm(const ScalarField& H, int resolution)
{
    if (resolution < 1) {
        throw InvalidArgument("c0_norm: resolution must be positive");
    }
    Box box = H.domain();
    if (!box.bounded()) {
        if (!H.support()) {
            throw DomainError("c0_norm: unbounded domain without declared support");
        }
        box = *H.support();
    }
    int m = 1;
    while (m < resolution) {
        m *= 2;
    }
    std::vector<int> counts(static_cast<std::size_t>(box.dim()));
    for (int a = 0; a < box.dim(); ++a) {
        counts[a] = box.periodic[a] ? m : m + 1;
    }
    const SampleGrid grid(box, counts);
    const std::size_t slices = static_cast<std::size_t>(counts[0]);
    const std::size_t per_slice = grid.size() / slices;
    std::vector<double> lo(slices), hi(slices);
    parallel_for(slices, [&](std::size_t s) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -mn;
        for (std::size_t i = 0; i < per_slice; ++i) {
            const double v = H(grid.point(s * per_slice + i));
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        lo[s] = mn;
        hi[s] = mx;
    });
    return *std::max_element(hi.begin(), hi.end()) - *std::min_element(lo.begin(), lo.end());
}

double sup_norm(const ScalarField& H, const SampleGrid& grid)
{
    std::vector<double> values(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) { values[i] = std::abs(H(grid.point(i))); });
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

namespace
{

double lagrange_weight(int node, double u)
{
    // Nodes at 0, 1, 2, 3.
    double w = 1.0;
    for (int m = 0; m < 4; ++m) {
        if (m != node) w *= (u - m) / (node - m);
    }
    return w;
}

} // namespace

double interpolate_cubic(const SampleGrid& grid, const std::vector<double>& samples, const Vector& x)
{
    const int dim = grid.dim();
    if (x.size() != dim || samples.size() != grid.size()) {
        throw InvalidArgument("interpolate_cubic: dimension mismatch");
    }
    const Box& box = grid.box();
    std::vector<std::array<int, 4>> nodes(dim);
    std::vector<std::array<double, 4>> weights(dim);
    for (int a = 0; a < dim; ++a) {
        const int count = grid.counts()[a];
        const double h = grid.spacing(a);
        double u = (x[a] - box.lower[a]) / h;
        if (box.periodic[a]) {
            u = u - count * std::floor(u / count);
            const int i0 = static_cast<int>(std::floor(u));
            const double frac = u - i0;
            for (int m = 0; m < 4; ++m) {
                nodes[a][m] = ((i0 - 1 + m) % count + count) % count;
                weights[a][m] = lagrange_weight(m, frac + 1.0);
            }
        } else {
            if (count < 4) {
                throw InvalidArgument("interpolate_cubic: closed axes need at least 4 points");
            }
            const int i0 = std::clamp(static_cast<int>(std::floor(u)), 1, count - 3);
            for (int m = 0; m < 4; ++m) {
                nodes[a][m] = i0 - 1 + m;
                weights[a][m] = lagrange_weight(m, u - (i0 - 1));
            }
        }
    }
    double total = 0.0;
    std::vector<int> digit(dim, 0);
    std::vector<int> idx(dim);
    const int corners = 1 << (2 * dim);
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        for (int a = 0; a < dim; ++a) {
            const int m = (c >> (2 * a)) & 3;
            idx[a] = nodes[a][m];
            w *= weights[a][m];
        }
        total += w * samples[grid.flat_index(idx)];
    }
    return total;
}

} // namespace rigidlab
