#include "rigidlab/rigidity.hpp"

#include "rigidlab/hamlang.hpp"
#include "rigidlab/parallel.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace rigidlab
{

namespace mp = boost::multiprecision;

namespace
{

constexpr double kBumpSlope = 3.75;

std::string fmt17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int half_dim_of(int dim, const char* who)
{
    if (dim <= 0 || dim % 2 != 0) {
        throw InvalidArgument(std::string(who) + ": dimension must be even and positive");
    }
    return dim / 2;
}

Matrix require_jacobian(const DiffeoSample& phi, const Vector& x)
{
    if (!phi.jacobian) {
        throw InvalidArgument("RigidityMap: no Jacobian available");
    }
    return phi.jacobian(x);
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

} // namespace

// ---------------------------------------------------------------------------
// Exact linear algebra

CouplingMatrix CouplingMatrix::of(int d)
{
    if (d < 1) {
        throw InvalidArgument("CouplingMatrix: d must be positive");
    }
    CouplingMatrix c;
    c.d = d;
    c.entries.assign(d, std::vector<long long>(d, -1));
    for (int i = 0; i < d; ++i) c.entries[i][i] = d - 1;
    return c;
}

ExactKernel exact_rank_kernel(const IntegerMatrix& m)
{
    const std::size_t rows = m.size();
    const std::size_t cols = rows == 0 ? 0 : m.front().size();
    for (const auto& r : m) {
        if (r.size() != cols) {
            throw InvalidArgument("exact_rank_kernel: ragged matrix");
        }
    }

    std::vector<std::vector<mp::cpp_rational>> a(rows, std::vector<mp::cpp_rational>(cols));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) a[i][j] = m[i][j];

    // Gauss-Jordan to reduced row echelon form.
    std::vector<std::size_t> pivot_cols;
    mp::cpp_rational det = 1;
    std::size_t r = 0;
    for (std::size_t c = 0; c < cols && r < rows; ++c) {
        std::size_t piv = r;
        while (piv < rows && a[piv][c] == 0) ++piv;
        if (piv == rows) {
            continue;
        }
        if (piv != r) {
            std::swap(a[piv], a[r]);
            det = -det;
        }
        const mp::cpp_rational p = a[r][c];
        det *= p;
        for (std::size_t j = c; j < cols; ++j) a[r][j] /= p;
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == r || a[i][c] == 0) {
                continue;
            }
            const mp::cpp_rational f = a[i][c];
            for (std::size_t j = c; j < cols; ++j) a[i][j] -= f * a[r][j];
        }
        pivot_cols.push_back(c);
        ++r;
    }

    ExactKernel out;
    out.rank = static_cast<int>(pivot_cols.size());
    if (rows == cols) {
        if (pivot_cols.size() < rows) {
            det = 0;
        }
        out.determinant = det.str();
    }

    std::vector<bool> is_pivot(cols, false);
    for (auto c : pivot_cols) is_pivot[c] = true;
    const mp::cpp_int lmax = std::numeric_limits<long long>::max();
    for (std::size_t f = 0; f < cols; ++f) {
        if (is_pivot[f]) {
            continue;
        }
        std::vector<mp::cpp_rational> v(cols, 0);
        v[f] = 1;
        for (std::size_t i = 0; i < pivot_cols.size(); ++i) v[pivot_cols[i]] = -a[i][f];
        mp::cpp_int scale = 1;
        for (const auto& x : v) scale = mp::lcm(scale, mp::denominator(x));
        std::vector<mp::cpp_int> iv(cols);
        mp::cpp_int g = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            iv[j] = mp::numerator(v[j]) * (scale / mp::denominator(v[j]));
            g = mp::gcd(g, iv[j]);
        }
        std::vector<long long> row(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            const mp::cpp_int x = iv[j] / g;
            if (mp::abs(x) > lmax) {
                throw DomainError("exact_rank_kernel: kernel entry overflows long long");
            }
            row[j] = x.convert_to<long long>();
        }
        out.kernel.push_back(std::move(row));
    }
    return out;
}

ExactKernel coupling_matrix_kernel(int d) { return exact_rank_kernel(CouplingMatrix::of(d).entries); }

// ---------------------------------------------------------------------------
// Maps and components

RigidityMap RigidityMap::from_diffeo(DiffeoSample map, std::string description)
{
    const int d = half_dim_of(map.dim, "RigidityMap::from_diffeo");
    if (!map.forward || !map.jacobian) {
        throw InvalidArgument("RigidityMap::from_diffeo: forward map and Jacobian required");
    }
    RigidityMap r;
    r.description = std::move(description);
    const Box domain = Box::unbounded(2 * d);
    for (int i = 0; i < 2 * d; ++i) {
        auto fwd = map.forward;
        auto jac = map.jacobian;
        r.components.emplace_back(
            domain, [fwd, i](const Vector& x) { return fwd(x)[i]; },
            [jac, i](const Vector& x) -> std::optional<Vector> { return Vector(jac(x).row(i).transpose()); },
            ScalarField::HessianFn{}, Regularity::smooth);
    }
    r.map = std::move(map);
    return r;
}

RigidityMap RigidityMap::from_expressions(const std::vector<std::string>& sources, int d, std::string description)
{
    if (d < 1 || static_cast<int>(sources.size()) != 2 * d) {
        throw InvalidArgument("RigidityMap::from_expressions: need 2d component expressions");
    }
    const Box domain = Box::unbounded(2 * d);
    std::vector<hamlang::Expression> exprs;
    RigidityMap r;
    r.description = std::move(description);
    for (const auto& s : sources) {
        exprs.push_back(hamlang::parse_expression(s, hamlang::Dims{d, 0, true}));
        r.components.push_back(hamlang::to_scalar_field(exprs.back(), domain));
    }
    r.map.dim = 2 * d;
    r.map.forward = [exprs](const Vector& x) {
        Vector y(static_cast<int>(exprs.size()));
        for (std::size_t i = 0; i < exprs.size(); ++i) y[static_cast<int>(i)] = exprs[i].evaluate(x);
        return y;
    };
    r.map.jacobian = [exprs](const Vector& x) {
        const int m = static_cast<int>(exprs.size());
        Matrix j(m, m);
        for (int i = 0; i < m; ++i) {
            auto g = exprs[i].gradient(x);
            if (!g) {
                throw DifferentiationError("RigidityMap: component " + std::to_string(i + 1) +
                                           " is not differentiable here");
            }
            j.row(i) = g->transpose();
        }
        return j;
    };
    return r;
}

Matrix tilde_matrix(int d)
{
    if (d < 1) {
        throw InvalidArgument("tilde_matrix: d must be positive");
    }
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix t = Matrix::Identity(2 * d, 2 * d);
    t.topRightCorner(d, d).array() += a;
    t.bottomLeftCorner(d, d).array() += a;
    return t;
}

RigidityMap tilde_transform(const RigidityMap& phi)
{
    const int d = half_dim_of(phi.map.dim, "tilde_transform");
    if (static_cast<int>(phi.components.size()) != 2 * d) {
        throw InvalidArgument("tilde_transform: component count does not match the map");
    }
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    const Matrix t = tilde_matrix(d);

    RigidityMap out;
    out.description = "tilde(" + phi.description + ")";
    for (int block = 0; block < 2; ++block) {
        // Q~ adds the P sum, P~ adds the Q sum.
        const int own = block * d;
        const int other = (1 - block) * d;
        for (int i = 0; i < d; ++i) {
            std::vector<ScalarField> fields{phi.components[own + i]};
            std::vector<double> coeffs{1.0};
            for (int k = 0; k < d; ++k) {
                fields.push_back(phi.components[other + k]);
                coeffs.push_back(a);
            }
            out.components.push_back(linear_combination(fields, coeffs));
        }
    }
    out.map.dim = 2 * d;
    auto fwd = phi.map.forward;
    auto jac = phi.map.jacobian;
    out.map.forward = [fwd, t](const Vector& x) { return Vector(t * fwd(x)); };
    if (jac) {
        out.map.jacobian = [jac, t](const Vector& x) { return Matrix(t * jac(x)); };
    }
    return out;
}

Vector tilde_brackets(const RigidityMap& phi, const PhasePoint& x)
{
    const int d = half_dim_of(phi.map.dim, "tilde_brackets");
    const RigidityMap t = tilde_transform(phi);
    Vector out(d);
    for (int i = 0; i < d; ++i) out[i] = poisson_bracket(t.components[i], t.components[d + i], x);
    return out;
}

ConstancySystem constancy_system(const RigidityMap& phi, const PhasePoint& x)
{
    const int d = half_dim_of(phi.map.dim, "constancy_system");
    ConstancySystem s;
    s.a = require_jacobian(phi.map, x) * symplectic_matrix(d);
    s.determinant = s.a.determinant();
    return s;
}

JacobiReport jacobi_elimination_check(const RigidityMap& phi, const PhasePoint& x, double tolerance)
{
    const int d = half_dim_of(phi.map.dim, "jacobi_elimination_check");
    if (static_cast<int>(phi.components.size()) != 2 * d) {
        throw InvalidArgument("jacobi_elimination_check: component count does not match the map");
    }
    for (const auto& c : phi.components) {
        if (!c.supports_second_order()) {
            throw DifferentiationError("jacobi_elimination_check: component lacks second derivatives");
        }
    }
    JacobiReport rep;
    rep.tolerance = tolerance;
    for (int j = 0; j < d; ++j) {
        const ScalarField cj = bracket_field(phi.components[j], phi.components[d + j]);
        for (int i = 0; i < d; ++i) {
            if (i == j) {
                continue;
            }
            for (char kind : {'Q', 'P'}) {
                const ScalarField& f = phi.components[kind == 'Q' ? i : d + i];
                const double v = poisson_bracket(f, cj, x);
                rep.entries.push_back({kind, i, j, v});
                rep.max_abs = std::max(rep.max_abs, std::abs(v));
            }
        }
    }
    rep.pass = rep.max_abs <= tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Limit experiments

Matrix mollified_jacobian(const std::function<Vector(const Vector&)>& map, const Vector& x, const Vector& step)
{
    const int m = static_cast<int>(x.size());
    if (step.size() != m || (step.array() <= 0.0).any()) {
        throw InvalidArgument("mollified_jacobian: need a positive step per axis");
    }
    std::size_t count = 1;
    for (int i = 0; i < m; ++i) count *= 3;

    std::vector<int> k(m, -1);
    Matrix acc;
    Vector norm = Vector::Zero(m);
    for (std::size_t s = 0; s < count; ++s) {
        Vector y = x;
        double k2 = 0.0;
        for (int i = 0; i < m; ++i) {
            y[i] += step[i] * k[i];
            k2 += k[i] * k[i];
        }
        const double w = std::exp(-0.5 * k2);
        const Vector v = map(y);
        if (acc.size() == 0) {
            acc = Matrix::Zero(v.size(), m);
        }
        for (int i = 0; i < m; ++i) {
            if (k[i] != 0) {
                acc.col(i) += (w * k[i]) * v;
                norm[i] += w * k[i] * k[i];
            }
        }
        for (int i = m - 1; i >= 0; --i) {
            if (++k[i] <= 1) {
                break;
            }
            k[i] = -1;
        }
    }
    for (int i = 0; i < m; ++i) acc.col(i) /= norm[i] * step[i];
    return acc;
}

namespace
{

struct PointStats
{
    double distance = 0.0;
    double deviation = 0.0;
    double c = 0.0;
    double defect = 0.0;
};

RigidityRow assemble_row(int n, const std::vector<PointStats>& pts, const std::vector<bool>& collar)
{
    RigidityRow row;
    row.n = n;
    double sum = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        row.sup_distance = std::max(row.sup_distance, pts[i].distance);
        row.max_table_deviation = std::max(row.max_table_deviation, pts[i].deviation);
        if (collar[i]) {
            row.at_infinity_deviation = std::max(row.at_infinity_deviation, pts[i].deviation);
        }
        sum += pts[i].c;
    }
    row.c_estimate = sum / static_cast<double>(pts.size());
    double var = 0.0;
    for (const auto& p : pts) var += (p.c - row.c_estimate) * (p.c - row.c_estimate);
    row.c_variance = var / static_cast<double>(pts.size());
    return row;
}

void table_stats(const Matrix& table, const Matrix& e, int d, PointStats& s)
{
    s.deviation = max_abs(table - e);
    double c = 0.0;
    for (int i = 0; i < d; ++i) c += table(i, d + i);
    s.c = c / d;
}

} // namespace

RigidityReport limit_rigidity_experiment(const RigidityFamily& family, const DiffeoSample& limit,
                                         const Box& support, const SampleGrid& grid, int n_max,
                                         const RigidityOptions& options)
{
    const int d = half_dim_of(limit.dim, "limit_rigidity_experiment");
    if (n_max < 1) {
        throw InvalidArgument("limit_rigidity_experiment: n_max must be positive");
    }
    if (grid.dim() != 2 * d || support.dim() != 2 * d) {
        throw InvalidArgument("limit_rigidity_experiment: grid and support must match the map dimension");
    }
    if (!limit.forward) {
        throw InvalidArgument("limit_rigidity_experiment: limit map has no forward evaluation");
    }

    const std::size_t npts = grid.size();
    std::vector<Vector> points(npts);
    std::vector<bool> collar(npts);
    bool any_collar = false;
    for (std::size_t i = 0; i < npts; ++i) {
        points[i] = grid.point(i);
        collar[i] = !support.contains(points[i], 0.0);
        any_collar = any_collar || collar[i];
    }
    if (!any_collar) {
        throw InvalidArgument("limit_rigidity_experiment: grid has no points outside the support box");
    }

    const Matrix e = symplectic_matrix(d);
    std::vector<Vector> limit_values(npts);
    parallel_for(npts, [&](std::size_t i) { limit_values[i] = limit.forward(points[i]); });

    RigidityReport rep;
    rep.tolerance = options.table_tolerance;
    for (int n = 1; n <= n_max; ++n) {
        const RigidityMap member = family(n);
        if (member.map.dim != 2 * d || !member.map.forward || !member.map.jacobian) {
            throw InvalidArgument("limit_rigidity_experiment: member " + std::to_string(n) +
                                  " does not match the limit dimension or lacks a Jacobian");
        }
        std::vector<PointStats> pts(npts);
        parallel_for(npts, [&](std::size_t i) {
            const Matrix j = member.map.jacobian(points[i]);
            pts[i].distance = (member.map.forward(points[i]) - limit_values[i]).norm();
            pts[i].defect = (j.transpose() * e * j - e).norm();
            table_stats(j * e * j.transpose(), e, d, pts[i]);
        });
        for (std::size_t i = 0; i < npts; ++i) {
            if (!(pts[i].defect <= options.symplectic_tolerance)) {
                throw InvalidArgument("limit_rigidity_experiment: member " + std::to_string(n) +
                                      " is not symplectic (defect " + fmt17(pts[i].defect) + ")");
            }
        }
        rep.rows.push_back(assemble_row(n, pts, collar));
    }
    if (rep.rows.back().sup_distance > rep.rows.front().sup_distance + 1e-12) {
        throw ConvergenceError("limit_rigidity_experiment: member " + std::to_string(n_max) +
                               " is farther from the limit than member 1");
    }

    Vector step(2 * d);
    for (int a = 0; a < 2 * d; ++a) {
        step[a] = options.stencil_step > 0.0 ? options.stencil_step : grid.spacing(a);
    }
    std::vector<PointStats> lpts(npts);
    parallel_for(npts, [&](std::size_t i) {
        const Matrix j = mollified_jacobian(limit.forward, points[i], step);
        table_stats(j * e * j.transpose(), e, d, lpts[i]);
    });
    rep.limit = assemble_row(0, lpts, collar);
    rep.limit_symplectic = rep.limit.max_table_deviation <= options.table_tolerance &&
                           rep.limit.at_infinity_deviation <= options.table_tolerance;
    return rep;
}

void write_rigidity_csv(std::ostream& out, const RigidityReport& report)
{
    out << "n,sup_distance,max_table_deviation,C_estimate,C_variance,at_infinity_deviation\n";
    auto line = [&](const std::string& n, const RigidityRow& r) {
        out << n << ',' << fmt17(r.sup_distance) << ',' << fmt17(r.max_table_deviation) << ','
            << fmt17(r.c_estimate) << ',' << fmt17(r.c_variance) << ',' << fmt17(r.at_infinity_deviation) << '\n';
    };
    for (const auto& r : report.rows) line(std::to_string(r.n), r);
    line("limit", report.limit);
}

// ---------------------------------------------------------------------------
// Families

RigidityFamily flow_family(const ScalarField& H, const IntegratorConfig& cfg, std::optional<Box> support)
{
    half_dim_of(H.dim(), "flow_family");
    cfg.validate();
    if (!support) {
        support = H.support();
    }
    return [H, cfg, support](int n) {
        if (n < 1) {
            throw InvalidArgument("flow_family: n must be positive");
        }
        const ScalarField hn = linear_combination({H}, {1.0 / n});
        RigidityMap r = RigidityMap::from_diffeo(flow_map(hn, 1.0, cfg), "flow of H/" + std::to_string(n));
        r.support = support;
        return r;
    };
}

double flow_family_bound(double gradient_bound, int n)
{
    if (n < 1 || !(gradient_bound >= 0.0)) {
        throw InvalidArgument("flow_family_bound: need n >= 1 and a nonnegative gradient bound");
    }
    return gradient_bound / n;
}

namespace
{

void check_shear(int d, double radius, int n)
{
    if (d < 1 || n < 1 || !(radius >= 2.0)) {
        throw InvalidArgument("generating_shear: need d >= 1, n >= 1 and R >= 2");
    }
    // Mixed second derivatives of f_1 must keep I + f_qP invertible, and the
    // momentum displacement must stay inside the declared collar.
    const double w = 2.0 * std::numbers::pi;
    const double s = kBumpSlope / radius;
    const double mixed = d * (s / w + d * s * s / (w * w));
    const double shift = 1.0 / w + d * s / (w * w);
    if (mixed >= 0.5 || shift >= 1.0) {
        throw InvalidArgument("generating_shear: radius too small for d = " + std::to_string(d));
    }
}

} // namespace

std::string shear_generating_source(int d, double radius, int n)
{
    check_shear(d, radius, n);
    const double w = 2.0 * std::numbers::pi * n;
    std::string src = "(";
    for (int i = 1; i <= d; ++i) {
        if (i > 1) src += " + ";
        src += "sin(" + fmt17(w) + "*q" + std::to_string(i) + ")";
    }
    src += ")*" + fmt17(1.0 / (w * w));
    for (int i = 1; i <= d; ++i) {
        src += "*bump(q" + std::to_string(i) + "/" + fmt17(radius) + ")";
        src += "*bump(p" + std::to_string(i) + "/" + fmt17(radius) + ")";
    }
    return src;
}

RigidityMap generating_shear(int d, double radius, int n)
{
    const std::string src = shear_generating_source(d, radius, n);
    // Evaluated at (q, P): the p slots hold the new momenta.
    const hamlang::Expression f = hamlang::parse_expression(src, hamlang::Dims{d, 0, true});

    struct Solved
    {
        Vector big_p;
        hamlang::Expression::SecondOrder so;
    };
    // p = P + f_q(q, P) by Newton in P.
    auto solve = [f, d](const Vector& x) {
        const Vector q = x.head(d);
        const Vector p = x.tail(d);
        Vector z(2 * d);
        z << q, p;
        for (int it = 0; it < 60; ++it) {
            const auto so = *f.second_order(z);
            const Vector r = z.tail(d) + so.gradient.head(d) - p;
            const Matrix m = Matrix::Identity(d, d) + so.hessian.topRightCorner(d, d);
            const Vector dz = m.partialPivLu().solve(r);
            z.tail(d) -= dz;
            if (dz.norm() <= 1e-15 * (1.0 + p.norm())) {
                break;
            }
        }
        return Solved{z.tail(d), *f.second_order(z)};
    };

    RigidityMap r;
    r.description = "generating shear d=" + std::to_string(d) + " R=" + fmt17(radius) + " n=" + std::to_string(n);
    r.support = shear_support(d, radius);
    r.map.dim = 2 * d;
    r.map.forward = [solve, d](const Vector& x) {
        const Solved s = solve(x);
        Vector y(2 * d);
        y << x.head(d) + s.so.gradient.tail(d), s.big_p;
        return y;
    };
    r.map.jacobian = [solve, d](const Vector& x) {
        const Solved s = solve(x);
        const Matrix& h = s.so.hessian;
        const Matrix fqq = h.topLeftCorner(d, d);
        const Matrix fqp = h.topRightCorner(d, d);
        const Matrix fpq = h.bottomLeftCorner(d, d);
        const Matrix fpp = h.bottomRightCorner(d, d);
        const Matrix minv = (Matrix::Identity(d, d) + fqp).inverse();
        const Matrix dpdq = -minv * fqq;
        Matrix j(2 * d, 2 * d);
        j.topLeftCorner(d, d) = Matrix::Identity(d, d) + fpq + fpp * dpdq;
        j.topRightCorner(d, d) = fpp * minv;
        j.bottomLeftCorner(d, d) = dpdq;
        j.bottomRightCorner(d, d) = minv;
        return j;
    };
    // Q = q + f_P(q, P) by Newton in q.
    r.map.inverse = [f, d](const Vector& y) {
        const Vector big_q = y.head(d);
        Vector z(2 * d);
        z << big_q, y.tail(d);
        for (int it = 0; it < 60; ++it) {
            const auto so = *f.second_order(z);
            const Vector res = z.head(d) + so.gradient.tail(d) - big_q;
            const Matrix m = Matrix::Identity(d, d) + so.hessian.bottomLeftCorner(d, d);
            const Vector dz = m.partialPivLu().solve(res);
            z.head(d) -= dz;
            if (dz.norm() <= 1e-15 * (1.0 + big_q.norm())) {
                break;
            }
        }
        const auto so = *f.second_order(z);
        Vector x(2 * d);
        x << z.head(d), y.tail(d) + so.gradient.head(d);
        return x;
    };
    RigidityMap out = RigidityMap::from_diffeo(r.map, r.description);
    out.support = r.support;
    return out;
}

RigidityFamily shear_family(int d, double radius)
{
    check_shear(d, radius, 1);
    return [d, radius](int n) { return generating_shear(d, radius, n); };
}

double shear_family_bound(int d, double radius, int n)
{
    check_shear(d, radius, n);
    const double w = 2.0 * std::numbers::pi * n;
    const double s = kBumpSlope / radius;
    const double dq = d * s / (w * w);
    const double dp = 1.0 / w + d * s / (w * w);
    return std::sqrt(d * (dq * dq + dp * dp));
}

Box shear_support(int d, double radius)
{
    if (d < 1 || !(radius > 0.0)) {
        throw InvalidArgument("shear_support: need d >= 1 and R > 0");
    }
    Vector lo(2 * d);
    Vector hi(2 * d);
    lo << Vector::Constant(d, -radius), Vector::Constant(d, -radius - 1.0);
    hi << Vector::Constant(d, radius), Vector::Constant(d, radius + 1.0);
    return Box(lo, hi);
}

} // namespace rigidlab
