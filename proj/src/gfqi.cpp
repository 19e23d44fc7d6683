#include "rigidlab/gfqi.hpp"

#include "rigidlab/parallel.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace rigidlab
{

namespace
{

Vector concat(const Vector& a, const Vector& b)
{
    Vector r(a.size() + b.size());
    r << a, b;
    return r;
}

// Uniform direction on the unit sphere of R^m via normalized Gaussians.
Vector random_direction(std::mt19937_64& rng, int m)
{
    std::normal_distribution<double> normal;
    Vector v(m);
    do {
        for (int i = 0; i < m; ++i) v[i] = normal(rng);
    } while (v.norm() < 1e-12);
    return v / v.norm();
}

// A fiber point beyond the cutoff in every residual block.
Vector far_fiber_point(std::mt19937_64& rng, const std::vector<FiberBlock>& blocks)
{
    int k = 0;
    for (const auto& b : blocks) k += b.size;
    Vector xi(k);
    int offset = 0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (const auto& b : blocks) {
        if (b.pure_quadratic) {
            for (int i = 0; i < b.size; ++i) xi[offset + i] = -3.0 + 6.0 * unit(rng);
        } else {
            const double r = b.cutoff * (1.0 + 1e-6) + 3.0 * unit(rng);
            xi.segment(offset, b.size) = r * random_direction(rng, b.size);
        }
        offset += b.size;
    }
    return xi;
}

Vector random_base_point(std::mt19937_64& rng, int n)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector q(n);
    for (int i = 0; i < n; ++i) q[i] = unit(rng);
    return q;
}

std::vector<FiberBlock> concat_blocks(const std::vector<FiberBlock>& a, const std::vector<FiberBlock>& b)
{
    std::vector<FiberBlock> r = a;
    r.insert(r.end(), b.begin(), b.end());
    return r;
}

std::string format17(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

constexpr double kPeriodicityTolerance = 1e-12;
constexpr double kQuadraticTolerance = 1e-9;

void require_periodic(const GFQI& s, const char* what)
{
    const double defect = s.periodicity_defect(64, 7);
    // Relative to the sampled magnitude so that large amplitudes are not penalized
    // for roundoff in the argument of periodic functions.
    std::mt19937_64 rng(11);
    double scale = 1.0;
    for (int i = 0; i < 16; ++i) {
        const Vector q = random_base_point(rng, s.base_dim());
        const Vector xi = Vector::Zero(s.fiber_dim());
        scale = std::max(scale, std::abs(s.value(q, xi)));
    }
    if (!(defect <= kPeriodicityTolerance * scale)) {
        throw InvalidArgument(std::string(what) + ": S is not 1-periodic in q (defect " + format17(defect) + ")");
    }
}

void require_quadratic_at_infinity(const GFQI& s, const char* what)
{
    const double defect = s.quadratic_at_infinity_defect(1000, 13);
    if (!(defect <= kQuadraticTolerance)) {
        throw InvalidArgument(std::string(what) + ": S - Q depends on xi beyond the cutoff (defect " +
                              format17(defect) + ")");
    }
}

} // namespace

// ---------------------------------------------------------------------------
// QuadraticForm

QuadraticForm::QuadraticForm(Matrix q)
{
    if (q.rows() != q.cols()) {
        throw InvalidArgument("QuadraticForm: matrix must be square");
    }
    if (!q.allFinite()) {
        throw InvalidArgument("QuadraticForm: entries must be finite");
    }
    if (q.size() > 0 && (q - q.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw InvalidArgument("QuadraticForm: matrix must be symmetric");
    }
    q_ = 0.5 * (q + q.transpose());
    if (q_.rows() == 0) {
        return;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(q_, Eigen::EigenvaluesOnly);
    const Vector& ev = eig.eigenvalues();
    smallest_magnitude_ = ev.cwiseAbs().minCoeff();
    if (smallest_magnitude_ < 1e-9) {
        throw InvalidArgument("QuadraticForm: degenerate form (eigenvalue within 1e-9 of 0)");
    }
    negative_index_ = static_cast<int>((ev.array() < 0.0).count());
}

QuadraticForm QuadraticForm::diagonal(const std::vector<double>& entries)
{
    Matrix q = Matrix::Zero(static_cast<int>(entries.size()), static_cast<int>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) q(i, i) = entries[i];
    return QuadraticForm(q);
}

QuadraticForm QuadraticForm::direct_sum(const QuadraticForm& a, const QuadraticForm& b)
{
    const int n = a.size() + b.size();
    Matrix q = Matrix::Zero(n, n);
    q.topLeftCorner(a.size(), a.size()) = a.matrix();
    q.bottomRightCorner(b.size(), b.size()) = b.matrix();
    return QuadraticForm(q);
}

double QuadraticForm::operator()(const Vector& xi) const
{
    if (xi.size() != size()) {
        throw InvalidArgument("QuadraticForm: argument has the wrong dimension");
    }
    return size() == 0 ? 0.0 : xi.dot(q_ * xi);
}

QuadraticForm QuadraticForm::negated() const { return size() == 0 ? QuadraticForm() : QuadraticForm(Matrix(-q_)); }

// ---------------------------------------------------------------------------
// GFQI

GFQI::GFQI(int n, QuadraticForm quad, double cutoff, ValueFn value, GradientFn gradient,
           std::string description)
    : n_(n), quad_(std::move(quad)), description_(std::move(description))
{
    if (n != 1 && n != 2) {
        throw InvalidArgument("GFQI: base dimension must be 1 or 2");
    }
    if (!(cutoff > 0.0) || !std::isfinite(cutoff)) {
        throw InvalidArgument("GFQI: cutoff radius must be positive");
    }
    if (!value) {
        throw InvalidArgument("GFQI: value function is required");
    }
    if (quad_.size() > 0) {
        blocks_.push_back({quad_.size(), cutoff, false});
    }
    core_ = std::make_shared<const Core>(Core{std::move(value), std::move(gradient)});
}

double GFQI::cutoff() const
{
    double c = 0.0;
    for (const auto& b : blocks_) {
        if (!b.pure_quadratic) c = std::max(c, b.cutoff);
    }
    return c > 0.0 ? c : kDefaultCutoff;
}

GFQI GFQI::with(QuadraticForm quad, std::vector<FiberBlock> blocks, ValueFn value, GradientFn gradient,
                std::string description, bool difference_type) const
{
    GFQI r;
    r.n_ = n_;
    r.quad_ = std::move(quad);
    r.blocks_ = std::move(blocks);
    r.difference_type_ = difference_type;
    r.description_ = std::move(description);
    r.core_ = std::make_shared<const Core>(Core{std::move(value), std::move(gradient)});
    return r;
}

double GFQI::operator()(const Vector& z) const
{
    if (z.size() != n_ + fiber_dim()) {
        throw InvalidArgument("GFQI: expected a point of dimension n + k");
    }
    const double v = core_->value(z);
    if (!std::isfinite(v)) {
        throw DomainError("GFQI: non-finite value");
    }
    return v;
}

double GFQI::value(const Vector& q, const Vector& xi) const { return (*this)(concat(q, xi)); }

std::optional<Vector> GFQI::gradient(const Vector& z) const
{
    if (z.size() != n_ + fiber_dim()) {
        throw InvalidArgument("GFQI: expected a point of dimension n + k");
    }
    if (core_->gradient) {
        return core_->gradient(z);
    }
    return fd_gradient(core_->value, z);
}

double GFQI::quadratic_at_infinity_defect(int samples, std::uint64_t seed) const
{
    if (fiber_dim() == 0) {
        return 0.0;
    }
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const Vector q = random_base_point(rng, n_);
        const Vector a = far_fiber_point(rng, blocks_);
        const Vector b = far_fiber_point(rng, blocks_);
        const double ra = value(q, a) - quad_(a);
        const double rb = value(q, b) - quad_(b);
        worst = std::max(worst, std::abs(ra - rb));
    }
    return worst;
}

double GFQI::periodicity_defect(int samples, std::uint64_t seed) const
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> fiber(-cutoff() - 1.0, cutoff() + 1.0);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const Vector q = random_base_point(rng, n_);
        Vector xi(fiber_dim());
        for (int i = 0; i < xi.size(); ++i) xi[i] = fiber(rng);
        const double v = value(q, xi);
        for (int a = 0; a < n_; ++a) {
            Vector shifted = q;
            shifted[a] += 1.0;
            worst = std::max(worst, std::abs(value(shifted, xi) - v));
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Constructors

GFQI from_base_function(const hamlang::Expression& f)
{
    const auto& dims = f.dims();
    if (dims.momenta || dims.k != 0) {
        throw InvalidArgument("from_base_function: expression must use base variables q only");
    }
    GFQI s(dims.d, QuadraticForm(), GFQI::kDefaultCutoff,
           [f](const Vector& z) { return f.evaluate(z); },
           [f](const Vector& z) { return f.gradient(z); }, f.to_string());
    require_periodic(s, "from_base_function");
    return s;
}

GFQI from_base_function(std::string_view source, int n)
{
    return from_base_function(hamlang::parse_expression(source, hamlang::Dims{n, 0, false}));
}

GFQI from_expression(const hamlang::Expression& e, QuadraticForm quad, double cutoff)
{
    const auto& dims = e.dims();
    if (dims.momenta) {
        throw InvalidArgument("from_expression: generating functions use (q, xi) variables only");
    }
    if (dims.k != quad.size()) {
        throw InvalidArgument("from_expression: fiber dimension differs from the quadratic form");
    }
    GFQI s(dims.d, std::move(quad), cutoff, [e](const Vector& z) { return e.evaluate(z); },
           [e](const Vector& z) { return e.gradient(z); }, e.to_string());
    require_periodic(s, "from_expression");
    require_quadratic_at_infinity(s, "from_expression");
    return s;
}

namespace
{

SampleGrid grid_for(const GridGfqiData& d)
{
    const int dim = d.n + d.k;
    Vector lo(dim), hi(dim);
    std::vector<bool> periodic(dim);
    for (int a = 0; a < dim; ++a) {
        const bool base = a < d.n;
        lo[a] = base ? 0.0 : -d.extent;
        hi[a] = base ? 1.0 : d.extent;
        periodic[a] = base;
    }
    return SampleGrid(Box(lo, hi, periodic), d.resolutions);
}

void validate_grid_data(const GridGfqiData& d)
{
    if (d.n != 1 && d.n != 2) {
        throw InvalidArgument("grid GFQI: n must be 1 or 2");
    }
    if (d.k < 0 || static_cast<int>(d.resolutions.size()) != d.n + d.k) {
        throw InvalidArgument("grid GFQI: need one resolution per axis (n + k)");
    }
    for (int a = 0; a < d.n + d.k; ++a) {
        if (d.resolutions[a] < (a < d.n ? 4 : 4)) {
            throw InvalidArgument("grid GFQI: at least 4 samples per axis");
        }
    }
    if (d.quad.rows() != d.k || d.quad.cols() != d.k) {
        throw InvalidArgument("grid GFQI: Q must be k x k");
    }
    if (d.k > 0 && !(d.extent > d.cutoff)) {
        throw InvalidArgument("grid GFQI: fiber extent must exceed the cutoff");
    }
    std::size_t expected = 1;
    for (int r : d.resolutions) expected *= static_cast<std::size_t>(r);
    if (d.samples.size() != expected) {
        throw InvalidArgument("grid GFQI: expected " + std::to_string(expected) + " samples, got " +
                              std::to_string(d.samples.size()));
    }
    for (double v : d.samples) {
        if (!std::isfinite(v)) {
            throw InvalidArgument("grid GFQI: samples must be finite");
        }
    }
}

} // namespace

GFQI from_grid(const GridGfqiData& data)
{
    validate_grid_data(data);
    const QuadraticForm quad = data.k > 0 ? QuadraticForm(data.quad) : QuadraticForm();
    const SampleGrid grid = grid_for(data);
    auto residual = std::make_shared<std::vector<double>>(data.samples);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector z = grid.point(i);
        (*residual)[i] -= quad(z.tail(data.k));
    }
    const int n = data.n;
    const int k = data.k;
    const double extent = data.extent;
    // Interpolation stencils reach two fiber cells, so the interpolant is
    // quadratic at infinity only beyond the widened radius.
    double reach = 0.0;
    for (int a = n; a < n + k; ++a) reach = std::max(reach, 2.0 * grid.spacing(a));
    const double cutoff = data.cutoff + reach;
    if (k > 0 && !(extent > cutoff)) {
        throw InvalidArgument("grid GFQI: fiber extent must exceed the cutoff plus two grid cells");
    }
    auto value = [grid, residual, quad, n, k, extent](const Vector& z) {
        Vector clamped = z;
        for (int a = n; a < n + k; ++a) clamped[a] = std::clamp(z[a], -extent, extent);
        return quad(z.tail(k)) + interpolate_cubic(grid, *residual, clamped);
    };
    return GFQI(n, quad, k > 0 ? cutoff : data.cutoff, value, nullptr, "grid");
}

GridGfqiData sample_grid_gfqi(const GFQI& s, const std::vector<int>& resolutions, double extent)
{
    GridGfqiData d;
    d.n = s.base_dim();
    d.k = s.fiber_dim();
    d.resolutions = resolutions;
    d.extent = d.k > 0 ? extent : 0.0;
    d.cutoff = s.cutoff();
    d.quad = s.quad().matrix();
    std::size_t total = 1;
    for (int r : resolutions) total *= static_cast<std::size_t>(r);
    d.samples.assign(total, 0.0);
    validate_grid_data(d);
    const SampleGrid grid = grid_for(d);
    parallel_for(grid.size(), [&](std::size_t i) { d.samples[i] = s(grid.point(i)); });
    return d;
}

GridGfqiData read_grid_gfqi(std::istream& in)
{
    std::string header;
    if (!std::getline(in, header)) {
        throw InvalidArgument("grid GFQI: missing header line");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("grid GFQI: malformed header: ") + e.what());
    }
    GridGfqiData d;
    try {
        if (j.at("format").get<std::string>() != "rigidlab-gfqi-grid") {
            throw InvalidArgument("grid GFQI: unknown format tag");
        }
        if (j.at("version").get<int>() != 1) {
            throw InvalidArgument("grid GFQI: unsupported version");
        }
        d.n = j.at("n").get<int>();
        d.k = j.at("k").get<int>();
        d.resolutions = j.at("resolutions").get<std::vector<int>>();
        d.extent = j.value("extent", 0.0);
        d.cutoff = j.value("cutoff", GFQI::kDefaultCutoff);
        const auto rows = j.at("Q").get<std::vector<std::vector<double>>>();
        d.quad = Matrix(static_cast<int>(rows.size()), static_cast<int>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows.size()) {
                throw InvalidArgument("grid GFQI: Q must be square");
            }
            for (std::size_t c = 0; c < rows.size(); ++c) d.quad(r, c) = rows[r][c];
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("grid GFQI: bad header field: ") + e.what());
    }
    std::string token;
    while (in >> token) {
        char* end = nullptr;
        const double v = std::strtod(token.c_str(), &end);
        if (end == token.c_str() || *end != '\0') {
            throw InvalidArgument("grid GFQI: malformed sample '" + token + "'");
        }
        d.samples.push_back(v);
    }
    validate_grid_data(d);
    return d;
}

void write_grid_gfqi(std::ostream& out, const GridGfqiData& d)
{
    validate_grid_data(d);
    std::string q = "[";
    for (int r = 0; r < d.quad.rows(); ++r) {
        q += r ? ",[" : "[";
        for (int c = 0; c < d.quad.cols(); ++c) q += (c ? "," : "") + format17(d.quad(r, c));
        q += "]";
    }
    q += "]";
    std::string res = "[";
    for (std::size_t i = 0; i < d.resolutions.size(); ++i) res += (i ? "," : "") + std::to_string(d.resolutions[i]);
    res += "]";
    out << "{\"format\":\"rigidlab-gfqi-grid\",\"version\":1,\"n\":" << d.n << ",\"k\":" << d.k
        << ",\"resolutions\":" << res << ",\"extent\":" << format17(d.extent) << ",\"cutoff\":" << format17(d.cutoff)
        << ",\"Q\":" << q << "}\n";
    const int last = d.resolutions.back();
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        out << format17(d.samples[i]) << ((i + 1) % last == 0 ? '\n' : ' ');
    }
}

// ---------------------------------------------------------------------------
// Operations

namespace
{

GFQI combine(const GFQI& s1, const GFQI& s2, double sign, bool difference)
{
    if (s1.base_dim() != s2.base_dim()) {
        throw InvalidArgument("GFQI: base dimensions differ");
    }
    const int n = s1.base_dim();
    const int k1 = s1.fiber_dim();
    const int k2 = s2.fiber_dim();
    auto split = [n, k1, k2](const Vector& z) {
        return std::pair<Vector, Vector>{concat(z.head(n), z.segment(n, k1)), concat(z.head(n), z.tail(k2))};
    };
    auto value = [s1, s2, split, sign](const Vector& z) {
        const auto [z1, z2] = split(z);
        return s1(z1) + sign * s2(z2);
    };
    auto gradient = [s1, s2, split, sign, n, k1, k2](const Vector& z) -> std::optional<Vector> {
        const auto [z1, z2] = split(z);
        const auto g1 = s1.gradient(z1);
        const auto g2 = s2.gradient(z2);
        if (!g1 || !g2) {
            return std::nullopt;
        }
        Vector g(n + k1 + k2);
        g.head(n) = g1->head(n) + sign * g2->head(n);
        g.segment(n, k1) = g1->tail(k1);
        g.tail(k2) = sign * g2->tail(k2);
        return g;
    };
    std::vector<FiberBlock> b2 = s2.blocks();
    const QuadraticForm q2 = sign > 0 ? s2.quad() : s2.quad().negated();
    const std::string op = sign > 0 ? " (+) " : " (-) ";
    return s1.with(QuadraticForm::direct_sum(s1.quad(), q2), concat_blocks(s1.blocks(), b2), value, gradient,
                   "(" + s1.description() + ")" + op + "(" + s2.description() + ")", difference);
}

} // namespace

GFQI ominus(const GFQI& s1, const GFQI& s2) { return combine(s1, s2, -1.0, true); }

// Sums mix the two cutoff regions exactly as differences do.
GFQI direct_sum(const GFQI& s1, const GFQI& s2) { return combine(s1, s2, 1.0, true); }

GFQI stabilize(const GFQI& s, const QuadraticForm& b)
{
    if (b.size() == 0) {
        throw InvalidArgument("stabilize: the added form must have at least one variable");
    }
    const int n = s.base_dim();
    const int k = s.fiber_dim();
    const int m = b.size();
    auto value = [s, b, n, k, m](const Vector& z) { return s(z.head(n + k)) + b(z.tail(m)); };
    auto gradient = [s, b, n, k, m](const Vector& z) -> std::optional<Vector> {
        const auto g = s.gradient(z.head(n + k));
        if (!g) {
            return std::nullopt;
        }
        Vector r(n + k + m);
        r.head(n + k) = *g;
        r.tail(m) = 2.0 * b.matrix() * z.tail(m);
        return r;
    };
    auto blocks = s.blocks();
    blocks.push_back({m, 0.0, true});
    return s.with(QuadraticForm::direct_sum(s.quad(), b), blocks, value, gradient,
                  "stab(" + s.description() + ")", s.difference_type());
}

GFQI add_constant(const GFQI& s, double c)
{
    if (!std::isfinite(c)) {
        throw InvalidArgument("add_constant: constant must be finite");
    }
    if (c == 0.0) {
        return s;
    }
    auto value = [s, c](const Vector& z) { return s(z) + c; };
    auto gradient = [s](const Vector& z) { return s.gradient(z); };
    return s.with(s.quad(), s.blocks(), value, gradient, "(" + s.description() + ") + " + format17(c),
                  s.difference_type());
}

GFQI negate(const GFQI& s)
{
    auto value = [s](const Vector& z) { return -s(z); };
    auto gradient = [s](const Vector& z) -> std::optional<Vector> {
        auto g = s.gradient(z);
        if (!g) return std::nullopt;
        return Vector(-*g);
    };
    return s.with(s.quad().negated(), s.blocks(), value, gradient, "-(" + s.description() + ")",
                  s.difference_type());
}

FiberDiffeo FiberDiffeo::identity_map()
{
    FiberDiffeo f;
    f.identity = true;
    f.map = [](const Vector&, const Vector& xi) { return xi; };
    return f;
}

FiberDiffeo FiberDiffeo::bump_shift(Vector v, double radius)
{
    if (!(radius > 0.0) || !(v.norm() * 3.75 < radius)) {
        throw InvalidArgument("FiberDiffeo::bump_shift: need |v| < radius / 3.75");
    }
    FiberDiffeo f;
    f.map = [v, radius](const Vector&, const Vector& xi) {
        return Vector(xi + hamlang::bump_profile(xi.norm() / radius) * v);
    };
    return f;
}

GFQI apply_fiber_diffeo(const GFQI& s, const FiberDiffeo& phi, std::uint64_t seed)
{
    if (phi.identity) {
        return s;
    }
    if (!phi.map) {
        throw InvalidArgument("apply_fiber_diffeo: map is required");
    }
    const int n = s.base_dim();
    const int k = s.fiber_dim();
    if (k == 0) {
        throw InvalidArgument("apply_fiber_diffeo: GFQI has no fiber");
    }
    // Precondition: the identity for |xi| > C.
    const double c = s.cutoff();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 512; ++i) {
        const Vector q = random_base_point(rng, n);
        const Vector xi = (c * (1.0 + 1e-6) + 3.0 * unit(rng)) * random_direction(rng, k);
        const Vector y = phi.map(q, xi);
        if (y.size() != k || (y - xi).norm() > 1e-12) {
            throw InvalidArgument("apply_fiber_diffeo: map is not the identity beyond the cutoff");
        }
    }
    // The moved residual may depend on every block inside |xi| <= C.
    std::vector<FiberBlock> blocks = s.blocks();
    for (auto& b : blocks) {
        b.pure_quadratic = false;
        b.cutoff = std::max(b.cutoff, c);
    }
    auto value = [s, phi, n, k](const Vector& z) {
        return s(concat(z.head(n), phi.map(z.head(n), z.tail(k))));
    };
    GFQI::GradientFn gradient;
    if (phi.jacobian) {
        gradient = [s, phi, n, k](const Vector& z) -> std::optional<Vector> {
            const Vector q = z.head(n);
            const Vector xi = z.tail(k);
            const auto g = s.gradient(concat(q, phi.map(q, xi)));
            if (!g) return std::nullopt;
            const Matrix J = phi.jacobian(q, xi);
            Vector r(n + k);
            r.head(n) = g->head(n) + J.leftCols(n).transpose() * g->tail(k);
            r.tail(k) = J.rightCols(k).transpose() * g->tail(k);
            return r;
        };
    }
    return s.with(s.quad(), blocks, value, gradient, "(" + s.description() + ") o phi", s.difference_type());
}

// ---------------------------------------------------------------------------
// Wavefront

namespace
{

struct FiberNewton
{
    const GFQI& s;
    Vector q;

    std::optional<Vector> fiber_gradient(const Vector& xi) const
    {
        auto g = s.gradient(concat(q, xi));
        if (!g) return std::nullopt;
        return Vector(g->tail(xi.size()));
    }

    // Returns the polished point or nullopt when the iteration stalls.
    std::optional<Vector> polish(Vector xi, double target) const
    {
        auto g = fiber_gradient(xi);
        if (!g) return std::nullopt;
        for (int it = 0; it < 20 && g->norm() > target; ++it) {
            bool ok = true;
            const Matrix hess = fd_jacobian(
                [&](const Vector& y) {
                    auto gy = fiber_gradient(y);
                    if (!gy) {
                        ok = false;
                        return Vector(Vector::Zero(y.size()));
                    }
                    return *gy;
                },
                xi);
            if (!ok) return std::nullopt;
            Eigen::FullPivLU<Matrix> lu(hess);
            if (!lu.isInvertible()) return std::nullopt;
            const Vector step = lu.solve(*g);
            double lambda = 1.0;
            bool improved = false;
            for (int half = 0; half < 10; ++half) {
                const Vector trial = xi - lambda * step;
                auto gt = fiber_gradient(trial);
                if (gt && gt->norm() < g->norm()) {
                    xi = trial;
                    g = gt;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if (!improved) break;
        }
        return xi;
    }
};

} // namespace

WavefrontSample wavefront(const GFQI& s, int base_resolution, double residual_tol, int fiber_resolution)
{
    if (base_resolution < 4 || fiber_resolution < 4) {
        throw InvalidArgument("wavefront: resolution must be at least 4");
    }
    if (!(residual_tol > 0.0)) {
        throw InvalidArgument("wavefront: residual tolerance must be positive");
    }
    const int n = s.base_dim();
    const int k = s.fiber_dim();
    const SampleGrid base(Box::unit_torus(n), base_resolution);

    WavefrontSample out;
    out.residual_bound = residual_tol;
    std::vector<std::vector<WavefrontPoint>> rows(base.size());

    if (k == 0) {
        parallel_for(base.size(), [&](std::size_t i) {
            const Vector q = base.point(i);
            auto g = s.gradient(q);
            if (g) rows[i].push_back({q, *g, Vector(0), 0.0});
        });
    } else {
        const double R = s.cutoff() + 1.0;
        const SampleGrid fiber(Box::cube(k, -R, R), fiber_resolution);
        const double h = fiber.spacing(0);

        // Fiber gradients on the whole grid, then a Lipschitz estimate of
        // xi -> dS/dxi from neighbouring differences.
        std::vector<Vector> fg(base.size() * fiber.size());
        parallel_for(base.size(), [&](std::size_t i) {
            const FiberNewton nt{s, base.point(i)};
            for (std::size_t j = 0; j < fiber.size(); ++j) {
                auto g = nt.fiber_gradient(fiber.point(j));
                fg[i * fiber.size() + j] = g ? *g : Vector::Constant(k, std::numeric_limits<double>::infinity());
            }
        });
        double lip = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) {
            for (std::size_t j = 0; j < fiber.size(); ++j) {
                std::vector<int> idx = fiber.multi_index(j);
                for (int a = 0; a < k; ++a) {
                    if (idx[a] + 1 >= fiber_resolution) continue;
                    idx[a] += 1;
                    const Vector diff = fg[i * fiber.size() + fiber.flat_index(idx)] - fg[i * fiber.size() + j];
                    idx[a] -= 1;
                    if (diff.allFinite()) lip = std::max(lip, diff.norm() / h);
                }
            }
        }
        const double seed_tol = 10.0 * h * std::max(lip, 1e-12);

        parallel_for(base.size(), [&](std::size_t i) {
            const Vector q = base.point(i);
            const FiberNewton nt{s, q};
            std::vector<Vector> found;
            for (std::size_t j = 0; j < fiber.size(); ++j) {
                const Vector& g0 = fg[i * fiber.size() + j];
                if (!(g0.norm() < seed_tol)) continue;
                auto xi = nt.polish(fiber.point(j), 1e-3 * residual_tol);
                if (!xi || xi->lpNorm<Eigen::Infinity>() > 1.5 * R) continue;
                auto g = s.gradient(concat(q, *xi));
                if (!g || g->tail(k).norm() > residual_tol) continue;
                bool duplicate = false;
                for (const auto& f : found) duplicate = duplicate || (f - *xi).norm() <= 1e-6;
                if (duplicate) continue;
                found.push_back(*xi);
                rows[i].push_back({q, g->head(n), *xi, g->tail(k).norm()});
            }
            std::sort(rows[i].begin(), rows[i].end(), [](const WavefrontPoint& a, const WavefrontPoint& b) {
                return std::lexicographical_compare(a.xi.data(), a.xi.data() + a.xi.size(), b.xi.data(),
                                                    b.xi.data() + b.xi.size());
            });
        });
    }
    for (auto& r : rows) {
        for (auto& p : r) out.points.push_back(std::move(p));
    }
    out.empty_warning = out.points.empty();
    return out;
}

double wavefront_distance(const WavefrontSample& a, const WavefrontSample& b)
{
    auto one_way = [](const WavefrontSample& x, const WavefrontSample& y) {
        double worst = 0.0;
        for (const auto& p : x.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& r : y.points) {
                if (r.q.size() == p.q.size() && (r.q - p.q).norm() <= 1e-12) {
                    best = std::min(best, (r.p - p.p).norm());
                }
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(one_way(a, b), one_way(b, a));
}

} // namespace rigidlab
