#include "rigidlab/weakbracket.hpp"

#include "rigidlab/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>

namespace rigidlab
{

namespace
{

constexpr double kSingletonDiameter = 1e-6;
constexpr double kDedupe = 1e-9;
constexpr double kRayAgreement = 1e-6;

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Unit direction for ray `index`, from its own stream.
Vector ray_direction(std::uint64_t seed, std::size_t index, int m)
{
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(index + 1)));
    std::normal_distribution<double> normal;
    Vector u(m);
    do {
        for (int i = 0; i < m; ++i) u[i] = normal(rng);
    } while (u.norm() < 1e-12);
    return u / u.norm();
}

std::vector<Vector> dedupe(std::vector<Vector> pts)
{
    std::vector<Vector> out;
    for (auto& p : pts) {
        bool dup = false;
        for (const auto& q : out) dup = dup || (p - q).lpNorm<Eigen::Infinity>() <= kDedupe;
        if (!dup) out.push_back(std::move(p));
    }
    return out;
}

// Limits along rays of a vector-valued quantity sampled at x + r u.
ConvexSetCloud ray_limits(const std::function<std::optional<Vector>(const Vector&)>& sample,
                          const std::function<bool(const Vector&)>& inside, const Vector& x,
                          const SamplingSchedule& sched,
                          const std::function<std::optional<Vector>()>& value_at_x)
{
    sched.validate();
    const int m = static_cast<int>(x.size());
    const double s = sched.shrink;
    const std::size_t rays = static_cast<std::size_t>(sched.samples);
    std::vector<std::optional<Vector>> limits(rays);

    parallel_for(rays, [&](std::size_t i) {
        const Vector u = ray_direction(sched.seed, i, m);
        std::vector<Vector> v;
        for (int j = 0; j < sched.shells; ++j) {
            const Vector y = x + sched.initial_radius * std::pow(s, j) * u;
            if (!inside(y)) return;
            auto val = sample(y);
            if (!val || !val->allFinite()) return;
            v.push_back(*val);
        }
        // Two Richardson levels for errors a r + b r^2 + ...
        std::vector<Vector> r2;
        for (int j = 2; j < sched.shells; ++j) {
            const Vector r1a = (v[j - 1] - s * v[j - 2]) / (1.0 - s);
            const Vector r1b = (v[j] - s * v[j - 1]) / (1.0 - s);
            r2.push_back((r1b - s * s * r1a) / (1.0 - s * s));
        }
        // The innermost estimate that agrees with its outer neighbour.
        for (int j = static_cast<int>(r2.size()) - 1; j >= 1; --j) {
            const double scale = std::max(1.0, r2[j].lpNorm<Eigen::Infinity>());
            if ((r2[j] - r2[j - 1]).lpNorm<Eigen::Infinity>() <= kRayAgreement * scale) {
                limits[i] = r2[j];
                return;
            }
        }
    });

    ConvexSetCloud cloud;
    cloud.schedule = sched;
    std::vector<Vector> pts;
    for (auto& l : limits) {
        if (l) pts.push_back(*l);
    }
    cloud.accepted_rays = static_cast<int>(pts.size());
    if (pts.empty()) {
        throw DifferentiationError("weak field: no sampling ray produced a stable limit (all samples hit kinks)");
    }
    cloud.points = dedupe(std::move(pts));
    if (cloud.diameter() <= kSingletonDiameter) {
        auto v = value_at_x();
        if (!v) {
            v = Vector::Zero(m);
            for (const auto& p : cloud.points) *v += p;
            *v /= static_cast<double>(cloud.points.size());
        }
        cloud.points = {*v};
        cloud.singleton = true;
    }
    return cloud;
}

std::optional<Matrix> field_jacobian(const VectorField& f, const Vector& y)
{
    bool ok = true;
    Matrix j = fd_jacobian(
        [&](const Vector& z) {
            auto v = f.eval(z);
            if (!v) {
                ok = false;
                return Vector(Vector::Zero(f.dim));
            }
            return *v;
        },
        y);
    if (!ok) return std::nullopt;
    return j;
}

std::optional<Vector> rs_integrand(const VectorField& f, const VectorField& g, const Vector& y)
{
    auto fy = f.eval(y);
    auto gy = g.eval(y);
    if (!fy || !gy) return std::nullopt;
    auto jf = field_jacobian(f, y);
    auto jg = field_jacobian(g, y);
    if (!jf || !jg) return std::nullopt;
    return Vector(*jf * *gy - *jg * *fy);
}

double radical_inverse(std::uint64_t i, int base)
{
    double inv = 1.0 / base;
    double f = inv;
    double r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

std::string g17(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void SamplingSchedule::validate() const
{
    if (!(initial_radius > 0.0) || !std::isfinite(initial_radius)) {
        throw InvalidArgument("sampling schedule: initial radius must be positive");
    }
    if (!(shrink > 0.0 && shrink < 1.0)) {
        throw InvalidArgument("sampling schedule: shrink factor must lie in (0, 1)");
    }
    if (shells < 3) {
        throw InvalidArgument("sampling schedule: at least 3 shells");
    }
    if (samples < 8) {
        throw InvalidArgument("sampling schedule: at least 8 samples per shell");
    }
}

double ConvexSetCloud::support(const Vector& direction) const
{
    if (points.empty()) {
        throw InvalidArgument("support: empty cloud");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& p : points) best = std::max(best, p.dot(direction));
    return best;
}

double ConvexSetCloud::diameter() const
{
    double d = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j) d = std::max(d, (points[i] - points[j]).norm());
    return d;
}

ConvexSetCloud ConvexSetCloud::single(Vector v)
{
    ConvexSetCloud c;
    c.points.push_back(std::move(v));
    c.singleton = true;
    return c;
}

VectorField hamiltonian_field(const ScalarField& H)
{
    if (H.dim() % 2 != 0) {
        throw InvalidArgument("hamiltonian_field: H must live on R^{2d}");
    }
    const Matrix e = symplectic_matrix(H.dim() / 2);
    VectorField f;
    f.dim = H.dim();
    f.eval = [H, e](const Vector& x) -> std::optional<Vector> {
        auto g = H.gradient(x);
        if (!g) return std::nullopt;
        return Vector(e * *g);
    };
    f.description = "X_H";
    return f;
}

VectorField constant_field(Vector v)
{
    VectorField f;
    f.dim = static_cast<int>(v.size());
    f.eval = [v](const Vector&) -> std::optional<Vector> { return v; };
    f.description = "constant";
    return f;
}

ConvexSetCloud weak_hamiltonian_field(const ScalarField& H, const Vector& x, const SamplingSchedule& sched)
{
    if (x.size() != H.dim()) {
        throw InvalidArgument("weak_hamiltonian_field: point has the wrong dimension");
    }
    const VectorField xh = hamiltonian_field(H);
    const Box& domain = H.domain();
    return ray_limits(
        xh.eval, [&](const Vector& y) { return domain.contains(y, 0.0); }, x, sched,
        [&]() -> std::optional<Vector> {
            if (!domain.contains(x, 0.0)) return std::nullopt;
            return xh.eval(x);
        });
}

ConvexSetCloud rs_lie_bracket(const VectorField& f, const VectorField& g, const Vector& x,
                              const SamplingSchedule& sched)
{
    if (f.dim != g.dim || x.size() != f.dim) {
        throw InvalidArgument("rs_lie_bracket: dimension mismatch");
    }
    auto sample = [&](const Vector& y) { return rs_integrand(f, g, y); };
    return ray_limits(
        sample, [](const Vector&) { return true; }, x, sched, [&]() { return rs_integrand(f, g, x); });
}

ScalarField first_order_bracket(const ScalarField& H, const ScalarField& K)
{
    if (H.dim() != K.dim() || H.dim() % 2 != 0) {
        throw InvalidArgument("first_order_bracket: fields must live on the same R^{2d}");
    }
    const Matrix e = symplectic_matrix(H.dim() / 2);
    auto value = [H, K, e](const Vector& x) {
        return H.require_gradient(x).dot(e * K.require_gradient(x));
    };
    return ScalarField(H.domain(), value, Regularity::lipschitz);
}

ConvexSetCloud weak_lie_bracket(const ScalarField& H, const ScalarField& K, const Vector& x,
                                const SamplingSchedule& sched)
{
    for (const ScalarField* f : {&H, &K}) {
        if (f->regularity() == Regularity::lipschitz) {
            throw InvalidArgument("weak_lie_bracket: H and K must be C^{1,1}");
        }
    }
    return weak_hamiltonian_field(first_order_bracket(H, K), x, sched);
}

int default_direction_count(int m) { return m <= 2 ? 64 : 256; }

std::vector<Vector> comparison_directions(int m, int count)
{
    if (m < 1 || count < 2 * m) {
        throw InvalidArgument("comparison_directions: need at least 2m directions");
    }
    if (m == 2) {
        std::vector<Vector> dirs;
        for (int i = 0; i < count; ++i) {
            const double a = 6.283185307179586 * i / count;
            Vector u(2);
            u << std::cos(a), std::sin(a);
            dirs.push_back(u);
        }
        return dirs;
    }
    std::vector<Vector> dirs;
    for (int i = 0; i < m; ++i) {
        for (double sgn : {1.0, -1.0}) {
            Vector u = Vector::Zero(m);
            u[i] = sgn;
            dirs.push_back(u);
        }
    }
    const int pairs = (m + 1) / 2;
    if (2 * pairs > static_cast<int>(std::size(kPrimes))) {
        throw InvalidArgument("comparison_directions: dimension too large");
    }
    for (std::uint64_t i = 1; static_cast<int>(dirs.size()) < count; ++i) {
        Vector u(m);
        for (int p = 0; p < pairs; ++p) {
            const double u1 = radical_inverse(i, kPrimes[2 * p]);
            const double u2 = radical_inverse(i, kPrimes[2 * p + 1]);
            const double rad = std::sqrt(-2.0 * std::log(u1));
            u[2 * p] = rad * std::cos(6.283185307179586 * u2);
            if (2 * p + 1 < m) u[2 * p + 1] = rad * std::sin(6.283185307179586 * u2);
        }
        if (u.norm() < 1e-12) continue;
        dirs.push_back(u / u.norm());
    }
    return dirs;
}

double hausdorff_distance(const ConvexSetCloud& a, const ConvexSetCloud& b, int direction_count)
{
    if (a.points.empty() || b.points.empty()) {
        throw InvalidArgument("hausdorff_distance: empty cloud");
    }
    const int m = a.dim();
    if (b.dim() != m) {
        throw InvalidArgument("hausdorff_distance: clouds live in different spaces");
    }
    if (m == 1) {
        double d = 0.0;
        for (double sgn : {1.0, -1.0}) {
            Vector u(1);
            u << sgn;
            d = std::max(d, std::abs(a.support(u) - b.support(u)));
        }
        return d;
    }
    const int count = direction_count > 0 ? direction_count : default_direction_count(m);
    std::vector<Vector> dirs = comparison_directions(m, count);
    // Directions between generators make translates and nested segments exact.
    if (a.points.size() * b.points.size() <= 4096) {
        for (const auto& p : a.points) {
            for (const auto& q : b.points) {
                const Vector w = p - q;
                if (w.norm() > 1e-300) {
                    dirs.push_back(w / w.norm());
                    dirs.push_back(-w / w.norm());
                }
            }
        }
    }
    double d = 0.0;
    for (const auto& u : dirs) d = std::max(d, std::abs(a.support(u) - b.support(u)));
    return d;
}

void write_cloud_csv(std::ostream& out, const ConvexSetCloud& cloud)
{
    const int m = cloud.dim();
    for (int i = 0; i < m; ++i) out << (i ? "," : "") << "x" << i + 1;
    out << '\n';
    for (const auto& p : cloud.points) {
        for (int i = 0; i < m; ++i) out << (i ? "," : "") << g17(p[i]);
        out << '\n';
    }
}

std::string cloud_provenance_json(const ConvexSetCloud& cloud)
{
    nlohmann::ordered_json j;
    j["initial_radius"] = cloud.schedule.initial_radius;
    j["shrink"] = cloud.schedule.shrink;
    j["shells"] = cloud.schedule.shells;
    j["samples"] = cloud.schedule.samples;
    j["seed"] = cloud.schedule.seed;
    j["accepted_rays"] = cloud.accepted_rays;
    j["generators"] = cloud.points.size();
    j["singleton"] = cloud.singleton;
    return j.dump();
}

C0CommuteReport c0_commute_defect(const FieldFamily& h_seq, const FieldFamily& k_seq, const ScalarField& H,
                                  const ScalarField& K, const SampleGrid& grid, int n_max, double tolerance)
{
    if (n_max < 1) {
        throw InvalidArgument("c0_commute_defect: n_max must be at least 1");
    }
    if (!(tolerance > 0.0)) {
        throw InvalidArgument("c0_commute_defect: tolerance must be positive");
    }
    const int d2 = H.dim();
    if (K.dim() != d2 || grid.dim() != d2 || d2 % 2 != 0) {
        throw InvalidArgument("c0_commute_defect: H, K and the grid must share R^{2d}");
    }
    const Matrix e = symplectic_matrix(d2 / 2);
    C0CommuteReport report;
    report.tolerance = tolerance;
    for (int n = 1; n <= n_max; ++n) {
        ScalarField hn = h_seq(n);
        ScalarField kn = k_seq(n);
        std::vector<double> dh(grid.size()), dk(grid.size()), br(grid.size());
        parallel_for(grid.size(), [&](std::size_t i) {
            const Vector x = grid.point(i);
            dh[i] = std::abs(hn(x) - H(x));
            dk[i] = std::abs(kn(x) - K(x));
            br[i] = std::abs(hn.require_gradient(x).dot(e * kn.require_gradient(x)));
        });
        report.rows.push_back({n, *std::max_element(dh.begin(), dh.end()), *std::max_element(dk.begin(), dk.end()),
                               *std::max_element(br.begin(), br.end())});
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    bool positive = true;
    for (const auto& r : report.rows) {
        if (!(r.bracket > 0.0)) {
            positive = false;
            break;
        }
        const double lx = std::log(static_cast<double>(r.n));
        const double ly = std::log(r.bracket);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double cnt = static_cast<double>(report.rows.size());
    const double denom = cnt * sxx - sx * sx;
    report.bracket_slope = positive && denom > 0.0 ? (cnt * sxy - sx * sy) / denom
                                                   : std::numeric_limits<double>::quiet_NaN();

    bool monotone = true;
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        const auto& a = report.rows[i - 1];
        const auto& b = report.rows[i];
        const double slack = 1e-12;
        monotone = monotone && b.h_distance <= a.h_distance + slack && b.k_distance <= a.k_distance + slack &&
                   b.bracket <= a.bracket + slack;
    }
    report.commuting_evidence = monotone && report.rows.back().bracket <= tolerance;
    return report;
}

} // namespace rigidlab
