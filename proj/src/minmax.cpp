#include "rigidlab/minmax.hpp"

#include "rigidlab/parallel.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace rigidlab
{

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();

int default_fiber_resolution(int k)
{
    if (k <= 1) return 65;
    if (k == 2) return 33;
    return 17;
}

long binomial(int n, int r)
{
    if (r < 0 || r > n) return 0;
    long b = 1;
    for (int i = 1; i <= r; ++i) b = b * (n - r + i) / i;
    return b;
}

// 1 + 2 max |S| over a coarse grid of T^n x [-C, C]^k.
double estimate_c_box(const GFQI& s)
{
    const int n = s.base_dim();
    const int k = s.fiber_dim();
    const double c = s.cutoff();
    std::vector<int> counts(n, 32);
    for (int a = 0; a < k; ++a) counts.push_back(k <= 2 ? 9 : 5);
    std::vector<bool> periodic(n + k, false);
    Vector lo(n + k), hi(n + k);
    for (int a = 0; a < n + k; ++a) {
        periodic[a] = a < n;
        lo[a] = a < n ? 0.0 : -c;
        hi[a] = a < n ? 1.0 : c;
    }
    const SampleGrid grid(Box(lo, hi, periodic), counts);
    std::vector<double> mags(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) { mags[i] = std::abs(s(grid.point(i))); });
    return 1.0 + 2.0 * *std::max_element(mags.begin(), mags.end());
}

} // namespace

void FiltrationOptions::validate() const
{
    if (base_resolution < 8) {
        throw InvalidArgument("filtration: base resolution must be at least 8");
    }
    if (fiber_resolution != 0 && fiber_resolution < 8) {
        throw InvalidArgument("filtration: fiber resolution must be at least 8");
    }
    if (!(c_box >= 0.0) || !std::isfinite(c_box)) {
        throw InvalidArgument("filtration: c_box must be finite and nonnegative");
    }
}

int CubicalFiltration::dimension(std::size_t cell) const
{
    const std::size_t total = values_.size();
    if (cell == total) return 0;
    if (cell > total) return dimension(cell - total - 1) + 1;
    int d = 0;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
        d += static_cast<int>((cell / strides_[a]) % shape_[a]) & 1;
    }
    return d;
}

std::vector<std::size_t> CubicalFiltration::boundary(std::size_t cell) const
{
    const std::size_t total = values_.size();
    std::vector<std::size_t> out;
    if (cell == total) return out;
    if (cell > total) {
        const std::size_t base = cell - total - 1;
        out.push_back(base);
        const auto faces = boundary(base);
        if (faces.empty()) {
            out.push_back(total);
        }
        for (std::size_t f : faces) out.push_back(total + 1 + f);
        return out;
    }
    for (std::size_t a = 0; a < shape_.size(); ++a) {
        const int c = static_cast<int>((cell / strides_[a]) % shape_[a]);
        if ((c & 1) == 0) continue;
        out.push_back(cell - strides_[a]);
        if (c + 1 < shape_[a]) {
            out.push_back(cell + strides_[a]);
        } else {
            // Periodic wrap: the edge (N-1, 0).
            out.push_back(cell - static_cast<std::size_t>(c) * strides_[a]);
        }
    }
    return out;
}

CubicalFiltration build_filtration(const GFQI& s, const FiltrationOptions& options)
{
    options.validate();
    CubicalFiltration f;
    const int n = s.base_dim();
    const int k = s.fiber_dim();
    f.n_ = n;
    f.k_ = k;
    f.c_box_ = options.c_box > 0.0 ? options.c_box : estimate_c_box(s);
    const double cutoff = s.cutoff();
    f.extent_ = k > 0 ? std::max(cutoff + 1.0, std::sqrt(2.0 * f.c_box_ / s.quad().smallest_magnitude())) : 0.0;

    const int m = options.fiber_resolution > 0 ? options.fiber_resolution : default_fiber_resolution(k);
    for (int a = 0; a < n; ++a) {
        f.vertex_counts_.push_back(options.base_resolution);
        f.shape_.push_back(2 * options.base_resolution);
    }
    for (int a = 0; a < k; ++a) {
        f.vertex_counts_.push_back(m);
        f.shape_.push_back(2 * m - 1);
    }
    const int dim = n + k;
    f.strides_.assign(dim, 1);
    for (int a = dim - 2; a >= 0; --a) f.strides_[a] = f.strides_[a + 1] * f.shape_[a + 1];
    const std::size_t total = f.strides_[0] * f.shape_[0];
    if (total > (std::size_t{1} << 30)) {
        throw InvalidArgument("filtration: grid too large");
    }

    // Vertex values.
    Vector lo(dim), hi(dim);
    std::vector<bool> periodic(dim);
    for (int a = 0; a < dim; ++a) {
        periodic[a] = a < n;
        lo[a] = a < n ? 0.0 : -f.extent_;
        hi[a] = a < n ? 1.0 : f.extent_;
    }
    const SampleGrid vertices(Box(lo, hi, periodic), f.vertex_counts_);
    std::vector<double> vertex_values(vertices.size());
    parallel_for(vertices.size(), [&](std::size_t i) { vertex_values[i] = s(vertices.point(i)); });

    auto vertex_cell = [&](const std::vector<int>& v) {
        std::size_t c = 0;
        for (int a = 0; a < dim; ++a) c += static_cast<std::size_t>(2 * v[a]) * f.strides_[a];
        return c;
    };

    f.values_.assign(total, -kInf);
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        f.values_[vertex_cell(vertices.multi_index(i))] = vertex_values[i];
    }
    // Lower-star values: one pass per axis, in axis order. After pass a every
    // cell whose odd coordinates lie on axes <= a holds its final value.
    for (int a = 0; a < dim; ++a) {
        const std::size_t stride = f.strides_[a];
        const int len = f.shape_[a];
        parallel_for(total / len, [&](std::size_t line) {
            const std::size_t outer = line / stride;
            const std::size_t inner = line % stride;
            const std::size_t start = outer * stride * len + inner;
            for (int c = 1; c < len; c += 2) {
                const std::size_t cell = start + static_cast<std::size_t>(c) * stride;
                const std::size_t next = c + 1 < len ? cell + stride : start;
                f.values_[cell] = std::max(f.values_[cell - stride], f.values_[next]);
            }
        });
    }

    // Value resolution: base-axis edges inside |xi|_inf <= C + 1.
    const double fiber_limit = cutoff + 1.0 + 1e-12;
    double tol = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const std::vector<int> v = vertices.multi_index(i);
        bool inside = true;
        for (int a = n; a < dim; ++a) inside = inside && std::abs(vertices.coordinate(a, v[a])) <= fiber_limit;
        if (!inside) continue;
        for (int a = 0; a < n; ++a) {
            std::vector<int> w = v;
            w[a] = (w[a] + 1) % f.vertex_counts_[a];
            tol = std::max(tol, std::abs(vertex_values[i] - vertex_values[vertices.flat_index(w)]));
        }
    }
    f.cell_tolerance_ = tol;

    for (std::size_t c = 0; c < total; ++c) {
        if (f.values_[c] <= -f.c_box_) f.coned_.push_back(c);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Persistence

std::vector<double> PersistenceDiagram::essential_births(int degree) const
{
    std::vector<double> out;
    for (const auto& p : pairs) {
        if (p.degree == degree && p.essential()) out.push_back(p.birth);
    }
    return out;
}

std::size_t PersistenceDiagram::essential_count(int degree) const { return essential_births(degree).size(); }

int PersistenceDiagram::max_degree() const
{
    int d = -1;
    for (const auto& p : pairs) d = std::max(d, p.degree);
    return d;
}

PersistenceDiagram compute_persistence(const CubicalFiltration& f)
{
    const std::size_t total = f.cell_count();
    const bool cone = f.has_cone();

    // Cells in filtration order: (value, dimension, index).
    std::vector<std::size_t> order;
    order.reserve(total + (cone ? f.coned_cells().size() + 1 : 0));
    for (std::size_t c = 0; c < total; ++c) order.push_back(c);
    if (cone) {
        order.push_back(total);
        for (std::size_t c : f.coned_cells()) order.push_back(total + 1 + c);
    }
    auto value_of = [&](std::size_t c) {
        if (c < total) return f.value(c);
        if (c == total) return -kInf;
        return f.value(c - total - 1);
    };
    std::vector<double> key_value(order.size());
    std::vector<int> key_dim(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        key_value[i] = value_of(order[i]);
        key_dim[i] = f.dimension(order[i]);
    }
    std::vector<std::uint32_t> perm(order.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
    std::sort(perm.begin(), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (key_value[a] != key_value[b]) return key_value[a] < key_value[b];
        if (key_dim[a] != key_dim[b]) return key_dim[a] < key_dim[b];
        return order[a] < order[b];
    });

    const std::size_t count = order.size();
    constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> position(cone ? 2 * total + 1 : total, kNone);
    std::vector<std::size_t> cell_at(count);
    std::vector<int> dim_at(count);
    std::vector<double> value_at(count);
    for (std::size_t p = 0; p < count; ++p) {
        const std::uint32_t i = perm[p];
        cell_at[p] = order[i];
        dim_at[p] = key_dim[i];
        value_at[p] = key_value[i];
        position[order[i]] = static_cast<std::uint32_t>(p);
    }
    key_value.clear();
    key_dim.clear();
    perm.clear();

    int top = 0;
    for (int d : dim_at) top = std::max(top, d);

    std::vector<std::vector<std::uint32_t>> columns(count);
    std::vector<std::uint32_t> pivot_owner(count, kNone);
    std::vector<char> cleared(count, 0);
    std::vector<std::uint32_t> scratch;

    // Twist reduction, highest dimension first.
    for (int d = top; d >= 1; --d) {
        for (std::size_t j = 0; j < count; ++j) {
            if (dim_at[j] != d || cleared[j]) continue;
            auto& col = columns[j];
            for (std::size_t face : f.boundary(cell_at[j])) col.push_back(position[face]);
            std::sort(col.begin(), col.end());
            while (!col.empty()) {
                const std::uint32_t low = col.back();
                const std::uint32_t owner = pivot_owner[low];
                if (owner == kNone) break;
                const auto& other = columns[owner];
                scratch.clear();
                std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(),
                                              std::back_inserter(scratch));
                col.swap(scratch);
            }
            if (!col.empty()) {
                pivot_owner[col.back()] = static_cast<std::uint32_t>(j);
                cleared[col.back()] = 1;
            }
        }
    }

    PersistenceDiagram diagram;
    for (std::size_t j = 0; j < count; ++j) {
        if (!columns[j].empty()) {
            const std::uint32_t low = columns[j].back();
            const double birth = value_at[low];
            const double death = value_at[j];
            if (birth == death || death <= -f.c_box()) continue;
            diagram.pairs.push_back({dim_at[low], birth, death});
        } else if (pivot_owner[j] == kNone) {
            if (cone && cell_at[j] == total) continue;
            diagram.pairs.push_back({dim_at[j], value_at[j], kInf});
        }
    }
    std::sort(diagram.pairs.begin(), diagram.pairs.end(), [](const PersistencePair& a, const PersistencePair& b) {
        if (a.degree != b.degree) return a.degree < b.degree;
        if (a.birth != b.birth) return a.birth < b.birth;
        return a.death < b.death;
    });
    return diagram;
}

void write_diagram_csv(std::ostream& out, const PersistenceDiagram& d)
{
    out << "degree,birth,death\n";
    char buf[64];
    for (const auto& p : d.pairs) {
        out << p.degree << ',';
        std::snprintf(buf, sizeof buf, "%.17g", p.birth);
        out << buf << ',';
        if (!p.essential()) {
            std::snprintf(buf, sizeof buf, "%.17g", p.death);
            out << buf;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Min-max values

MinmaxResult minmax_values(const GFQI& s, const FiltrationOptions& options)
{
    const CubicalFiltration f = build_filtration(s, options);
    MinmaxResult r;
    r.diagram = compute_persistence(f);
    r.cell_tolerance = f.cell_tolerance();
    r.c_box = f.c_box();

    const int n = s.base_dim();
    const int index = s.negative_index();
    const int top = std::max(r.diagram.max_degree(), index + n);
    std::ostringstream census;
    bool ok = true;
    for (int d = 0; d <= top; ++d) {
        const long expected = binomial(n, d - index);
        const long got = static_cast<long>(r.diagram.essential_count(d));
        census << (d ? " " : "") << "H" << d << "=" << got << "/" << expected;
        ok = ok && expected == got;
    }
    if (!ok) {
        throw TopologyError("minmax: essential classes do not match H*(T^" + std::to_string(n) +
                            ") shifted by the index " + std::to_string(index) + " (" + census.str() +
                            "); c_box or the resolution is too small");
    }
    r.unit = r.diagram.essential_births(index).front();
    r.fundamental = r.diagram.essential_births(index + n).front();
    if (!(r.unit > -r.c_box && r.fundamental < r.c_box)) {
        throw TopologyError("minmax: critical value outside the window [-c_box, c_box]");
    }
    return r;
}

double minmax_value(const GFQI& s, MinmaxClass which, const FiltrationOptions& options)
{
    const MinmaxResult r = minmax_values(s, options);
    return which == MinmaxClass::unit ? r.unit : r.fundamental;
}

bool critical_value_check(const GFQI& s, double lambda, double tol)
{
    if (!(tol > 0.0)) {
        throw InvalidArgument("critical_value_check: tolerance must be positive");
    }
    const int n = s.base_dim();
    const int k = s.fiber_dim();
    const int dim = n + k;
    const double r = s.cutoff() + 1.0;
    std::vector<int> counts(n, 64);
    for (int a = 0; a < k; ++a) counts.push_back(k <= 1 ? 33 : (k == 2 ? 17 : 9));
    std::vector<bool> periodic(dim);
    Vector lo(dim), hi(dim);
    for (int a = 0; a < dim; ++a) {
        periodic[a] = a < n;
        lo[a] = a < n ? 0.0 : -r;
        hi[a] = a < n ? 1.0 : r;
    }
    const SampleGrid grid(Box(lo, hi, periodic), counts);
    std::vector<double> norms(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        const auto g = s.gradient(grid.point(i));
        norms[i] = g ? g->norm() : kInf;
    });

    auto passes = [&](const Vector& z, double gnorm) { return gnorm <= tol && std::abs(s(z) - lambda) <= tol; };

    std::vector<std::size_t> seeds;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!std::isfinite(norms[i])) continue;
        const std::vector<int> idx = grid.multi_index(i);
        bool minimum = true;
        for (int a = 0; a < dim && minimum; ++a) {
            for (int step : {-1, 1}) {
                std::vector<int> j = idx;
                j[a] += step;
                if (periodic[a]) {
                    j[a] = (j[a] + counts[a]) % counts[a];
                } else if (j[a] < 0 || j[a] >= counts[a]) {
                    continue;
                }
                if (norms[grid.flat_index(j)] < norms[i]) minimum = false;
            }
        }
        if (minimum) seeds.push_back(i);
    }
    std::stable_sort(seeds.begin(), seeds.end(), [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });

    for (std::size_t i : seeds) {
        if (passes(grid.point(i), norms[i])) return true;
    }
    const std::size_t limit = std::min<std::size_t>(seeds.size(), 64);
    for (std::size_t si = 0; si < limit; ++si) {
        Vector z = grid.point(seeds[si]);
        auto g = s.gradient(z);
        if (!g) continue;
        for (int it = 0; it < 30 && g->norm() > 1e-3 * tol; ++it) {
            bool ok = true;
            const Matrix hess = fd_jacobian(
                [&](const Vector& y) {
                    auto gy = s.gradient(y);
                    if (!gy) {
                        ok = false;
                        return Vector(Vector::Zero(y.size()));
                    }
                    return *gy;
                },
                z);
            if (!ok) break;
            const Vector step = hess.completeOrthogonalDecomposition().solve(*g);
            double damping = 1.0;
            bool improved = false;
            for (int half = 0; half < 10; ++half) {
                const Vector trial = z - damping * step;
                const auto gt = s.gradient(trial);
                if (gt && gt->norm() < g->norm()) {
                    z = trial;
                    g = gt;
                    improved = true;
                    break;
                }
                damping *= 0.5;
            }
            if (!improved) break;
        }
        if (passes(z, g->norm())) return true;
    }
    return false;
}

GammaResult gamma_invariant(const GFQI& s, const FiltrationOptions& options)
{
    const MinmaxResult m = minmax_values(s, options);
    GammaResult r;
    r.unit = m.unit;
    r.fundamental = m.fundamental;
    r.cell_tolerance = m.cell_tolerance;
    const double raw = m.fundamental - m.unit;
    if (std::abs(raw) <= m.cell_tolerance) {
        r.gamma = 0.0;
        r.clamped = raw != 0.0;
    } else if (raw < 0.0) {
        throw TopologyError("gamma: c(mu) < c(1) by more than one grid cell");
    } else {
        r.gamma = raw;
    }
    return r;
}

GammaResult gamma_distance(const GFQI& s1, const GFQI& s2, const FiltrationOptions& options)
{
    return gamma_invariant(ominus(s1, s2), options);
}

std::vector<PropertyCheck> property_checks(const GFQI& s1, const GFQI& s2, const FiltrationOptions& options)
{
    const MinmaxResult m1 = minmax_values(s1, options);
    const MinmaxResult m2 = minmax_values(s2, options);
    const MinmaxResult n1 = minmax_values(negate(s1), options);
    const MinmaxResult n2 = minmax_values(negate(s2), options);
    const MinmaxResult sum = minmax_values(direct_sum(s1, s2), options);
    double cell = 0.0;
    for (const auto* m : {&m1, &m2, &n1, &n2, &sum}) cell = std::max(cell, m->cell_tolerance);
    const double tol = 2.0 * cell;

    std::vector<PropertyCheck> out;
    auto equal = [&](std::string name, double lhs, double rhs) {
        out.push_back({std::move(name), lhs, rhs, tol, std::abs(lhs - rhs) <= tol});
    };
    auto at_least = [&](std::string name, double lhs, double rhs) {
        out.push_back({std::move(name), lhs, rhs, tol, lhs >= rhs - tol});
    };
    equal("duality S1: c(1,-S1) = -c(mu,S1)", n1.unit, -m1.fundamental);
    equal("duality S2: c(1,-S2) = -c(mu,S2)", n2.unit, -m2.fundamental);
    at_least("subadditivity 1*1: c(1,S1+S2) >= c(1,S1)+c(1,S2)", sum.unit, m1.unit + m2.unit);
    at_least("subadditivity 1*mu: c(mu,S1+S2) >= c(1,S1)+c(mu,S2)", sum.fundamental, m1.unit + m2.fundamental);
    return out;
}

// ---------------------------------------------------------------------------
// gamma-hat lower bounds

GFQI image_under_flow(const ScalarField& H, const GFQI& f, double t, int resolution)
{
    const int n = f.base_dim();
    if (f.fiber_dim() != 0) {
        throw InvalidArgument("image_under_flow: only fiberless generating functions have an analytic image");
    }
    if (H.dim() != 2 * n) {
        throw InvalidArgument("image_under_flow: H must live on T*T^n");
    }
    if (!std::isfinite(t)) {
        throw InvalidArgument("image_under_flow: time must be finite");
    }
    const int per_axis = n == 1 ? resolution : std::min(resolution, 64);
    const SampleGrid grid(Box::unit_torus(n), per_axis);
    constexpr int kSegmentSamples = 21;
    constexpr double kTolerance = 1e-9;

    auto momenta_at = [](const Vector& q, const Vector& p) {
        Vector x(q.size() + p.size());
        x << q, p;
        return x;
    };
    std::vector<char> bad(grid.size(), 0);
    parallel_for(grid.size(), [&](std::size_t i) {
        const Vector q = grid.point(i);
        const auto df = f.gradient(q);
        if (!df) {
            bad[i] = 1;
            return;
        }
        const auto g0 = H.gradient(momenta_at(q, *df));
        if (!g0) {
            bad[i] = 1;
            return;
        }
        const Vector hq = g0->head(n);
        for (int j = 0; j < kSegmentSamples; ++j) {
            const double sj = t * j / (kSegmentSamples - 1);
            const auto g = H.gradient(momenta_at(q, *df - sj * hq));
            if (!g || g->tail(n).lpNorm<Eigen::Infinity>() > kTolerance ||
                (g->head(n) - hq).lpNorm<Eigen::Infinity>() > kTolerance * std::max(1.0, hq.norm())) {
                bad[i] = 1;
                return;
            }
        }
    });
    if (std::any_of(bad.begin(), bad.end(), [](char b) { return b != 0; })) {
        throw InvalidArgument("image_under_flow: H depends on p along the swept segments; no analytic image");
    }

    auto value = [H, f, t, momenta_at](const Vector& q) {
        const Vector df = *f.gradient(q);
        return f(q) - t * H(momenta_at(q, df));
    };
    auto gradient = [H, f, t, n, momenta_at](const Vector& q) -> std::optional<Vector> {
        const auto df = f.gradient(q);
        if (!df) return std::nullopt;
        const auto g = H.gradient(momenta_at(q, *df));
        if (!g) return std::nullopt;
        return Vector(*df - t * g->head(n));
    };
    std::ostringstream desc;
    desc << "phi^" << t << "(" << f.description() << ")";
    return GFQI(n, QuadraticForm(), GFQI::kDefaultCutoff, value, gradient, desc.str());
}

HatGammaBound hatgamma_lower_bound(const ScalarField& H, const std::vector<GFQI>& family, double t,
                                   const FiltrationOptions& options)
{
    if (family.empty()) {
        throw InvalidArgument("hatgamma: the Lagrangian family is empty");
    }
    HatGammaBound b;
    for (const GFQI& f : family) {
        const GFQI image = image_under_flow(H, f, t, options.base_resolution);
        const GammaResult g = gamma_distance(image, f, options);
        b.per_member.push_back(g.gamma);
        b.lower_bound = std::max(b.lower_bound, g.gamma);
        b.cell_tolerance = std::max(b.cell_tolerance, g.cell_tolerance);
    }
    return b;
}

HatGammaBound hatgamma_sup_lower_bound(const ScalarField& H, const std::vector<GFQI>& family,
                                       const FiltrationOptions& options)
{
    HatGammaBound best;
    best.per_member.assign(family.size(), 0.0);
    for (int i = 0; i <= 10; ++i) {
        const HatGammaBound b = hatgamma_lower_bound(H, family, i / 10.0, options);
        best.lower_bound = std::max(best.lower_bound, b.lower_bound);
        best.cell_tolerance = std::max(best.cell_tolerance, b.cell_tolerance);
        for (std::size_t m = 0; m < family.size(); ++m) {
            best.per_member[m] = std::max(best.per_member[m], b.per_member[m]);
        }
    }
    return best;
}

} // namespace rigidlab
