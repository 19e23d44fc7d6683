#include "rigidlab/rigidity.hpp"

#include "rigidlab/hamlang.hpp"
#include "rigidlab/parallel.hpp"

#include "support.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <doctest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <sstream>

using namespace rigidlab;
namespace mp = boost::multiprecision;

namespace
{

struct BareissResult
{
    int rank = 0;
    mp::cpp_int det = 0;
};

// Fraction-free elimination over the integers.
BareissResult bareiss(const IntegerMatrix& m)
{
    const int rows = static_cast<int>(m.size());
    const int cols = rows == 0 ? 0 : static_cast<int>(m.front().size());
    std::vector<std::vector<mp::cpp_int>> a(rows, std::vector<mp::cpp_int>(cols));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) a[i][j] = m[i][j];
    mp::cpp_int prev = 1;
    int sign = 1;
    int r = 0;
    for (int c = 0; c < cols && r < rows; ++c) {
        int piv = r;
        while (piv < rows && a[piv][c] == 0) ++piv;
        if (piv == rows) {
            continue;
        }
        if (piv != r) {
            std::swap(a[piv], a[r]);
            sign = -sign;
        }
        for (int i = r + 1; i < rows; ++i) {
            for (int j = c + 1; j < cols; ++j) a[i][j] = (a[i][j] * a[r][c] - a[i][c] * a[r][j]) / prev;
            a[i][c] = 0;
        }
        prev = a[r][c];
        ++r;
    }
    BareissResult out;
    out.rank = r;
    out.det = (rows == cols && r == rows) ? mp::cpp_int(sign * prev) : mp::cpp_int(0);
    return out;
}

bool annihilates(const IntegerMatrix& m, const std::vector<long long>& v)
{
    for (const auto& row : m) {
        mp::cpp_int acc = 0;
        for (std::size_t j = 0; j < row.size(); ++j) acc += mp::cpp_int(row[j]) * v[j];
        if (acc != 0) {
            return false;
        }
    }
    return true;
}

Matrix random_symplectic(testsupport::Rng& rng, int d)
{
    Matrix s(2 * d, 2 * d);
    for (int i = 0; i < 2 * d; ++i)
        for (int j = i; j < 2 * d; ++j) s(i, j) = s(j, i) = rng.uniform(-0.7, 0.7);
    const Matrix hamiltonian = symplectic_matrix(d) * s;
    return hamiltonian.exp();
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

RigidityMap identity_components(int d)
{
    std::vector<std::string> src;
    for (int i = 1; i <= d; ++i) src.push_back("q" + std::to_string(i));
    for (int i = 1; i <= d; ++i) src.push_back("p" + std::to_string(i));
    return RigidityMap::from_expressions(src, d, "identity");
}

// Symplectic shear: the time-1 flow of f(p) = p1^4/4 + p1 p2^2.
RigidityMap cubic_shear()
{
    return RigidityMap::from_expressions({"q1 + p1^3 + p2^2", "q2 + 2*p1*p2", "p1", "p2"}, 2, "cubic shear");
}

ScalarField bump_hill(double a, double radius)
{
    char src[128];
    std::snprintf(src, sizeof src, "%.17g*bump(q1/%.17g)*bump(p1/%.17g)", a, radius, radius);
    return hamlang::field_from_source(src, 1, Box::unbounded(2)).with_support(Box::cube(2, -radius, radius));
}

} // namespace

TEST_CASE("coupling matrix structure")
{
    for (int d = 1; d <= 50; ++d) {
        const CouplingMatrix c = CouplingMatrix::of(d);
        for (int i = 0; i < d; ++i) {
            long long sum = 0;
            for (int j = 0; j < d; ++j) {
                CHECK(c.entries[i][j] == (i == j ? d : 0) - 1);
                sum += c.entries[i][j];
            }
            CHECK(sum == 0);
        }
    }
    CHECK_THROWS_AS(CouplingMatrix::of(0), InvalidArgument);
}

TEST_CASE("coupling kernel for d = 1 and d = 2")
{
    const ExactKernel k2 = coupling_matrix_kernel(2);
    CHECK(CouplingMatrix::of(2).entries == IntegerMatrix{{1, -1}, {-1, 1}});
    CHECK(k2.rank == 1);
    CHECK(k2.determinant == "0");
    CHECK(k2.kernel == IntegerMatrix{{1, 1}});

    const ExactKernel k1 = coupling_matrix_kernel(1);
    CHECK(k1.rank == 0);
    CHECK(k1.determinant == "0");
    CHECK(k1.kernel == IntegerMatrix{{1}});
}

TEST_CASE("coupling kernel agrees with fraction-free elimination for d = 2..50")
{
    for (int d = 2; d <= 50; ++d) {
        const CouplingMatrix c = CouplingMatrix::of(d);
        const ExactKernel k = coupling_matrix_kernel(d);
        const BareissResult oracle = bareiss(c.entries);
        CHECK(oracle.rank == d - 1);
        CHECK(oracle.det == 0);
        CHECK(k.rank == oracle.rank);
        CHECK(k.determinant == "0");
        REQUIRE(k.kernel.size() == 1);
        CHECK(k.kernel[0] == std::vector<long long>(d, 1));
        CHECK(annihilates(c.entries, k.kernel[0]));
    }
}

TEST_CASE("exact rank and kernel on random integer matrices")
{
    testsupport::Rng rng(12);
    for (int trial = 0; trial < 60; ++trial) {
        const int rows = rng.integer(1, 7);
        const int cols = trial % 3 == 0 ? rows : rng.integer(1, 7);
        const int independent = rng.integer(1, std::min(rows, cols));
        IntegerMatrix base(independent, std::vector<long long>(cols));
        for (auto& r : base)
            for (auto& x : r) x = rng.integer(-4, 4);
        IntegerMatrix m;
        for (int i = 0; i < rows; ++i) {
            if (i < independent) {
                m.push_back(base[i]);
                continue;
            }
            std::vector<long long> r(cols, 0);
            for (int b = 0; b < independent; ++b) {
                const long long w = rng.integer(-2, 2);
                for (int j = 0; j < cols; ++j) r[j] += w * base[b][j];
            }
            m.push_back(r);
        }
        const ExactKernel k = exact_rank_kernel(m);
        const BareissResult oracle = bareiss(m);
        CHECK(k.rank == oracle.rank);
        CHECK(static_cast<int>(k.kernel.size()) == cols - k.rank);
        for (const auto& v : k.kernel) CHECK(annihilates(m, v));
        if (rows == cols) {
            CHECK(k.determinant == oracle.det.str());
        } else {
            CHECK(k.determinant.empty());
        }
    }
}

TEST_CASE("tilde brackets vanish for the identity")
{
    testsupport::Rng rng(3);
    const RigidityMap id = identity_components(2);
    for (int i = 0; i < 100; ++i) {
        const Vector t = tilde_brackets(id, PhasePoint(rng.vector(4, -3, 3)));
        CHECK(t.cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("tilde of a linear map is linear with matrix T M")
{
    testsupport::Rng rng(6);
    for (int d = 1; d <= 3; ++d) {
        const Matrix m = random_symplectic(rng, d);
        const RigidityMap t = tilde_transform(RigidityMap::from_diffeo(DiffeoSample::linear(m)));
        const Matrix expected = tilde_matrix(d) * m;
        for (int k = 0; k < 5; ++k) {
            const Vector x = rng.vector(2 * d, -2, 2);
            CHECK((t.map.jacobian(x) - expected).norm() <= 1e-14 * expected.norm());
            CHECK((t.map.forward(x) - expected * x).norm() <= 1e-13 * (1 + x.norm()));
            for (int i = 0; i < 2 * d; ++i) {
                CHECK(std::abs(t.components[i](x) - t.map.forward(x)[i]) <= 1e-13);
            }
        }
    }
    Matrix t1(2, 2);
    t1 << 1, 1, 1, 1;
    CHECK(tilde_matrix(1) == t1);
}

TEST_CASE("tilde brackets vanish for random linear symplectic maps")
{
    testsupport::Rng rng(21);
    for (int d = 1; d <= 3; ++d) {
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix m = random_symplectic(rng, d);
            // Oracle: M^T E M = E.
            const Matrix e = symplectic_matrix(d);
            REQUIRE((m.transpose() * e * m - e).norm() <= 1e-12);
            const RigidityMap phi = RigidityMap::from_diffeo(DiffeoSample::linear(m));
            for (int i = 0; i < 100; ++i) {
                const Vector t = tilde_brackets(phi, PhasePoint(rng.vector(2 * d, -2, 2)));
                CHECK(t.cwiseAbs().maxCoeff() <= 1e-8);
            }
        }
    }
}

TEST_CASE("tilde brackets for a non-symplectic map follow the expansion")
{
    // (2q, p): {Q, P} = 2 so {Q~, P~} = 2 + 0 + {P, Q} = 2 - 2 = 0 for d = 1,
    // and for d = 2 with (2 q1, q2, p1, p2): C_1 = 2, C_2 = 1, giving
    // C_i - (C_1 + C_2) / 2.
    const RigidityMap s1 = RigidityMap::from_expressions({"2*q1", "p1"}, 1);
    CHECK(std::abs(tilde_brackets(s1, PhasePoint(Vector::Constant(2, 0.3)))[0]) <= 1e-14);
    const RigidityMap s2 = RigidityMap::from_expressions({"2*q1", "q2", "p1", "p2"}, 2);
    const Vector t = tilde_brackets(s2, PhasePoint(Vector::Constant(4, 0.3)));
    CHECK(t[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(t[1] == doctest::Approx(-0.5).epsilon(1e-14));
}

TEST_CASE("constancy system")
{
    const RigidityMap id = identity_components(2);
    const ConstancySystem s = constancy_system(id, PhasePoint(Vector::Constant(4, 0.7)));
    CHECK(s.a == symplectic_matrix(2));
    CHECK(s.determinant == 1.0);

    const RigidityMap scale = RigidityMap::from_expressions({"2*q1", "p1"}, 1);
    CHECK(constancy_system(scale, PhasePoint(Vector::Constant(2, 0.1))).determinant == doctest::Approx(2.0));

    const RigidityMap flat = RigidityMap::from_expressions({"q1", "0*p1"}, 1);
    CHECK(constancy_system(flat, PhasePoint(Vector::Constant(2, 0.1))).determinant == 0.0);

    // Row i of A is DPhi_i^T E, so (A v)_i = {Phi_i, c} for Dc = v.
    testsupport::Rng rng(8);
    const RigidityMap shear = cubic_shear();
    for (int k = 0; k < 10; ++k) {
        const Vector x = rng.vector(4, -1, 1);
        const Vector v = rng.vector(4, -1, 1);
        char src[256];
        std::snprintf(src, sizeof src, "%.17g*q1 + %.17g*q2 + %.17g*p1 + %.17g*p2", v[0], v[1], v[2], v[3]);
        const ScalarField c = hamlang::field_from_source(src, 2, Box::unbounded(4));
        const Vector av = constancy_system(shear, PhasePoint(x)).a * v;
        for (int i = 0; i < 4; ++i) {
            CHECK(std::abs(av[i] - poisson_bracket(shear.components[i], c, PhasePoint(x))) <= 1e-12);
        }
    }
}

TEST_CASE("catalog diffeomorphisms have nonsingular constancy systems")
{
    testsupport::Rng rng(10);
    const std::vector<RigidityMap> maps = {
        cubic_shear(),
        generating_shear(1, 2.0, 1),
        generating_shear(2, 4.0, 3),
        RigidityMap::from_diffeo(flow_map(bump_hill(0.8, 3.0), 1.0, {1e-2, 1e-13, 50})),
    };
    for (const auto& phi : maps) {
        const int d = phi.degrees_of_freedom();
        for (int i = 0; i < 100; ++i) {
            const ConstancySystem s = constancy_system(phi, PhasePoint(rng.vector(2 * d, -3, 3)));
            CHECK(std::abs(s.determinant) > 1e-9);
            // Symplectic maps have unit Jacobian determinant and det E = 1.
            CHECK(s.determinant == doctest::Approx(1.0).epsilon(1e-8));
        }
    }
}

TEST_CASE("Jacobi eliminations")
{
    testsupport::Rng rng(14);
    const RigidityMap id = identity_components(3);
    const JacobiReport r = jacobi_elimination_check(id, PhasePoint(rng.vector(6, -1, 1)));
    CHECK(r.entries.size() == 12);
    CHECK(r.max_abs == 0.0);
    CHECK(r.pass);

    CHECK(jacobi_elimination_check(identity_components(1), PhasePoint(Vector::Zero(2))).entries.empty());

    for (int trial = 0; trial < 5; ++trial) {
        const RigidityMap lin = RigidityMap::from_diffeo(DiffeoSample::linear(random_symplectic(rng, 2)));
        const JacobiReport rl = jacobi_elimination_check(lin, PhasePoint(rng.vector(4, -1, 1)), 1e-8);
        CHECK(rl.pass);
    }

    // {Q_j, P_j} = dQ_j/dq_j = 1 for the cubic shear, so every entry is 0.
    const RigidityMap shear = cubic_shear();
    for (int k = 0; k < 20; ++k) {
        const JacobiReport rs = jacobi_elimination_check(shear, PhasePoint(rng.vector(4, -1.5, 1.5)));
        CHECK(rs.max_abs <= 1e-6);
    }

    const RigidityMap kink = RigidityMap::from_expressions({"q1 + abs(p2)", "q2", "p1", "p2"}, 2);
    CHECK_THROWS_AS(jacobi_elimination_check(kink, PhasePoint(Vector::Constant(4, 0.2))), DifferentiationError);
}

TEST_CASE("components assemble to the forward map exactly")
{
    testsupport::Rng rng(15);
    const std::vector<RigidityMap> maps = {
        generating_shear(2, 4.0, 2),
        RigidityMap::from_diffeo(flow_map(bump_hill(0.8, 3.0), 1.0, {1e-2, 1e-13, 50})),
        cubic_shear(),
    };
    for (const auto& phi : maps) {
        const int m = phi.map.dim;
        for (int k = 0; k < 10; ++k) {
            const Vector x = rng.vector(m, -2, 2);
            const Vector y = phi.map.forward(x);
            const Matrix j = phi.map.jacobian(x);
            for (int i = 0; i < m; ++i) {
                CHECK(phi.components[i](x) == y[i]);
                CHECK(*phi.components[i].gradient(x) == Vector(j.row(i).transpose()));
            }
        }
    }
}

TEST_CASE("generating shear is symplectic, invertible and compactly supported")
{
    testsupport::Rng rng(16);
    for (int d : {1, 2}) {
        const double radius = d == 1 ? 2.0 : 4.0;
        const Box support = shear_support(d, radius);
        for (int n : {1, 2, 5, 11}) {
            const RigidityMap phi = generating_shear(d, radius, n);
            const double bound = shear_family_bound(d, radius, n);
            for (int k = 0; k < 40; ++k) {
                const Vector x = rng.vector(2 * d, -radius - 1.5, radius + 1.5);
                const Vector y = phi.map.forward(x);
                CHECK(symplecticity_defect(phi.map, PhasePoint(x)) <= 1e-9);
                CHECK((phi.map.inverse(y) - x).norm() <= 1e-10);
                CHECK((y - x).norm() <= bound);
                if (!support.contains(x, 0.0)) {
                    CHECK(y == x);
                    CHECK(max_abs(bracket_relation_table(phi.map, PhasePoint(x)) - symplectic_matrix(d)) <= 1e-9);
                }
            }
        }
    }
    // Derivatives oscillate: some entry of DPhi - I stays of order one.
    const RigidityMap phi = generating_shear(1, 2.0, 20);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        const Vector x = Vector::Constant(2, -0.5 + k / 400.0);
        worst = std::max(worst, max_abs(phi.map.jacobian(x) - Matrix::Identity(2, 2)));
    }
    CHECK(worst >= 0.5);
    CHECK_THROWS_AS(generating_shear(2, 2.0, 1), InvalidArgument);
    CHECK_THROWS_AS(generating_shear(1, 1.0, 1), InvalidArgument);
}

TEST_CASE("mollified Jacobian")
{
    testsupport::Rng rng(17);
    Matrix m(3, 4);
    m.setRandom();
    const Vector b = rng.vector(3, -1, 1);
    auto affine = [&](const Vector& x) { return Vector(m * x + b); };
    const Vector x = rng.vector(4, -1, 1);
    CHECK((mollified_jacobian(affine, x, Vector::Constant(4, 0.3)) - m).norm() <= 1e-13);

    // Second order in the step: halving it divides the error by about 4.
    auto curved = [](const Vector& z) { return Vector(Vector::Constant(1, std::sin(z[0]) * std::exp(z[1]))); };
    const Vector z = (Vector(2) << 0.4, -0.2).finished();
    Matrix exact(1, 2);
    exact << std::cos(z[0]) * std::exp(z[1]), std::sin(z[0]) * std::exp(z[1]);
    const double e1 = (mollified_jacobian(curved, z, Vector::Constant(2, 0.1)) - exact).norm();
    const double e2 = (mollified_jacobian(curved, z, Vector::Constant(2, 0.05)) - exact).norm();
    CHECK(e2 / e1 == doctest::Approx(0.25).epsilon(0.05));
    CHECK_THROWS_AS(mollified_jacobian(curved, z, Vector::Zero(2)), InvalidArgument);
}

TEST_CASE("limit experiment on flows of H/n")
{
    const double a = 0.8;
    const double radius = 3.0;
    const ScalarField H = bump_hill(a, radius);
    // |dH/dq|, |dH/dp| <= a * 3.75 / R.
    const double gradient_bound = std::sqrt(2.0) * a * 3.75 / radius;
    const SampleGrid grid(Box::cube(2, -4, 4), 13);
    const RigidityReport rep =
        limit_rigidity_experiment(flow_family(H, {1e-2, 1e-13, 50}), DiffeoSample::identity(1), *H.support(), grid, 6);
    REQUIRE(rep.rows.size() == 6);
    for (const auto& row : rep.rows) {
        CHECK(row.sup_distance <= flow_family_bound(gradient_bound, row.n));
        CHECK(row.max_table_deviation <= 1e-9);
        CHECK(row.at_infinity_deviation <= 1e-12);
        CHECK(row.c_estimate == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(rep.rows[5].sup_distance < rep.rows[0].sup_distance);
    CHECK(rep.limit.max_table_deviation <= 1e-6);
    CHECK(rep.limit.at_infinity_deviation <= 1e-6);
    CHECK(rep.limit_symplectic);
}

TEST_CASE("limit experiment on shrinking shears")
{
    for (int d : {1, 2}) {
        const double radius = d == 1 ? 2.0 : 4.0;
        const Box support = shear_support(d, radius);
        const SampleGrid grid(Box::cube(2 * d, -radius - 2, radius + 2), d == 1 ? 17 : 7);
        const RigidityReport rep =
            limit_rigidity_experiment(shear_family(d, radius), DiffeoSample::identity(d), support, grid, 8);
        for (const auto& row : rep.rows) {
            CHECK(row.sup_distance <= shear_family_bound(d, radius, row.n));
            CHECK(row.max_table_deviation <= 1e-9);
            CHECK(row.at_infinity_deviation <= 1e-9);
        }
        CHECK(rep.limit_symplectic);
        CHECK(rep.limit.c_estimate == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("limit experiment on a constant linear symplectic family")
{
    testsupport::Rng rng(19);
    const Matrix m = random_symplectic(rng, 1);
    const DiffeoSample phi = DiffeoSample::linear(m);
    // The map is not compactly supported; the collar only needs grid points
    // outside the declared box.
    const SampleGrid grid(Box::cube(2, -2, 2), 9);
    const RigidityReport rep = limit_rigidity_experiment(
        [&](int) { return RigidityMap::from_diffeo(phi); }, phi, Box::cube(2, -1, 1), grid, 3);
    for (const auto& row : rep.rows) CHECK(row.sup_distance == 0.0);
    CHECK(rep.limit.max_table_deviation <= 1e-8);
    CHECK(rep.limit_symplectic);
}

TEST_CASE("C variance is controlled by the finite-difference error")
{
    const RigidityMap phi = generating_shear(1, 2.0, 1);
    const SampleGrid grid(Box::cube(2, -3, 3), 9);
    const double h = 1e-3;
    RigidityOptions opt;
    opt.stencil_step = h;
    const RigidityReport rep =
        limit_rigidity_experiment([&](int) { return phi; }, phi.map, shear_support(1, 2.0), grid, 1, opt);
    const Matrix e = symplectic_matrix(1);
    double err = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector x = grid.point(i);
        REQUIRE(jacobi_elimination_check(phi, PhasePoint(x)).pass);
        REQUIRE(constancy_system(phi, PhasePoint(x)).determinant >= 0.1);
        // Richardson estimate of the error of the step-h table.
        const Matrix j1 = mollified_jacobian(phi.map.forward, x, Vector::Constant(2, h));
        const Matrix j2 = mollified_jacobian(phi.map.forward, x, Vector::Constant(2, h / 2));
        const Matrix t1 = j1 * e * j1.transpose();
        const Matrix t2 = j2 * e * j2.transpose();
        err = std::max(err, max_abs(t1 - t2) * 4.0 / 3.0);
    }
    CHECK(std::sqrt(rep.limit.c_variance) <= 2.0 * err + 1e-12);
    CHECK(rep.limit.max_table_deviation <= 1e-4);
}

TEST_CASE("limit experiment errors")
{
    const SampleGrid grid(Box::cube(2, -2, 2), 5);
    const Box support = Box::cube(2, -1, 1);
    const RigidityFamily scaled = [](int) { return RigidityMap::from_expressions({"2*q1", "p1"}, 1); };
    CHECK_THROWS_AS(limit_rigidity_experiment(scaled, DiffeoSample::identity(1), support, grid, 2), InvalidArgument);

    const RigidityFamily drifting = [](int n) {
        char q[64];
        std::snprintf(q, sizeof q, "q1 + %.17g", 0.01 * n);
        return RigidityMap::from_expressions({q, "p1"}, 1);
    };
    CHECK_THROWS_AS(limit_rigidity_experiment(drifting, DiffeoSample::identity(1), support, grid, 3), ConvergenceError);

    const RigidityFamily id = [](int) { return RigidityMap::from_diffeo(DiffeoSample::identity(1)); };
    CHECK_THROWS_AS(limit_rigidity_experiment(id, DiffeoSample::identity(1), Box::cube(2, -3, 3), grid, 2),
                    InvalidArgument);
    CHECK_THROWS_AS(limit_rigidity_experiment(id, DiffeoSample::identity(1), support, grid, 0), InvalidArgument);
}

TEST_CASE("rigidity report is independent of the worker count")
{
    const SampleGrid grid(Box::cube(4, -6, 6), 5);
    auto run = [&] {
        std::ostringstream out;
        write_rigidity_csv(out, limit_rigidity_experiment(shear_family(2, 4.0), DiffeoSample::identity(2),
                                                          shear_support(2, 4.0), grid, 3));
        return out.str();
    };
    set_worker_count(1);
    const std::string a = run();
    set_worker_count(3);
    const std::string b = run();
    set_worker_count(0);
    CHECK(a == b);
    CHECK(a.rfind("n,sup_distance,max_table_deviation,C_estimate,C_variance,at_infinity_deviation\n", 0) == 0);
    CHECK(a.find("\nlimit,") != std::string::npos);
}
