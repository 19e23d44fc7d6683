#include "rigidlab/gfqi.hpp"

#include "support.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

using namespace rigidlab;

namespace
{

constexpr double kTwoPi = 6.283185307179586;

hamlang::Expression fiber_expr(const std::string& src, int n, int k)
{
    return hamlang::parse_expression(src, hamlang::Dims{n, k, false});
}

// S(q; xi) = xi^2 + 0.3 bump(xi/2) cos(2 pi q) xi + sin(2 pi q) / 5: one fiber
// variable, residual supported in |xi| < 2.
GFQI wiggly_k1()
{
    return from_expression(
        fiber_expr("xi1^2 + 0.3*bump(xi1/2)*cos(6.283185307179586*q1)*xi1 + sin(6.283185307179586*q1)/5", 1, 1),
        QuadraticForm::diagonal({1.0}), 2.0);
}

double max_abs_p(const WavefrontSample& w)
{
    double m = 0.0;
    for (const auto& pt : w.points) m = std::max(m, pt.p.lpNorm<Eigen::Infinity>());
    return m;
}

} // namespace

TEST_CASE("quadratic form validation and negative index")
{
    const QuadraticForm a = QuadraticForm::diagonal({1.0, -2.0, -0.5});
    CHECK(a.size() == 3);
    CHECK(a.negative_index() == 2);
    CHECK(a.smallest_magnitude() == doctest::Approx(0.5));
    CHECK_THROWS_AS(QuadraticForm::diagonal({1.0, 1e-10}), InvalidArgument);
    Matrix m(2, 2);
    m << 1.0, 0.5, 0.4, 1.0;
    CHECK_THROWS_AS(QuadraticForm{m}, InvalidArgument);
    Vector xi(3);
    xi << 1.0, 1.0, 2.0;
    CHECK(a(xi) == doctest::Approx(1.0 - 2.0 - 2.0));
    CHECK(QuadraticForm().negative_index() == 0);
}

TEST_CASE("zero section and constants")
{
    const GFQI zero = from_base_function("0", 1);
    CHECK(zero.fiber_dim() == 0);
    const auto w = wavefront(zero, 64, 1e-10);
    CHECK(w.points.size() == 64);
    CHECK_FALSE(w.empty_warning);
    CHECK(max_abs_p(w) <= 1e-9);

    const auto wc = wavefront(from_base_function("3.5", 1), 64, 1e-10);
    CHECK(wavefront_distance(w, wc) == 0.0);
}

TEST_CASE("wavefront of cos reproduces its derivative at resolution 256")
{
    const GFQI s = from_base_function("cos(6.283185307179586*q1)", 1);
    const auto w = wavefront(s, 256, 1e-10);
    REQUIRE(w.points.size() == 256);
    double worst = 0.0;
    for (const auto& pt : w.points) {
        const double oracle = -kTwoPi * std::sin(kTwoPi * pt.q[0]);
        worst = std::max(worst, std::abs(pt.p[0] - oracle));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("wavefront in two base dimensions")
{
    const GFQI s = from_base_function("sin(6.283185307179586*q1)*cos(6.283185307179586*q2)/3", 2);
    const auto w = wavefront(s, 32, 1e-10);
    REQUIRE(w.points.size() == 32 * 32);
    double worst = 0.0;
    for (const auto& pt : w.points) {
        const double a = kTwoPi * pt.q[0];
        const double b = kTwoPi * pt.q[1];
        worst = std::max(worst, std::abs(pt.p[0] - kTwoPi * std::cos(a) * std::cos(b) / 3));
        worst = std::max(worst, std::abs(pt.p[1] + kTwoPi * std::sin(a) * std::sin(b) / 3));
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("non-periodic base function is rejected")
{
    CHECK_THROWS_AS(from_base_function("q1", 1), InvalidArgument);
    CHECK_THROWS_AS(from_base_function("sin(q1)", 1), InvalidArgument);
    CHECK_THROWS_AS(from_base_function("p1", 1), InvalidArgument);
}

TEST_CASE("fiber-variable GFQI with positive and indefinite forms match the fiberless reduction")
{
    const std::string f = "cos(6.283185307179586*q1)/4";
    const auto base = wavefront(from_base_function(f, 1), 64, 1e-10);

    const GFQI pos = from_expression(fiber_expr("xi1^2 + " + f, 1, 1), QuadraticForm::diagonal({1.0}), 1.0);
    const auto wp = wavefront(pos, 64, 1e-10);
    CHECK(wp.points.size() == base.points.size());
    CHECK(wavefront_distance(base, wp) <= 1e-9);

    const GFQI ind = from_expression(fiber_expr("xi1^2 - xi2^2 + " + f, 1, 2), QuadraticForm::diagonal({1.0, -1.0}), 1.0);
    CHECK(ind.negative_index() == 1);
    const auto wi = wavefront(ind, 64, 1e-10);
    CHECK(wi.points.size() == base.points.size());
    CHECK(wavefront_distance(base, wi) <= 1e-9);
}

TEST_CASE("from_expression rejects a residual that survives beyond the cutoff")
{
    CHECK_THROWS_AS(from_expression(fiber_expr("xi1^2 + xi1", 1, 1), QuadraticForm::diagonal({1.0}), 1.0),
                    InvalidArgument);
    CHECK_THROWS_AS(from_expression(fiber_expr("xi1^2", 1, 1), QuadraticForm::diagonal({1.0, 1.0}), 1.0),
                    InvalidArgument);
}

TEST_CASE("wavefront of a genuinely fibered GFQI satisfies its residual bound")
{
    const GFQI s = wiggly_k1();
    const auto w = wavefront(s, 64, 1e-9);
    CHECK(w.points.size() >= 64);
    for (const auto& pt : w.points) {
        CHECK(pt.residual <= 1e-9);
        const auto g = s.gradient(Vector((Vector(2) << pt.q[0], pt.xi[0]).finished()));
        REQUIRE(g);
        CHECK(std::abs((*g)[1]) <= 1e-9);
        CHECK(pt.p[0] == doctest::Approx((*g)[0]).epsilon(1e-12));
    }
}

TEST_CASE("ominus")
{
    const GFQI f1 = from_base_function("cos(6.283185307179586*q1)", 1);
    const GFQI f2 = from_base_function("sin(6.283185307179586*q1)/2", 1);
    const GFQI d = ominus(f1, f2);
    CHECK(d.fiber_dim() == 0);
    CHECK(d.difference_type());
    testsupport::Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        Vector q(1);
        q << rng.uniform(0, 1);
        CHECK(d(q) == doctest::Approx(std::cos(kTwoPi * q[0]) - std::sin(kTwoPi * q[0]) / 2).epsilon(1e-14));
    }

    const GFQI zero = from_expression(fiber_expr("xi1^2 - xi2^2", 1, 2), QuadraticForm::diagonal({1.0, -1.0}), 1.0);
    const GFQI zz = ominus(zero, zero);
    CHECK(zz.fiber_dim() == 4);
    for (int i = 0; i < 50; ++i) {
        const Vector xi = rng.vector(2, -3, 3);
        Vector z(5);
        z << rng.uniform(0, 1), xi, xi;
        CHECK(zz(z) == 0.0);
    }

    CHECK_THROWS_AS(ominus(f1, from_base_function("0", 2)), InvalidArgument);
}

TEST_CASE("ominus quadratic form is block diagonal and nondegenerate")
{
    testsupport::Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto random_form = [&](int k) {
            Matrix a(k, k);
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) a(i, j) = rng.uniform(-1, 1);
            Matrix sym = a + a.transpose();
            for (int i = 0; i < k; ++i) sym(i, i) += (rng.uniform(0, 1) < 0.5 ? -3.0 : 3.0);
            return QuadraticForm(sym);
        };
        const int k1 = static_cast<int>(rng.integer(1, 3));
        const int k2 = static_cast<int>(rng.integer(1, 3));
        const QuadraticForm q1 = random_form(k1);
        const QuadraticForm q2 = random_form(k2);
        GFQI s1(1, q1, 1.0, [q1, k1](const Vector& z) { return q1(z.tail(k1)); }, nullptr, "q1");
        GFQI s2(1, q2, 1.0, [q2, k2](const Vector& z) { return q2(z.tail(k2)); }, nullptr, "q2");
        const GFQI d = ominus(s1, s2);
        CHECK(d.negative_index() == q1.negative_index() + (k2 - q2.negative_index()));

        // Oracle: eigenvalues of the blocks, computed separately.
        Eigen::SelfAdjointEigenSolver<Matrix> e1(q1.matrix()), e2(q2.matrix());
        const double smallest = std::min(e1.eigenvalues().cwiseAbs().minCoeff(), e2.eigenvalues().cwiseAbs().minCoeff());
        CHECK(d.quad().smallest_magnitude() == doctest::Approx(smallest).epsilon(1e-12));
        CHECK(d.quad().matrix().topRightCorner(k1, k2).isZero(0.0));
        CHECK(d.quad().matrix().bottomRightCorner(k2, k2).isApprox(-q2.matrix()));
    }
}

TEST_CASE("stabilization")
{
    const GFQI s = wiggly_k1();
    const auto w = wavefront(s, 48, 1e-10);

    const GFQI plus = stabilize(s, QuadraticForm::diagonal({1.0}));
    CHECK(plus.fiber_dim() == 2);
    CHECK(plus.negative_index() == s.negative_index());
    const auto wp = wavefront(plus, 48, 1e-10);
    CHECK(wp.points.size() == w.points.size());
    CHECK(wavefront_distance(w, wp) <= 1e-9);

    const GFQI minus = stabilize(s, QuadraticForm::diagonal({-1.0}));
    CHECK(minus.negative_index() == s.negative_index() + 1);
    CHECK(wavefront_distance(w, wavefront(minus, 48, 1e-10)) <= 1e-9);

    CHECK_THROWS_AS(stabilize(s, QuadraticForm::diagonal({1e-12})), InvalidArgument);

    // Twice by (1) then (-1) equals once by their direct sum.
    const GFQI twice = stabilize(stabilize(s, QuadraticForm::diagonal({1.0})), QuadraticForm::diagonal({-1.0}));
    const GFQI once = stabilize(s, QuadraticForm::diagonal({1.0, -1.0}));
    CHECK(twice.quad().matrix() == once.quad().matrix());
    testsupport::Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        Vector z(4);
        z << rng.uniform(0, 1), rng.vector(3, -4, 4);
        CHECK(twice(z) == doctest::Approx(once(z)).epsilon(1e-14));
    }
}

TEST_CASE("quadratic at infinity is preserved by stabilization and equivalence moves")
{
    const GFQI s = wiggly_k1();
    CHECK(s.quadratic_at_infinity_defect(1000, 1) <= 1e-9);
    CHECK(stabilize(s, QuadraticForm::diagonal({-2.0})).quadratic_at_infinity_defect(1000, 2) <= 1e-9);
    CHECK(stabilize(stabilize(s, QuadraticForm::diagonal({1.0})), QuadraticForm::diagonal({1.0, -1.0}))
              .quadratic_at_infinity_defect(1000, 3) <= 1e-9);
    Vector v(1);
    v << 0.3;
    CHECK(apply_fiber_diffeo(s, FiberDiffeo::bump_shift(v, 2.0)).quadratic_at_infinity_defect(1000, 4) <= 1e-9);
    CHECK(add_constant(s, 3.0).quadratic_at_infinity_defect(1000, 5) <= 1e-9);
    CHECK(negate(s).quadratic_at_infinity_defect(1000, 6) <= 1e-9);
    CHECK(ominus(s, s).quadratic_at_infinity_defect(1000, 7) <= 1e-9);
}

TEST_CASE("identity move returns a bit-identical GFQI")
{
    const GFQI s = wiggly_k1();
    const GFQI t = apply_fiber_diffeo(s, FiberDiffeo::identity_map());
    CHECK(t.description() == s.description());
    CHECK(t.quad().matrix() == s.quad().matrix());
    CHECK(t.cutoff() == s.cutoff());
    testsupport::Rng rng(9);
    for (int i = 0; i < 500; ++i) {
        Vector z(2);
        z << rng.uniform(-1, 2), rng.uniform(-5, 5);
        CHECK(t(z) == s(z));
        CHECK(*t.gradient(z) == *s.gradient(z));
    }
}

TEST_CASE("add-constant move shifts values exactly and keeps the wavefront")
{
    const GFQI s = wiggly_k1();
    const GFQI t = add_constant(s, 3.0);
    testsupport::Rng rng(10);
    for (int i = 0; i < 200; ++i) {
        Vector z(2);
        z << rng.uniform(0, 1), rng.uniform(-4, 4);
        CHECK(t(z) == s(z) + 3.0);
    }
    CHECK(wavefront_distance(wavefront(s, 32, 1e-10), wavefront(t, 32, 1e-10)) <= 1e-12);
}

TEST_CASE("fiber bump shifts keep the wavefront within 1e-6")
{
    const GFQI s = wiggly_k1();
    const auto w = wavefront(s, 48, 1e-10);
    testsupport::Rng rng(21);
    for (int trial = 0; trial < 4; ++trial) {
        Vector v(1);
        v << rng.uniform(-0.5, 0.5);
        const GFQI t = apply_fiber_diffeo(s, FiberDiffeo::bump_shift(v, 2.0));
        const auto wt = wavefront(t, 48, 1e-10);
        CHECK(wt.points.size() == w.points.size());
        CHECK(wavefront_distance(w, wt) <= 1e-6);
    }
}

TEST_CASE("fiber diffeo that moves far points is refused")
{
    const GFQI s = wiggly_k1();
    Vector v(1);
    v << 0.5;
    CHECK_THROWS_AS(apply_fiber_diffeo(s, FiberDiffeo::bump_shift(v, 4.0)), InvalidArgument);
    FiberDiffeo translate;
    translate.map = [](const Vector&, const Vector& xi) { return Vector(xi.array() + 0.1); };
    CHECK_THROWS_AS(apply_fiber_diffeo(s, translate), InvalidArgument);
    CHECK_THROWS_AS(FiberDiffeo::bump_shift(v, 1.0), InvalidArgument);
}

TEST_CASE("grid GFQI round trip and interpolation")
{
    const GFQI s = wiggly_k1();
    const GridGfqiData data = sample_grid_gfqi(s, {64, 97}, 3.0);
    std::stringstream buf;
    write_grid_gfqi(buf, data);
    const GridGfqiData back = read_grid_gfqi(buf);
    CHECK(back.n == 1);
    CHECK(back.k == 1);
    CHECK(back.resolutions == data.resolutions);
    CHECK(back.extent == data.extent);
    CHECK(back.cutoff == data.cutoff);
    CHECK(back.quad == data.quad);
    CHECK(back.samples == data.samples);

    const GFQI g = from_grid(back);
    CHECK(g.cutoff() == doctest::Approx(2.0 + 2 * 6.0 / 96));
    CHECK(g.quadratic_at_infinity_defect(1000, 8) <= 1e-9);
    testsupport::Rng rng(4);
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        Vector z(2);
        z << rng.uniform(0, 1), rng.uniform(-5, 5);
        worst = std::max(worst, std::abs(g(z) - s(z)));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("grid GFQI reader rejects malformed input")
{
    std::istringstream empty("");
    CHECK_THROWS_AS(read_grid_gfqi(empty), InvalidArgument);
    std::istringstream bad_json("{not json}\n1 2 3");
    CHECK_THROWS_AS(read_grid_gfqi(bad_json), InvalidArgument);
    std::istringstream short_data(
        "{\"format\":\"rigidlab-gfqi-grid\",\"version\":1,\"n\":1,\"k\":0,\"resolutions\":[4],\"Q\":[]}\n1 2 3");
    CHECK_THROWS_AS(read_grid_gfqi(short_data), InvalidArgument);
    std::istringstream bad_token(
        "{\"format\":\"rigidlab-gfqi-grid\",\"version\":1,\"n\":1,\"k\":0,\"resolutions\":[4],\"Q\":[]}\n1 2 x 4");
    CHECK_THROWS_AS(read_grid_gfqi(bad_token), InvalidArgument);
    std::istringstream ok(
        "{\"format\":\"rigidlab-gfqi-grid\",\"version\":1,\"n\":1,\"k\":0,\"resolutions\":[4],\"Q\":[]}\n0 1 0 -1");
    const auto d = read_grid_gfqi(ok);
    CHECK(d.samples.size() == 4);
    const GFQI g = from_grid(d);
    Vector q(1);
    q << 0.25;
    CHECK(g(q) == doctest::Approx(1.0));
}
