#include "rigidlab/hamlang.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <string>

using namespace rigidlab;
using namespace rigidlab::hamlang;
using testsupport::Rng;

namespace
{

Vector vec(std::initializer_list<double> xs)
{
    Vector v(static_cast<Eigen::Index>(xs.size()));
    int i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

const Dims kPhase1{1, 0, true};

ParseError::Kind parse_error_kind(const std::string& src, Dims dims)
{
    try {
        parse_expression(src, dims);
    } catch (const ParseError& e) {
        return e.kind();
    }
    FAIL("expected a parse error for " << src);
    return ParseError::Kind::syntax;
}

// Random source text over q1, q2, p1, p2, xi1, t with random spacing.
std::string random_source(Rng& rng, int depth)
{
    const int choice = depth <= 0 ? rng.integer(0, 2) : rng.integer(0, 9);
    auto ws = [&]() { return rng.integer(0, 3) == 0 ? std::string(" ") : std::string(); };
    switch (choice) {
    case 0: {
        const char* vars[] = {"q1", "q2", "p1", "p2", "xi1", "t"};
        return vars[rng.integer(0, 5)];
    }
    case 1: return std::to_string(rng.integer(0, 20));
    case 2: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", rng.uniform(0.0, 5.0));
        return buf;
    }
    case 3: return random_source(rng, depth - 1) + ws() + "+" + ws() + random_source(rng, depth - 1);
    case 4: return random_source(rng, depth - 1) + "-" + ws() + random_source(rng, depth - 1);
    case 5: return random_source(rng, depth - 1) + "*" + random_source(rng, depth - 1);
    case 6: return "(" + random_source(rng, depth - 1) + ")/(" + random_source(rng, depth - 1) + ")";
    case 7: return "(" + random_source(rng, depth - 1) + ")^" + std::to_string(rng.integer(0, 4));
    case 8: return "-" + ws() + "(" + random_source(rng, depth - 1) + ")";
    default: {
        const char* fns[] = {"sin", "cos", "exp", "abs", "sqrt", "tanh", "bump"};
        if (rng.integer(0, 4) == 0) {
            return std::string(rng.integer(0, 1) ? "min" : "max") + "(" + random_source(rng, depth - 1) +
                   "," + ws() + random_source(rng, depth - 1) + ")";
        }
        return std::string(fns[rng.integer(0, 6)]) + "(" + random_source(rng, depth - 1) + ")";
    }
    }
}

} // namespace

TEST_CASE("parse examples")
{
    const Expression e = parse_expression("p1^2/2 + cos(q1)", kPhase1);
    CHECK(e.depth() == 3);
    CHECK(e.regularity() == Regularity::smooth);
    CHECK(parse_expression("max(q1, p1)", kPhase1).regularity() == Regularity::lipschitz);
    CHECK(parse_expression("q1*abs(q1)/2", kPhase1, true).regularity() == Regularity::c11);
    CHECK(parse_expression("q1*p1", kPhase1, true).regularity() == Regularity::smooth);
    try {
        parse_expression("q3", Dims{2, 0, true});
        FAIL("expected an error");
    } catch (const ParseError& err) {
        CHECK(err.kind() == ParseError::Kind::index_out_of_range);
        CHECK(std::string(err.what()).find("variable index out of range") != std::string::npos);
    }
}

TEST_CASE("parse errors carry kind and position")
{
    CHECK(parse_error_kind("foo(q1)", kPhase1) == ParseError::Kind::unknown_identifier);
    CHECK(parse_error_kind("min(q1)", kPhase1) == ParseError::Kind::arity);
    CHECK(parse_error_kind("sin(q1, p1)", kPhase1) == ParseError::Kind::arity);
    CHECK(parse_error_kind("xi1", kPhase1) == ParseError::Kind::index_out_of_range);
    CHECK(parse_error_kind("q0", kPhase1) == ParseError::Kind::index_out_of_range);
    CHECK(parse_error_kind("p1", Dims{1, 1, false}) == ParseError::Kind::unknown_identifier);
    CHECK(parse_error_kind("q1 +", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("q1^2.5", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("q1^-2", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("0x10", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("1_000", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("(q1", kPhase1) == ParseError::Kind::syntax);
    CHECK(parse_error_kind("Sin(q1)", kPhase1) == ParseError::Kind::unknown_identifier);
    try {
        parse_expression("q1 +\n  * p1", kPhase1);
        FAIL("expected an error");
    } catch (const ParseError& err) {
        CHECK(err.line() == 2);
        CHECK(err.column() == 3);
    }
}

TEST_CASE("unary minus binds tighter than power")
{
    const Expression e = parse_expression("-q1^2", kPhase1);
    CHECK(e.evaluate(vec({3.0, 0.0})) == 9.0);
    const Expression f = parse_expression("-(q1^2)", kPhase1);
    CHECK(f.evaluate(vec({3.0, 0.0})) == -9.0);
}

TEST_CASE("evaluation examples")
{
    CHECK(parse_expression("p1^2/2 + cos(q1)", kPhase1).evaluate(vec({0.0, 1.0})) == 1.5);
    CHECK(parse_expression("0", kPhase1).evaluate(vec({4.0, -2.0})) == 0.0);
    CHECK(parse_expression("abs(q1)", kPhase1).evaluate(vec({-2.0, 0.0})) == 2.0);
    CHECK(parse_expression("2.5e-1*t", kPhase1).evaluate(vec({0.0, 0.0}), 4.0) == 1.0);
    CHECK(parse_expression("min(q1, p1) + max(q1, p1)", kPhase1).evaluate(vec({2.0, -1.0})) == 1.0);
    CHECK_THROWS_AS(parse_expression("sqrt(q1)", kPhase1).evaluate(vec({-1.0, 0.0})), DomainError);
    CHECK_THROWS_AS(parse_expression("exp(q1)", kPhase1).evaluate(vec({1000.0, 0.0})), DomainError);
    CHECK_THROWS_AS(parse_expression("1/q1", kPhase1).evaluate(vec({0.0, 0.0})), DomainError);
    CHECK_THROWS_AS(parse_expression("q1", kPhase1).evaluate(vec({0.0})), InvalidArgument);
}

TEST_CASE("variable layout with fibers")
{
    const Expression s = parse_expression("xi1^2 - xi2^2 + q1", Dims{1, 2, false});
    CHECK(s.dims().input_size() == 3);
    CHECK(s.evaluate(vec({0.5, 2.0, 1.0})) == 3.5);
    const auto g = s.gradient(vec({0.5, 2.0, 1.0}));
    REQUIRE(g);
    CHECK((*g - vec({1.0, 4.0, -2.0})).norm() == 0.0);
    const Expression m = parse_expression("p1*xi1", Dims{1, 1, true});
    CHECK(m.evaluate(vec({0.0, 2.0, 3.0})) == 6.0);
}

TEST_CASE("gradient examples")
{
    auto g = parse_expression("q1*p1", kPhase1).gradient(vec({2.0, 3.0}));
    REQUIRE(g);
    CHECK((*g - vec({3.0, 2.0})).norm() == 0.0);
    CHECK_FALSE(parse_expression("abs(q1)", kPhase1).gradient(vec({0.0, 1.0})));
    g = parse_expression("p1^2/2 + cos(q1)", kPhase1).gradient(vec({0.0, 1.0}));
    REQUIRE(g);
    CHECK((*g - vec({0.0, 1.0})).norm() == 0.0);
    CHECK_THROWS_AS(parse_expression("sqrt(q1)", kPhase1).gradient(vec({0.0, 1.0})), DomainError);
}

TEST_CASE("kink detection is sound")
{
    const Expression e = parse_expression("abs(q1 - p1)", kPhase1);
    CHECK_FALSE(e.gradient(vec({0.3, 0.3})));
    CHECK_FALSE(e.gradient(vec({0.3, 0.3 + 5e-15})));
    CHECK(e.gradient(vec({0.3, 0.3 + 1e-12})));
    const Expression m = parse_expression("max(q1, p1)", kPhase1);
    CHECK_FALSE(m.gradient(vec({1.0, 1.0})));
    const auto g = m.gradient(vec({1.0, 0.5}));
    REQUIRE(g);
    CHECK((*g - vec({1.0, 0.0})).norm() == 0.0);
    const Expression lo = parse_expression("min(q1, p1)", kPhase1);
    CHECK((*lo.gradient(vec({1.0, 0.5})) - vec({0.0, 1.0})).norm() == 0.0);

    // Declared C^{1,1}: the kink contributes the symmetric derivative.
    const Expression c11 = parse_expression("q1*abs(q1)/2", kPhase1, true);
    const auto gc = c11.gradient(vec({0.0, 0.0}));
    REQUIRE(gc);
    CHECK(gc->norm() == 0.0);
}

TEST_CASE("canonical printing round-trips")
{
    Rng rng(99);
    const Dims dims{2, 1, true};
    for (int n = 0; n < 500; ++n) {
        const std::string src = random_source(rng, rng.integer(0, 5));
        const Expression a = parse_expression(src, dims);
        const std::string printed = a.to_string();
        const Expression b = parse_expression(printed, dims);
        CHECK_MESSAGE(structurally_equal(a.root(), b.root()), src << " -> " << printed);
        CHECK(b.to_string() == printed);
    }
    CHECK(parse_expression("-q1^2", kPhase1).to_string() == "-q1^2");
    CHECK(parse_expression("-(q1^2)", kPhase1).to_string() == "-(q1^2)");
    CHECK(parse_expression("q1 - (p1 - 1)", kPhase1).to_string() == "q1 - (p1 - 1)");
    CHECK(parse_expression("(q1 - p1) - 1", kPhase1).to_string() == "q1 - p1 - 1");
    CHECK(parse_expression("q1/(p1*2)", kPhase1).to_string() == "q1/(p1*2)");
}

TEST_CASE("gradients agree with central differences on smooth catalog expressions")
{
    const char* sources[] = {
        "p1^2/2 + cos(q1)",
        "(q1^2 + p1^2)/2",
        "p1^2/2 + cos(q1)*bump(p1/4)",
        "0.1*cos(6.283185307179586*q1)*bump(p1/4)",
        "q1*bump(q1/3)*bump(p1/3)",
        "exp(-q1^2)*tanh(p1) + sqrt(1 + q1^2*p1^2)",
        "sin(q1)/(2 + cos(p1))",
    };
    Rng rng(17);
    for (const char* src : sources) {
        const Expression e = parse_expression(src, kPhase1);
        for (int n = 0; n < 1000; ++n) {
            const Vector x = rng.vector(2, -3.5, 3.5);
            const auto g = e.gradient(x);
            REQUIRE(g);
            const Vector fd = fd_gradient([&](const Vector& y) { return e.evaluate(y); }, x);
            CHECK_MESSAGE((*g - fd).norm() <= 1e-7 * std::max(1.0, g->norm()), src);
        }
    }
}

TEST_CASE("second-order jets agree with differentiated gradients")
{
    const char* sources[] = {"p1^2*q2/2 + cos(q1*p2)", "bump(q1/2)*exp(p1)*sin(q2 - p2)",
                             "sqrt(2 + q1^2)/(3 + tanh(p2))"};
    Rng rng(23);
    for (const char* src : sources) {
        const Expression e = parse_expression(src, Dims{2, 0, true});
        for (int n = 0; n < 50; ++n) {
            const Vector x = rng.vector(4, -1.8, 1.8);
            const auto so = e.second_order(x);
            REQUIRE(so);
            CHECK(so->value == doctest::Approx(e.evaluate(x)).epsilon(1e-14));
            CHECK((so->gradient - *e.gradient(x)).norm() <= 1e-14 * std::max(1.0, so->gradient.norm()));
            const Matrix fd = fd_hessian_from_gradient([&](const Vector& y) { return *e.gradient(y); }, x);
            CHECK((so->hessian - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
        }
    }
}

TEST_CASE("bump profile")
{
    CHECK(bump_profile(0.0) == 1.0);
    CHECK(bump_profile(0.5) == 1.0);
    CHECK(bump_profile(-0.5) == 1.0);
    CHECK(bump_profile(1.0) == 0.0);
    CHECK(bump_profile(2.0) == 0.0);
    CHECK(bump_profile(0.75) == doctest::Approx(0.5));
    // Monotone on [1/2, 1] and symmetric.
    double prev = 1.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = 0.5 + 0.005 * i;
        CHECK(bump_profile(r) <= prev);
        CHECK(bump_profile(-r) == bump_profile(r));
        prev = bump_profile(r);
    }
    // Maximal slope is 15/8 * 2 = 3.75 at r = 3/4.
    const Expression b = parse_expression("bump(q1)", kPhase1);
    CHECK((*b.gradient(vec({0.75, 0.0})))[0] == doctest::Approx(-3.75));
    CHECK(std::abs((*b.gradient(vec({-0.75, 0.0})))[0] - 3.75) <= 1e-12);
}

TEST_CASE("expression fields")
{
    const ScalarField H = field_from_source("p1^2/2 + cos(q1)", 1, Box::cube(2, -4, 4));
    CHECK(H.gradient_mode() == GradientMode::exact);
    CHECK(H.has_exact_hessian());
    const auto h = H.hessian(vec({0.0, 1.0}));
    REQUIRE(h);
    CHECK((*h - (Matrix(2, 2) << -1, 0, 0, 1).finished()).norm() <= 1e-15);
    const ScalarField K = field_from_source("abs(q1)", 1, Box::cube(2, -4, 4));
    CHECK(K.regularity() == Regularity::lipschitz);
    CHECK_FALSE(K.supports_second_order());
    CHECK_THROWS_AS(H(vec({5.0, 0.0})), DomainError);
}
