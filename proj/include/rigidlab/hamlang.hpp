#pragma once

// A small expression language for Hamiltonians, generating-function cores and
// map components, with exact forward-mode first and second derivatives.
//
//   expr   := term (("+"|"-") term)* ;
//   term   := factor (("*"|"/") factor)* ;
//   factor := base ("^" integer)? ;
//   base   := number | var | func "(" expr ("," expr)* ")" | "(" expr ")" | "-" base ;
//   var    := ("q"|"p"|"xi") integer | "t" ;
//   func   := "sin"|"cos"|"exp"|"abs"|"min"|"max"|"sqrt"|"tanh"|"bump" ;
//
// Note that "-" binds tighter than "^": "-q1^2" is (-q1)^2.

#include "rigidlab/error.hpp"
#include "rigidlab/phase.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rigidlab::hamlang
{

// Variable dimensions of an expression. With momenta the input vector is
// (q_1..q_d, p_1..p_d, xi_1..xi_k); without, it is (q_1..q_d, xi_1..xi_k) and
// p variables are rejected.
struct Dims
{
    int d = 1;
    int k = 0;
    bool momenta = true;

    int input_size() const { return (momenta ? 2 * d : d) + k; }
};

enum class Op : std::uint8_t
{
    number,
    q,
    p,
    xi,
    t,
    neg,
    add,
    sub,
    mul,
    div,
    pow,
    sin,
    cos,
    exp,
    abs,
    min,
    max,
    sqrt,
    tanh,
    bump,
};

struct Node
{
    Op op = Op::number;
    double number = 0.0;
    // 1-based variable index, or the exponent of a pow node.
    int index = 0;
    std::vector<std::shared_ptr<const Node>> args;
};

using NodePtr = std::shared_ptr<const Node>;

class ParseError : public InvalidArgument
{
public:
    enum class Kind
    {
        syntax,
        unknown_identifier,
        arity,
        index_out_of_range,
    };

    ParseError(Kind kind, int line, int column, const std::string& message);

    Kind kind() const { return kind_; }
    int line() const { return line_; }
    int column() const { return column_; }

private:
    Kind kind_;
    int line_;
    int column_;
};

class Expression
{
public:
    struct SecondOrder
    {
        double value = 0.0;
        Vector gradient;
        Matrix hessian;
    };

    const Dims& dims() const { return dims_; }
    const NodePtr& root() const { return root_; }
    Regularity regularity() const { return regularity_; }
    bool uses(Op variable_kind) const;
    // Number of edges on the longest root-to-leaf path.
    int depth() const;

    double evaluate(const Vector& vars, double t = 0.0) const;

    // nullopt at a kink of abs/min/max (argument or tie within 1e-14),
    // unless the expression is declared C^{1,1}, in which case the kink
    // contributes the symmetric one-sided average.
    std::optional<Vector> gradient(const Vector& vars, double t = 0.0) const;

    std::optional<SecondOrder> second_order(const Vector& vars, double t = 0.0) const;

    // Canonical text; parsing it yields a structurally identical tree.
    std::string to_string() const;

    friend Expression parse_expression(std::string_view source, Dims dims, bool declare_c11);

private:
    struct Instr
    {
        Op op;
        double number;
        int slot;
    };

    Expression() = default;
    void compile();

    Dims dims_;
    NodePtr root_;
    Regularity regularity_ = Regularity::smooth;
    std::vector<Instr> tape_;
    std::size_t max_stack_ = 0;

    template <class Algebra>
    typename Algebra::Value run(Algebra& algebra, const Vector& vars, double t) const;
};

// With declare_c11 the author asserts that an abs/min/max expression is
// C^{1,1} (e.g. q1*abs(q1)/2); without it such expressions are Lipschitz.
Expression parse_expression(std::string_view source, Dims dims, bool declare_c11 = false);

bool structurally_equal(const NodePtr& a, const NodePtr& b);

// Wraps a phase-space expression (momenta layout, k = 0) as a field with
// exact gradients and, for smooth expressions, exact Hessians.
ScalarField to_scalar_field(const Expression& e, Box domain, double t = 0.0);

// Shorthand: parse a phase-space expression with d degrees of freedom.
ScalarField field_from_source(std::string_view source, int d, Box domain, bool declare_c11 = false);

// The smooth compactly supported bump profile: 1 for |r| <= 1/2, 0 for
// |r| >= 1, quintic smoothstep between.
double bump_profile(double r);

} // namespace rigidlab::hamlang
