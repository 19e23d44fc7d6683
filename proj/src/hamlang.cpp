#include "rigidlab/hamlang.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

namespace rigidlab::hamlang
{

namespace
{

constexpr int kMaxVars = 10;
constexpr double kKinkTolerance = 1e-14;

// ---------------------------------------------------------------------------
// Scalar algebras for the tape interpreter. Each provides Value, constant,
// variable, add, sub, neg, mul, div, unary (value + first/second derivative
// of a scalar function), average and val.

struct RealAlgebra
{
    using Value = double;
    static constexpr bool derivatives = false;

    Value constant(double c) const { return c; }
    Value variable(double v, int) const { return v; }
    Value add(const Value& a, const Value& b) const { return a + b; }
    Value sub(const Value& a, const Value& b) const { return a - b; }
    Value neg(const Value& a) const { return -a; }
    Value mul(const Value& a, const Value& b) const { return a * b; }
    Value div(const Value& a, const Value& b) const
    {
        if (b == 0.0) {
            throw DomainError("division by zero");
        }
        return a / b;
    }
    Value unary(const Value&, double f, double, double) const { return f; }
    Value average(const Value& a, const Value& b, double value) const
    {
        (void)a;
        (void)b;
        return value;
    }
    static double val(const Value& a) { return a; }
};

struct Jet1
{
    double v = 0.0;
    std::array<double, kMaxVars> d{};
};

struct FirstOrderAlgebra
{
    using Value = Jet1;
    static constexpr bool derivatives = true;
    int n = 0;

    Value constant(double c) const
    {
        Value r;
        r.v = c;
        return r;
    }
    Value variable(double v, int slot) const
    {
        Value r;
        r.v = v;
        r.d[slot] = 1.0;
        return r;
    }
    Value add(const Value& a, const Value& b) const
    {
        Value r;
        r.v = a.v + b.v;
        for (int i = 0; i < n; ++i) r.d[i] = a.d[i] + b.d[i];
        return r;
    }
    Value sub(const Value& a, const Value& b) const
    {
        Value r;
        r.v = a.v - b.v;
        for (int i = 0; i < n; ++i) r.d[i] = a.d[i] - b.d[i];
        return r;
    }
    Value neg(const Value& a) const
    {
        Value r;
        r.v = -a.v;
        for (int i = 0; i < n; ++i) r.d[i] = -a.d[i];
        return r;
    }
    Value mul(const Value& a, const Value& b) const
    {
        Value r;
        r.v = a.v * b.v;
        for (int i = 0; i < n; ++i) r.d[i] = a.d[i] * b.v + b.d[i] * a.v;
        return r;
    }
    Value unary(const Value& a, double f, double f1, double) const
    {
        Value r;
        r.v = f;
        for (int i = 0; i < n; ++i) r.d[i] = f1 * a.d[i];
        return r;
    }
    Value div(const Value& a, const Value& b) const
    {
        if (b.v == 0.0) {
            throw DomainError("division by zero");
        }
        const double inv = 1.0 / b.v;
        return mul(a, unary(b, inv, -inv * inv, 2.0 * inv * inv * inv));
    }
    Value average(const Value& a, const Value& b, double value) const
    {
        Value r;
        r.v = value;
        for (int i = 0; i < n; ++i) r.d[i] = 0.5 * (a.d[i] + b.d[i]);
        return r;
    }
    static double val(const Value& a) { return a.v; }
};

struct Jet2
{
    double v = 0.0;
    std::array<double, kMaxVars> d{};
    std::array<double, kMaxVars * kMaxVars> h{};
};

struct SecondOrderAlgebra
{
    using Value = Jet2;
    static constexpr bool derivatives = true;
    int n = 0;

    static int at(int i, int j) { return i * kMaxVars + j; }

    Value constant(double c) const
    {
        Value r;
        r.v = c;
        return r;
    }
    Value variable(double v, int slot) const
    {
        Value r;
        r.v = v;
        r.d[slot] = 1.0;
        return r;
    }
    Value add(const Value& a, const Value& b) const
    {
        Value r;
        r.v = a.v + b.v;
        for (int i = 0; i < n; ++i) {
            r.d[i] = a.d[i] + b.d[i];
            for (int j = 0; j < n; ++j) r.h[at(i, j)] = a.h[at(i, j)] + b.h[at(i, j)];
        }
        return r;
    }
    Value neg(const Value& a) const
    {
        Value r;
        r.v = -a.v;
        for (int i = 0; i < n; ++i) {
            r.d[i] = -a.d[i];
            for (int j = 0; j < n; ++j) r.h[at(i, j)] = -a.h[at(i, j)];
        }
        return r;
    }
    Value sub(const Value& a, const Value& b) const { return add(a, neg(b)); }
    Value mul(const Value& a, const Value& b) const
    {
        Value r;
        r.v = a.v * b.v;
        for (int i = 0; i < n; ++i) {
            r.d[i] = a.d[i] * b.v + b.d[i] * a.v;
            for (int j = 0; j < n; ++j) {
                r.h[at(i, j)] = a.h[at(i, j)] * b.v + b.h[at(i, j)] * a.v + a.d[i] * b.d[j] +
                                b.d[i] * a.d[j];
            }
        }
        return r;
    }
    Value unary(const Value& a, double f, double f1, double f2) const
    {
        Value r;
        r.v = f;
        for (int i = 0; i < n; ++i) {
            r.d[i] = f1 * a.d[i];
            for (int j = 0; j < n; ++j) r.h[at(i, j)] = f1 * a.h[at(i, j)] + f2 * a.d[i] * a.d[j];
        }
        return r;
    }
    Value div(const Value& a, const Value& b) const
    {
        if (b.v == 0.0) {
            throw DomainError("division by zero");
        }
        const double inv = 1.0 / b.v;
        return mul(a, unary(b, inv, -inv * inv, 2.0 * inv * inv * inv));
    }
    Value average(const Value& a, const Value& b, double value) const
    {
        Value r;
        r.v = value;
        for (int i = 0; i < n; ++i) {
            r.d[i] = 0.5 * (a.d[i] + b.d[i]);
            for (int j = 0; j < n; ++j) r.h[at(i, j)] = 0.5 * (a.h[at(i, j)] + b.h[at(i, j)]);
        }
        return r;
    }
    static double val(const Value& a) { return a.v; }
};

// Quintic smoothstep S(s) = 10 s^3 - 15 s^4 + 6 s^5 and its derivatives.
struct BumpJet
{
    double f;
    double f1;
    double f2;
};

BumpJet bump_jet(double r)
{
    const double ar = std::abs(r);
    if (ar <= 0.5) {
        return {1.0, 0.0, 0.0};
    }
    if (ar >= 1.0) {
        return {0.0, 0.0, 0.0};
    }
    const double s = 2.0 * (1.0 - ar);
    const double f = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    const double ds = 30.0 * s * s * (1.0 - s) * (1.0 - s);
    const double dds = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    const double sign = r > 0.0 ? 1.0 : -1.0;
    return {f, -2.0 * sign * ds, 4.0 * dds};
}

struct Evaluation
{
    bool c11 = false;
    bool kink = false;
};

const char* function_name(Op op)
{
    switch (op) {
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::exp: return "exp";
    case Op::abs: return "abs";
    case Op::min: return "min";
    case Op::max: return "max";
    case Op::sqrt: return "sqrt";
    case Op::tanh: return "tanh";
    case Op::bump: return "bump";
    default: return nullptr;
    }
}

std::optional<Op> function_from_name(std::string_view name)
{
    for (Op op : {Op::sin, Op::cos, Op::exp, Op::abs, Op::min, Op::max, Op::sqrt, Op::tanh, Op::bump}) {
        if (name == function_name(op)) {
            return op;
        }
    }
    return std::nullopt;
}

int function_arity(Op op) { return (op == Op::min || op == Op::max) ? 2 : 1; }

// ---------------------------------------------------------------------------
// Lexer / parser

enum class Tok
{
    number,
    ident,
    plus,
    minus,
    star,
    slash,
    caret,
    lparen,
    rparen,
    comma,
    end,
};

struct Token
{
    Tok kind = Tok::end;
    std::string text;
    int line = 1;
    int column = 1;
};

class Lexer
{
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run()
    {
        std::vector<Token> out;
        while (true) {
            skip_space();
            Token t;
            t.line = line_;
            t.column = col_;
            if (pos_ >= src_.size()) {
                t.kind = Tok::end;
                out.push_back(t);
                return out;
            }
            const char c = src_[pos_];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                t.kind = Tok::number;
                t.text = lex_number(t);
            } else if (std::isalpha(static_cast<unsigned char>(c))) {
                t.kind = Tok::ident;
                while (pos_ < src_.size() && std::isalpha(static_cast<unsigned char>(src_[pos_]))) {
                    advance();
                }
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                    advance();
                }
                t.text = std::string(src_.substr(start_of(t), pos_ - start_of(t)));
            } else {
                switch (c) {
                case '+': t.kind = Tok::plus; break;
                case '-': t.kind = Tok::minus; break;
                case '*': t.kind = Tok::star; break;
                case '/': t.kind = Tok::slash; break;
                case '^': t.kind = Tok::caret; break;
                case '(': t.kind = Tok::lparen; break;
                case ')': t.kind = Tok::rparen; break;
                case ',': t.kind = Tok::comma; break;
                default:
                    throw ParseError(ParseError::Kind::syntax, t.line, t.column,
                                     std::string("unexpected character '") + c + "'");
                }
                t.text = std::string(1, c);
                advance();
            }
            out.push_back(std::move(t));
        }
    }

private:
    std::size_t start_of(const Token& t) const { return token_start_ + 0 * t.line; }

    void skip_space()
    {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) {
            advance();
        }
        token_start_ = pos_;
    }

    void advance()
    {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    std::string lex_number(const Token& t)
    {
        const std::size_t begin = pos_;
        bool digits = false;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
            advance();
            digits = true;
        }
        if (pos_ < src_.size() && src_[pos_] == '.') {
            advance();
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                advance();
                digits = true;
            }
        }
        if (!digits) {
            throw ParseError(ParseError::Kind::syntax, t.line, t.column, "malformed number");
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            advance();
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) {
                advance();
            }
            bool exp_digits = false;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                advance();
                exp_digits = true;
            }
            if (!exp_digits) {
                throw ParseError(ParseError::Kind::syntax, t.line, t.column,
                                 "malformed number exponent");
            }
        }
        return std::string(src_.substr(begin, pos_ - begin));
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t token_start_ = 0;
    int line_ = 1;
    int col_ = 1;
};

class Parser
{
public:
    Parser(std::vector<Token> tokens, Dims dims) : toks_(std::move(tokens)), dims_(dims) {}

    NodePtr parse()
    {
        if (peek().kind == Tok::end) {
            fail(ParseError::Kind::syntax, peek(), "empty expression");
        }
        NodePtr e = expr();
        if (peek().kind != Tok::end) {
            fail(ParseError::Kind::syntax, peek(), "unexpected token '" + peek().text + "'");
        }
        return e;
    }

private:
    [[noreturn]] static void fail(ParseError::Kind kind, const Token& at, const std::string& msg)
    {
        throw ParseError(kind, at.line, at.column, msg);
    }

    const Token& peek() const { return toks_[pos_]; }
    const Token& take() { return toks_[pos_++]; }

    const Token& expect(Tok kind, const char* what)
    {
        if (peek().kind != kind) {
            fail(ParseError::Kind::syntax, peek(),
                 std::string("expected ") + what + ", found '" +
                     (peek().kind == Tok::end ? std::string("end of input") : peek().text) + "'");
        }
        return take();
    }

    static NodePtr make(Op op, std::vector<NodePtr> args = {}, double number = 0.0, int index = 0)
    {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->number = number;
        n->index = index;
        n->args = std::move(args);
        return n;
    }

    NodePtr expr()
    {
        NodePtr lhs = term();
        while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
            const Op op = take().kind == Tok::plus ? Op::add : Op::sub;
            lhs = make(op, {lhs, term()});
        }
        return lhs;
    }

    NodePtr term()
    {
        NodePtr lhs = factor();
        while (peek().kind == Tok::star || peek().kind == Tok::slash) {
            const Op op = take().kind == Tok::star ? Op::mul : Op::div;
            lhs = make(op, {lhs, factor()});
        }
        return lhs;
    }

    NodePtr factor()
    {
        NodePtr b = base();
        if (peek().kind == Tok::caret) {
            take();
            const Token& tok = peek();
            if (tok.kind != Tok::number ||
                tok.text.find_first_not_of("0123456789") != std::string::npos) {
                fail(ParseError::Kind::syntax, tok, "exponent must be a nonnegative integer literal");
            }
            take();
            if (tok.text.size() > 6) {
                fail(ParseError::Kind::syntax, tok, "exponent too large");
            }
            b = make(Op::pow, {b}, 0.0, std::stoi(tok.text));
        }
        return b;
    }

    NodePtr base()
    {
        const Token& tok = peek();
        switch (tok.kind) {
        case Tok::number: {
            take();
            const double v = std::strtod(tok.text.c_str(), nullptr);
            if (!std::isfinite(v)) {
                fail(ParseError::Kind::syntax, tok, "number out of range");
            }
            return make(Op::number, {}, v);
        }
        case Tok::minus:
            take();
            return make(Op::neg, {base()});
        case Tok::lparen: {
            take();
            NodePtr inner = expr();
            expect(Tok::rparen, "')'");
            return inner;
        }
        case Tok::ident:
            return identifier();
        default:
            fail(ParseError::Kind::syntax, tok,
                 tok.kind == Tok::end ? "unexpected end of input"
                                      : "unexpected token '" + tok.text + "'");
        }
    }

    NodePtr identifier()
    {
        const Token tok = take();
        const std::string& s = tok.text;
        const std::size_t split = s.find_first_of("0123456789");
        const std::string letters = s.substr(0, split);
        const std::string digits = split == std::string::npos ? "" : s.substr(split);

        if (digits.empty()) {
            if (letters == "t") {
                return make(Op::t);
            }
            if (auto fn = function_from_name(letters)) {
                return call(*fn, tok);
            }
            fail(ParseError::Kind::unknown_identifier, tok, "unknown identifier '" + s + "'");
        }

        Op kind;
        int limit;
        if (letters == "q") {
            kind = Op::q;
            limit = dims_.d;
        } else if (letters == "p") {
            if (!dims_.momenta) {
                fail(ParseError::Kind::unknown_identifier, tok,
                     "momentum variable '" + s + "' is not available in this context");
            }
            kind = Op::p;
            limit = dims_.d;
        } else if (letters == "xi") {
            kind = Op::xi;
            limit = dims_.k;
        } else {
            fail(ParseError::Kind::unknown_identifier, tok, "unknown identifier '" + s + "'");
        }
        if (digits.size() > 6) {
            fail(ParseError::Kind::index_out_of_range, tok, "variable index out of range: " + s);
        }
        const int index = std::stoi(digits);
        if (index < 1 || index > limit) {
            fail(ParseError::Kind::index_out_of_range, tok, "variable index out of range: " + s);
        }
        return make(kind, {}, 0.0, index);
    }

    NodePtr call(Op fn, const Token& name)
    {
        expect(Tok::lparen, "'(' after function name");
        std::vector<NodePtr> args{expr()};
        while (peek().kind == Tok::comma) {
            take();
            args.push_back(expr());
        }
        expect(Tok::rparen, "')'");
        if (static_cast<int>(args.size()) != function_arity(fn)) {
            fail(ParseError::Kind::arity, name,
                 std::string("arity mismatch: ") + function_name(fn) + " takes " +
                     std::to_string(function_arity(fn)) + " argument(s), got " +
                     std::to_string(args.size()));
        }
        return make(fn, std::move(args));
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    Dims dims_;
};

// ---------------------------------------------------------------------------
// Printing

int precedence(const Node& n)
{
    switch (n.op) {
    case Op::add:
    case Op::sub: return 1;
    case Op::mul:
    case Op::div: return 2;
    case Op::pow: return 3;
    default: return 4;
    }
}

std::string format_number(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void print(const Node& n, std::string& out);

void print_wrapped(const Node& n, bool wrap, std::string& out)
{
    if (wrap) out += '(';
    print(n, out);
    if (wrap) out += ')';
}

void print(const Node& n, std::string& out)
{
    switch (n.op) {
    case Op::number: out += format_number(n.number); return;
    case Op::q: out += "q" + std::to_string(n.index); return;
    case Op::p: out += "p" + std::to_string(n.index); return;
    case Op::xi: out += "xi" + std::to_string(n.index); return;
    case Op::t: out += "t"; return;
    case Op::neg:
        out += '-';
        print_wrapped(*n.args[0], precedence(*n.args[0]) < 4, out);
        return;
    case Op::add:
    case Op::sub:
        print(*n.args[0], out);
        out += n.op == Op::add ? " + " : " - ";
        print_wrapped(*n.args[1], precedence(*n.args[1]) <= 1, out);
        return;
    case Op::mul:
    case Op::div:
        print_wrapped(*n.args[0], precedence(*n.args[0]) < 2, out);
        out += n.op == Op::mul ? "*" : "/";
        print_wrapped(*n.args[1], precedence(*n.args[1]) <= 2, out);
        return;
    case Op::pow:
        print_wrapped(*n.args[0], precedence(*n.args[0]) < 4, out);
        out += "^" + std::to_string(n.index);
        return;
    default:
        out += function_name(n.op);
        out += '(';
        for (std::size_t i = 0; i < n.args.size(); ++i) {
            if (i > 0) out += ", ";
            print(*n.args[i], out);
        }
        out += ')';
        return;
    }
}

bool contains_op(const Node& n, Op op)
{
    if (n.op == op) return true;
    for (const auto& a : n.args) {
        if (contains_op(*a, op)) return true;
    }
    return false;
}

int node_depth(const Node& n)
{
    int best = 0;
    for (const auto& a : n.args) {
        best = std::max(best, 1 + node_depth(*a));
    }
    return best;
}

} // namespace

// ---------------------------------------------------------------------------

ParseError::ParseError(Kind kind, int line, int column, const std::string& message)
    : InvalidArgument("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                      message),
      kind_(kind), line_(line), column_(column)
{
}

Expression parse_expression(std::string_view source, Dims dims, bool declare_c11)
{
    if (dims.d < 1 || dims.k < 0) {
        throw InvalidArgument("parse_expression: require d >= 1 and k >= 0");
    }
    Lexer lexer(source);
    Parser parser(lexer.run(), dims);
    Expression e;
    e.dims_ = dims;
    e.root_ = parser.parse();
    const bool kinked = contains_op(*e.root_, Op::abs) || contains_op(*e.root_, Op::min) ||
                        contains_op(*e.root_, Op::max);
    e.regularity_ = kinked ? (declare_c11 ? Regularity::c11 : Regularity::lipschitz)
                           : Regularity::smooth;
    e.compile();
    return e;
}

void Expression::compile()
{
    tape_.clear();
    std::size_t depth = 0;
    max_stack_ = 0;
    const int p_offset = dims_.d;
    const int xi_offset = dims_.momenta ? 2 * dims_.d : dims_.d;
    std::function<void(const Node&)> emit = [&](const Node& n) {
        for (const auto& a : n.args) {
            emit(*a);
        }
        int slot = n.index;
        switch (n.op) {
        case Op::q: slot = n.index - 1; break;
        case Op::p: slot = p_offset + n.index - 1; break;
        case Op::xi: slot = xi_offset + n.index - 1; break;
        default: break;
        }
        tape_.push_back({n.op, n.number, slot});
        depth = depth - n.args.size() + 1;
        max_stack_ = std::max(max_stack_, depth);
    };
    emit(*root_);
}

bool Expression::uses(Op variable_kind) const { return contains_op(*root_, variable_kind); }

int Expression::depth() const { return node_depth(*root_); }

std::string Expression::to_string() const
{
    std::string out;
    print(*root_, out);
    return out;
}

template <class Algebra>
typename Algebra::Value Expression::run(Algebra& alg, const Vector& vars, double t) const
{
    if (vars.size() != dims_.input_size()) {
        throw InvalidArgument("Expression: expected " + std::to_string(dims_.input_size()) +
                              " variables, got " + std::to_string(vars.size()));
    }
    using Value = typename Algebra::Value;
    Evaluation state;
    state.c11 = regularity_ == Regularity::c11;

    std::vector<Value> st;
    st.reserve(max_stack_);
    auto pop = [&st]() {
        Value v = std::move(st.back());
        st.pop_back();
        return v;
    };

    for (const Instr& ins : tape_) {
        switch (ins.op) {
        case Op::number: st.push_back(alg.constant(ins.number)); break;
        case Op::q:
        case Op::p:
        case Op::xi: st.push_back(alg.variable(vars[ins.slot], ins.slot)); break;
        case Op::t: st.push_back(alg.constant(t)); break;
        case Op::neg: st.back() = alg.neg(st.back()); break;
        case Op::add: {
            Value b = pop();
            st.back() = alg.add(st.back(), b);
            break;
        }
        case Op::sub: {
            Value b = pop();
            st.back() = alg.sub(st.back(), b);
            break;
        }
        case Op::mul: {
            Value b = pop();
            st.back() = alg.mul(st.back(), b);
            break;
        }
        case Op::div: {
            Value b = pop();
            st.back() = alg.div(st.back(), b);
            break;
        }
        case Op::pow: {
            const int k = ins.slot;
            const double x = Algebra::val(st.back());
            if (k == 0) {
                st.back() = alg.constant(1.0);
            } else {
                const double f = std::pow(x, k);
                const double f1 = k * std::pow(x, k - 1);
                const double f2 = k >= 2 ? k * (k - 1) * std::pow(x, k - 2) : 0.0;
                st.back() = alg.unary(st.back(), f, f1, f2);
            }
            break;
        }
        case Op::sin: {
            const double x = Algebra::val(st.back());
            st.back() = alg.unary(st.back(), std::sin(x), std::cos(x), -std::sin(x));
            break;
        }
        case Op::cos: {
            const double x = Algebra::val(st.back());
            st.back() = alg.unary(st.back(), std::cos(x), -std::sin(x), -std::cos(x));
            break;
        }
        case Op::exp: {
            const double e = std::exp(Algebra::val(st.back()));
            st.back() = alg.unary(st.back(), e, e, e);
            break;
        }
        case Op::tanh: {
            const double th = std::tanh(Algebra::val(st.back()));
            const double s = 1.0 - th * th;
            st.back() = alg.unary(st.back(), th, s, -2.0 * th * s);
            break;
        }
        case Op::sqrt: {
            const double x = Algebra::val(st.back());
            if (x < 0.0) {
                throw DomainError("sqrt of a negative number");
            }
            if (Algebra::derivatives && x == 0.0) {
                throw DomainError("sqrt is not differentiable at 0");
            }
            const double r = std::sqrt(x);
            const double f1 = x > 0.0 ? 0.5 / r : 0.0;
            const double f2 = x > 0.0 ? -0.25 / (r * x) : 0.0;
            st.back() = alg.unary(st.back(), r, f1, f2);
            break;
        }
        case Op::bump: {
            const BumpJet b = bump_jet(Algebra::val(st.back()));
            st.back() = alg.unary(st.back(), b.f, b.f1, b.f2);
            break;
        }
        case Op::abs: {
            const double x = Algebra::val(st.back());
            if (Algebra::derivatives && std::abs(x) <= kKinkTolerance) {
                if (!state.c11) {
                    state.kink = true;
                }
                st.back() = alg.unary(st.back(), std::abs(x), 0.0, 0.0);
            } else {
                st.back() = alg.unary(st.back(), std::abs(x), x > 0.0 ? 1.0 : -1.0, 0.0);
            }
            break;
        }
        case Op::min:
        case Op::max: {
            Value b = pop();
            Value& a = st.back();
            const double av = Algebra::val(a);
            const double bv = Algebra::val(b);
            const bool is_min = ins.op == Op::min;
            if (Algebra::derivatives && std::abs(av - bv) <= kKinkTolerance) {
                if (!state.c11) {
                    state.kink = true;
                }
                a = alg.average(a, b, is_min ? std::min(av, bv) : std::max(av, bv));
            } else if ((av < bv) != is_min) {
                a = std::move(b);
            }
            break;
        }
        }
    }
    Value result = pop();
    if (!std::isfinite(Algebra::val(result))) {
        throw DomainError("expression evaluation overflowed");
    }
    if (state.kink) {
        throw DifferentiationError("kink");
    }
    return result;
}

double Expression::evaluate(const Vector& vars, double t) const
{
    RealAlgebra alg;
    return run(alg, vars, t);
}

std::optional<Vector> Expression::gradient(const Vector& vars, double t) const
{
    const int n = dims_.input_size();
    if (n > kMaxVars) {
        throw InvalidArgument("Expression: too many variables for forward-mode differentiation");
    }
    FirstOrderAlgebra alg;
    alg.n = n;
    Jet1 r;
    try {
        r = run(alg, vars, t);
    } catch (const DifferentiationError&) {
        return std::nullopt;
    }
    Vector g(n);
    for (int i = 0; i < n; ++i) {
        g[i] = r.d[i];
    }
    if (!g.allFinite()) {
        throw DomainError("expression derivative overflowed");
    }
    return g;
}

std::optional<Expression::SecondOrder> Expression::second_order(const Vector& vars, double t) const
{
    const int n = dims_.input_size();
    if (n > kMaxVars) {
        throw InvalidArgument("Expression: too many variables for forward-mode differentiation");
    }
    SecondOrderAlgebra alg;
    alg.n = n;
    Jet2 r;
    try {
        r = run(alg, vars, t);
    } catch (const DifferentiationError&) {
        return std::nullopt;
    }
    SecondOrder out;
    out.value = r.v;
    out.gradient.resize(n);
    out.hessian.resize(n, n);
    for (int i = 0; i < n; ++i) {
        out.gradient[i] = r.d[i];
        for (int j = 0; j < n; ++j) {
            out.hessian(i, j) = r.h[SecondOrderAlgebra::at(i, j)];
        }
    }
    return out;
}

bool structurally_equal(const NodePtr& a, const NodePtr& b)
{
    if (a->op != b->op || a->index != b->index || a->args.size() != b->args.size()) {
        return false;
    }
    if (a->op == Op::number && !(a->number == b->number)) {
        return false;
    }
    for (std::size_t i = 0; i < a->args.size(); ++i) {
        if (!structurally_equal(a->args[i], b->args[i])) {
            return false;
        }
    }
    return true;
}

ScalarField to_scalar_field(const Expression& e, Box domain, double t)
{
    if (!e.dims().momenta || e.dims().k != 0) {
        throw InvalidArgument("to_scalar_field: expression must be a phase-space expression (k = 0)");
    }
    if (domain.dim() != 2 * e.dims().d) {
        throw InvalidArgument("to_scalar_field: domain dimension does not match 2d");
    }
    auto value = [e, t](const Vector& x) { return e.evaluate(x, t); };
    auto gradient = [e, t](const Vector& x) { return e.gradient(x, t); };
    ScalarField::HessianFn hessian;
    if (e.regularity() == Regularity::smooth) {
        hessian = [e, t](const Vector& x) -> std::optional<Matrix> {
            auto so = e.second_order(x, t);
            if (!so) {
                return std::nullopt;
            }
            return so->hessian;
        };
    }
    return ScalarField(std::move(domain), value, gradient, hessian, e.regularity());
}

ScalarField field_from_source(std::string_view source, int d, Box domain, bool declare_c11)
{
    return to_scalar_field(parse_expression(source, Dims{d, 0, true}, declare_c11), std::move(domain));
}

double bump_profile(double r) { return bump_jet(r).f; }

} // namespace rigidlab::hamlang
