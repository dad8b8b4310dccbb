#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "errors.hpp"

namespace multihom {

// Arithmetic expressions over named variables, used for scale functions of
// eps, flux coefficients over cell variables, and macroscale data.
//
// Grammar (no implicit multiplication, '^' right-associative):
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := base ('^' factor)?
//   base   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' base
//
// Built-in functions: sqrt, exp, ln, sin, cos. Built-in constant: pi.

enum class UnaryFn { Neg, Sqrt, Exp, Ln, Sin, Cos };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

namespace detail {

struct ExprNode;
using NodePtr = std::shared_ptr<const ExprNode>;

struct Const { double value; };
struct Var { std::string name; };
struct Unary { UnaryFn fn; NodePtr arg; };
struct Binary { BinaryOp op; NodePtr lhs, rhs; };

struct ExprNode {
    std::variant<Const, Var, Unary, Binary> v;
};

inline NodePtr make_node(std::variant<Const, Var, Unary, Binary> v) {
    return std::make_shared<const ExprNode>(ExprNode{std::move(v)});
}

inline const char* unary_name(UnaryFn fn) {
    switch (fn) {
        case UnaryFn::Neg: return "-";
        case UnaryFn::Sqrt: return "sqrt";
        case UnaryFn::Exp: return "exp";
        case UnaryFn::Ln: return "ln";
        case UnaryFn::Sin: return "sin";
        case UnaryFn::Cos: return "cos";
    }
    return "?";
}

inline std::optional<UnaryFn> builtin_function(std::string_view name) {
    if (name == "sqrt") return UnaryFn::Sqrt;
    if (name == "exp") return UnaryFn::Exp;
    if (name == "ln") return UnaryFn::Ln;
    if (name == "sin") return UnaryFn::Sin;
    if (name == "cos") return UnaryFn::Cos;
    return std::nullopt;
}

inline double apply_unary(UnaryFn fn, double x) {
    switch (fn) {
        case UnaryFn::Neg: return -x;
        case UnaryFn::Sqrt:
            if (x < 0.0) throw DomainError("sqrt of negative value");
            return std::sqrt(x);
        case UnaryFn::Exp: return std::exp(x);
        case UnaryFn::Ln:
            if (x <= 0.0) throw DomainError("ln of nonpositive value");
            return std::log(x);
        case UnaryFn::Sin: return std::sin(x);
        case UnaryFn::Cos: return std::cos(x);
    }
    throw DomainError("unknown unary function");
}

inline double apply_binary(BinaryOp op, double a, double b) {
    switch (op) {
        case BinaryOp::Add: return a + b;
        case BinaryOp::Sub: return a - b;
        case BinaryOp::Mul: return a * b;
        case BinaryOp::Div:
            if (b == 0.0) throw DomainError("division by zero");
            return a / b;
        case BinaryOp::Pow: {
            double r = std::pow(a, b);
            if (!std::isfinite(r))
                throw DomainError("power produced a non-finite value");
            return r;
        }
    }
    throw DomainError("unknown binary operation");
}

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace detail

using ExprEnv = std::map<std::string, double>;

/// Immutable parsed expression. Copies share structure.
class Expr {
public:
    Expr() = default;

    static Expr parse(std::string_view text);

    /// Parse and additionally require every variable to come from `allowed`.
    static Expr parse(std::string_view text, const std::set<std::string>& allowed);

    static Expr constant(double v) { return Expr(detail::make_node(detail::Const{v})); }

    bool empty() const { return !root_; }

    double eval(const ExprEnv& env) const { return eval_node(*root(), env); }

    /// Canonical fully parenthesized rendering; parse(str()) rebuilds an
    /// equivalent tree.
    std::string str() const { return print_node(*root()); }

    /// Sorted list of distinct variable names in the tree.
    std::vector<std::string> variables() const {
        std::set<std::string> names;
        collect_vars(*root(), names);
        return {names.begin(), names.end()};
    }

    /// The expression multiplied with itself (shares subtrees).
    Expr squared() const {
        return Expr(detail::make_node(detail::Binary{BinaryOp::Mul, root_, root_}));
    }

    static Expr combine(BinaryOp op, const Expr& a, const Expr& b) {
        return Expr(detail::make_node(detail::Binary{op, a.root_, b.root_}));
    }

    static Expr apply(UnaryFn fn, const Expr& a) {
        return Expr(detail::make_node(detail::Unary{fn, a.root_}));
    }

    /// a^k for integer k >= 1, built as an explicit power node.
    static Expr pow_int(const Expr& a, int k) {
        return combine(BinaryOp::Pow, a, constant(static_cast<double>(k)));
    }

    const detail::ExprNode* root() const {
        if (!root_) throw Error("empty expression");
        return root_.get();
    }

private:
    explicit Expr(detail::NodePtr r) : root_(std::move(r)) {}

    static double eval_node(const detail::ExprNode& n, const ExprEnv& env) {
        using namespace detail;
        if (auto* c = std::get_if<Const>(&n.v)) return c->value;
        if (auto* var = std::get_if<Var>(&n.v)) {
            auto it = env.find(var->name);
            if (it == env.end())
                throw MissingBinding("no value bound to variable '" + var->name + "'");
            return it->second;
        }
        if (auto* u = std::get_if<Unary>(&n.v))
            return apply_unary(u->fn, eval_node(*u->arg, env));
        auto& b = std::get<Binary>(n.v);
        double lhs = eval_node(*b.lhs, env);
        double rhs = eval_node(*b.rhs, env);
        return apply_binary(b.op, lhs, rhs);
    }

    static std::string print_node(const detail::ExprNode& n) {
        using namespace detail;
        if (auto* c = std::get_if<Const>(&n.v)) return format_double(c->value);
        if (auto* var = std::get_if<Var>(&n.v)) return var->name;
        if (auto* u = std::get_if<Unary>(&n.v)) {
            if (u->fn == UnaryFn::Neg) return "(-" + print_node(*u->arg) + ")";
            return std::string(unary_name(u->fn)) + "(" + print_node(*u->arg) + ")";
        }
        auto& b = std::get<Binary>(n.v);
        const char* op = "?";
        switch (b.op) {
            case BinaryOp::Add: op = "+"; break;
            case BinaryOp::Sub: op = "-"; break;
            case BinaryOp::Mul: op = "*"; break;
            case BinaryOp::Div: op = "/"; break;
            case BinaryOp::Pow: op = "^"; break;
        }
        return "(" + print_node(*b.lhs) + op + print_node(*b.rhs) + ")";
    }

    static void collect_vars(const detail::ExprNode& n, std::set<std::string>& out) {
        using namespace detail;
        if (auto* var = std::get_if<Var>(&n.v)) {
            out.insert(var->name);
            return;
        }
        if (auto* u = std::get_if<Unary>(&n.v)) {
            collect_vars(*u->arg, out);
            return;
        }
        if (auto* b = std::get_if<Binary>(&n.v)) {
            collect_vars(*b->lhs, out);
            collect_vars(*b->rhs, out);
        }
    }

    detail::NodePtr root_;

    friend class ExprParser;
};

class ExprParser {
public:
    explicit ExprParser(std::string_view text) : text_(text) {}

    Expr run() {
        auto root = parse_expr();
        skip_ws();
        if (pos_ != text_.size())
            throw SyntaxError("unexpected trailing input at position " +
                                  std::to_string(pos_) + ", expected end of expression",
                              pos_);
        return Expr(std::move(root));
    }

private:
    using NodePtr = detail::NodePtr;

    NodePtr parse_expr() {
        auto lhs = parse_term();
        while (true) {
            skip_ws();
            if (accept('+'))
                lhs = detail::make_node(detail::Binary{BinaryOp::Add, lhs, parse_term()});
            else if (accept('-'))
                lhs = detail::make_node(detail::Binary{BinaryOp::Sub, lhs, parse_term()});
            else
                return lhs;
        }
    }

    NodePtr parse_term() {
        auto lhs = parse_factor();
        while (true) {
            skip_ws();
            if (accept('*'))
                lhs = detail::make_node(detail::Binary{BinaryOp::Mul, lhs, parse_factor()});
            else if (accept('/'))
                lhs = detail::make_node(detail::Binary{BinaryOp::Div, lhs, parse_factor()});
            else
                return lhs;
        }
    }

    NodePtr parse_factor() {
        auto base = parse_base();
        skip_ws();
        if (accept('^'))
            return detail::make_node(detail::Binary{BinaryOp::Pow, base, parse_factor()});
        return base;
    }

    NodePtr parse_base() {
        skip_ws();
        if (pos_ >= text_.size())
            throw SyntaxError("unexpected end of input, expected number, identifier, '(' or '-'",
                              pos_);
        char c = text_[pos_];
        if (c == '-') {
            ++pos_;
            return detail::make_node(detail::Unary{UnaryFn::Neg, parse_base()});
        }
        if (c == '(') {
            ++pos_;
            auto inner = parse_expr();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        throw SyntaxError(std::string("unexpected character '") + c + "' at position " +
                              std::to_string(pos_) + ", expected number, identifier, '(' or '-'",
                          pos_);
    }

    NodePtr parse_number() {
        const char* first = text_.data() + pos_;
        const char* last = text_.data() + text_.size();
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc())
            throw SyntaxError("malformed number at position " + std::to_string(pos_), pos_);
        pos_ = static_cast<std::size_t>(ptr - text_.data());
        return detail::make_node(detail::Const{value});
    }

    NodePtr parse_ident() {
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        std::string name(text_.substr(start, pos_ - start));
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '(') {
            auto fn = detail::builtin_function(name);
            if (!fn)
                throw UnknownIdentifier("unknown function '" + name + "' at position " +
                                        std::to_string(start));
            ++pos_;
            auto arg = parse_expr();
            expect(')');
            return detail::make_node(detail::Unary{*fn, std::move(arg)});
        }
        if (name == "pi") return detail::make_node(detail::Const{3.14159265358979323846});
        return detail::make_node(detail::Var{std::move(name)});
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
    }

    bool accept(char c) {
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        skip_ws();
        if (!accept(c))
            throw SyntaxError(std::string("expected '") + c + "' at position " +
                                  std::to_string(pos_),
                              pos_);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

inline Expr Expr::parse(std::string_view text) { return ExprParser(text).run(); }

inline Expr Expr::parse(std::string_view text, const std::set<std::string>& allowed) {
    Expr e = parse(text);
    for (const auto& name : e.variables())
        if (!allowed.count(name))
            throw UnknownIdentifier("variable '" + name + "' is not declared here");
    return e;
}

/// Expression flattened to a postfix program with variable slots resolved
/// against a fixed name order. Evaluation order matches Expr::eval exactly,
/// so results are bitwise identical; this is the hot-loop form.
class CompiledExpr {
public:
    CompiledExpr() = default;

    CompiledExpr(const Expr& e, const std::vector<std::string>& slot_names) {
        std::map<std::string, int> slots;
        for (std::size_t i = 0; i < slot_names.size(); ++i)
            slots[slot_names[i]] = static_cast<int>(i);
        compile(*e.root(), slots);
        stack_.resize(max_depth_);
    }

    double eval(const double* slot_values) const {
        int top = -1;
        for (const Op& op : ops_) {
            switch (op.kind) {
                case Kind::Const: stack_[++top] = op.value; break;
                case Kind::Slot: stack_[++top] = slot_values[op.slot]; break;
                case Kind::Un:
                    stack_[top] = detail::apply_unary(op.fn, stack_[top]);
                    break;
                case Kind::Bin: {
                    double rhs = stack_[top--];
                    stack_[top] = detail::apply_binary(op.bop, stack_[top], rhs);
                    break;
                }
            }
        }
        return stack_[0];
    }

private:
    enum class Kind { Const, Slot, Un, Bin };
    struct Op {
        Kind kind;
        double value = 0.0;
        int slot = 0;
        UnaryFn fn = UnaryFn::Neg;
        BinaryOp bop = BinaryOp::Add;
    };

    void compile(const detail::ExprNode& n, const std::map<std::string, int>& slots) {
        using namespace detail;
        if (auto* c = std::get_if<Const>(&n.v)) {
            push({Kind::Const, c->value, 0, UnaryFn::Neg, BinaryOp::Add}, +1);
            return;
        }
        if (auto* var = std::get_if<Var>(&n.v)) {
            auto it = slots.find(var->name);
            if (it == slots.end())
                throw MissingBinding("no slot for variable '" + var->name + "'");
            push({Kind::Slot, 0.0, it->second, UnaryFn::Neg, BinaryOp::Add}, +1);
            return;
        }
        if (auto* u = std::get_if<Unary>(&n.v)) {
            compile(*u->arg, slots);
            push({Kind::Un, 0.0, 0, u->fn, BinaryOp::Add}, 0);
            return;
        }
        auto& b = std::get<Binary>(n.v);
        compile(*b.lhs, slots);
        compile(*b.rhs, slots);
        push({Kind::Bin, 0.0, 0, UnaryFn::Neg, b.op}, -1);
    }

    void push(Op op, int depth_delta) {
        ops_.push_back(op);
        depth_ += depth_delta;
        if (depth_ > max_depth_) max_depth_ = depth_;
    }

    std::vector<Op> ops_;
    int depth_ = 0;
    int max_depth_ = 0;
    mutable std::vector<double> stack_;
};

} // namespace multihom
