#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <multihom/expr.hpp>

using namespace multihom;

TEST_CASE("parsing the standard scale expressions") {
    SECTION("product with a function call") {
        Expr e = Expr::parse("2*sqrt(eps)");
        CHECK(e.eval({{"eps", 0.25}}) == Catch::Approx(1.0));
        CHECK(e.variables() == std::vector<std::string>{"eps"});
    }
    SECTION("power binds tighter than product") {
        Expr e = Expr::parse("eps^3*ln(1+1/eps)");
        double eps = 0.5;
        CHECK(e.eval({{"eps", eps}}) ==
              Catch::Approx(std::pow(eps, 3) * std::log(1.0 + 1.0 / eps)));
    }
    SECTION("power is right-associative") {
        CHECK(Expr::parse("2^3^2").eval({}) == Catch::Approx(512.0));
    }
    SECTION("unary minus in exponent") {
        CHECK(Expr::parse("2^-2").eval({}) == Catch::Approx(0.25));
    }
    SECTION("pi is a built-in constant") {
        CHECK(Expr::parse("sin(pi/2)").eval({}) == Catch::Approx(1.0));
    }
    SECTION("whitespace is insignificant") {
        CHECK(Expr::parse(" 1 + 2 * 3 ").eval({}) == Catch::Approx(7.0));
    }
}

TEST_CASE("evaluation matches IEEE double arithmetic") {
    CHECK(Expr::parse("eps^2").eval({{"eps", 0.1}}) == std::pow(0.1, 2.0));
    CHECK(Expr::parse("exp(eps)-1").eval({{"eps", 1.0}}) == Catch::Approx(1.718281828459045));
    CHECK(Expr::parse("ln(1+eps^2)").eval({{"eps", 1.0}}) == Catch::Approx(0.6931471805599453));

    SECTION("evaluation is deterministic") {
        Expr e = Expr::parse("sqrt(2)*exp(eps)/(1+eps^2)");
        double a = e.eval({{"eps", 0.37}});
        double b = e.eval({{"eps", 0.37}});
        CHECK(std::memcmp(&a, &b, sizeof a) == 0);
    }
}

TEST_CASE("syntax errors carry a position") {
    SECTION("double star is rejected") {
        try {
            Expr::parse("2**eps");
            FAIL("expected SyntaxError");
        } catch (const SyntaxError& e) {
            CHECK(e.position == 2);
        }
    }
    CHECK_THROWS_AS(Expr::parse(""), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("(1+2"), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("1+"), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("2 eps"), SyntaxError); // no implicit multiplication
    CHECK_THROWS_AS(Expr::parse("1 $ 2"), SyntaxError);
}

TEST_CASE("identifier validation") {
    CHECK_THROWS_AS(Expr::parse("foo(eps)"), UnknownIdentifier);
    CHECK_THROWS_AS(Expr::parse("eps+x", {"eps"}), UnknownIdentifier);
    CHECK_NOTHROW(Expr::parse("eps^2", {"eps"}));
    CHECK_THROWS_AS(Expr::parse("eps").eval({}), MissingBinding);
}

TEST_CASE("domain errors") {
    CHECK_THROWS_AS(Expr::parse("ln(0)").eval({}), DomainError);
    CHECK_THROWS_AS(Expr::parse("ln(-1)").eval({}), DomainError);
    CHECK_THROWS_AS(Expr::parse("sqrt(-1)").eval({}), DomainError);
    CHECK_THROWS_AS(Expr::parse("1/(1-1)").eval({}), DomainError);
    CHECK_THROWS_AS(Expr::parse("0^-1").eval({}), DomainError);
    CHECK_THROWS_AS(Expr::parse("(-2)^0.5").eval({}), DomainError);
}

namespace {

// Random tree generator for the print/parse round-trip property. Arguments
// of sqrt and ln are kept strictly positive so evaluation stays in-domain.
Expr random_expr(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<int> shape(0, depth <= 0 ? 1 : 6);
    switch (shape(rng)) {
        case 0: {
            std::uniform_real_distribution<double> val(0.1, 4.0);
            return Expr::constant(val(rng));
        }
        case 1:
            return Expr::parse("eps");
        case 2:
            return Expr::combine(BinaryOp::Add, random_expr(rng, depth - 1),
                                 random_expr(rng, depth - 1));
        case 3:
            return Expr::combine(BinaryOp::Mul, random_expr(rng, depth - 1),
                                 random_expr(rng, depth - 1));
        case 4:
            return Expr::combine(BinaryOp::Div, random_expr(rng, depth - 1),
                                 Expr::combine(BinaryOp::Add, Expr::constant(1.0),
                                               random_expr(rng, depth - 1).squared()));
        case 5: {
            Expr arg = Expr::combine(BinaryOp::Add, Expr::constant(1.0),
                                     random_expr(rng, depth - 1).squared());
            std::uniform_int_distribution<int> pick(0, 2);
            UnaryFn fn[] = {UnaryFn::Ln, UnaryFn::Sqrt, UnaryFn::Sin};
            return Expr::apply(fn[pick(rng)], arg);
        }
        default:
            return Expr::combine(BinaryOp::Sub, random_expr(rng, depth - 1),
                                 random_expr(rng, depth - 1));
    }
}

} // namespace

TEST_CASE("canonical printing round-trips") {
    SECTION("fixed samples") {
        for (const char* text : {"2*sqrt(eps)", "exp(eps)-1", "ln(1+eps^2)",
                                 "eps^3*ln(1+1/eps)", "-(eps^2)", "2^-2"}) {
            Expr e = Expr::parse(text);
            Expr round = Expr::parse(e.str());
            CHECK(round.str() == e.str());
            double x = e.eval({{"eps", 0.3}});
            double y = round.eval({{"eps", 0.3}});
            CHECK(std::memcmp(&x, &y, sizeof x) == 0);
        }
    }
    SECTION("randomized trees") {
        std::mt19937_64 rng(42);
        for (int trial = 0; trial < 200; ++trial) {
            Expr e = random_expr(rng, 4);
            Expr round = Expr::parse(e.str());
            REQUIRE(round.str() == e.str());
            for (double eps : {0.01, 0.5, 1.3}) {
                double x, y;
                try {
                    x = e.eval({{"eps", eps}});
                } catch (const DomainError&) {
                    continue;
                }
                y = round.eval({{"eps", eps}});
                REQUIRE(std::memcmp(&x, &y, sizeof x) == 0);
            }
        }
    }
}

TEST_CASE("compiled form is bitwise identical to tree evaluation") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Expr e = random_expr(rng, 4);
        CompiledExpr c(e, {"eps"});
        for (double eps : {0.003, 0.2, 0.9, 2.0}) {
            double x;
            try {
                x = e.eval({{"eps", eps}});
            } catch (const DomainError&) {
                continue;
            }
            double y = c.eval(&eps);
            REQUIRE(std::memcmp(&x, &y, sizeof x) == 0);
        }
    }
}

TEST_CASE("grammar corner: unary minus binds tighter than power") {
    // base := '-' base puts negation below '^', so -2^2 reads as (-2)^2.
    CHECK(Expr::parse("-2^2").eval({}) == Catch::Approx(4.0));
}
