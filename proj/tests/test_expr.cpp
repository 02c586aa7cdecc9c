#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "fcm/expr.hpp"
#include "fcm/field.hpp"
#include "fcm/quadrature.hpp"

using namespace fcm;

namespace {

constexpr double kPi = 3.14159265358979323846;

double fd_derivative(const Expr& e, int var, Point at, double h = 1e-5) {
    Point lo = at, hi = at;
    lo[static_cast<std::size_t>(var)] -= h;
    hi[static_cast<std::size_t>(var)] += h;
    return (evaluate(e, hi) - evaluate(e, lo)) / (2.0 * h);
}

void check_derivative(const Expr& e, int var, const Point& at, double rel = 1e-6) {
    double sym = evaluate(differentiate(e, var), at);
    double fd = fd_derivative(e, var, at);
    double scale = std::max({1.0, std::abs(sym), std::abs(fd)});
    CHECK(std::abs(sym - fd) <= rel * scale);
}

// Deterministic random expression over t, x1 with bounded depth; stays
// finite on [0,1]^2 by construction (no quotients or exp of large args).
Expr random_expr(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 4 : 10);
    std::uniform_real_distribution<double> coef(-3.0, 3.0);
    switch (pick(rng)) {
        case 0: return constant(std::round(coef(rng) * 8.0) / 8.0);
        case 1: return variable(0);
        case 2: return variable(1);
        case 3: return bump(1, -0.25, 1.25);
        case 4: return sine_bump(0, -0.5, 1.5, 4);
        case 5: return add(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
        case 6: return mul(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
        case 7: return sin_e(random_expr(rng, depth - 1));
        case 8: return cos_e(random_expr(rng, depth - 1));
        case 9: return ipow(random_expr(rng, depth - 1), 2);
        default: return sub(random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    }
}

}  // namespace

TEST_CASE("adaptive quadrature is exact on polynomials") {
    for (int k = 0; k <= 12; ++k) {
        double got = integrate_adaptive(
            [k](double x) { return std::pow(x, k); }, -1.0, 2.0, 1e-12);
        double want = (std::pow(2.0, k + 1) - std::pow(-1.0, k + 1)) / (k + 1);
        CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("quadrature handles reversed and empty ranges") {
    auto f = [](double x) { return x * x; };
    CHECK(integrate_adaptive(f, 1.0, 1.0, 1e-12) == 0.0);
    CHECK(integrate_adaptive(f, 2.0, -1.0, 1e-12) ==
          doctest::Approx(-3.0).epsilon(1e-12));
}

TEST_CASE("oscillatory integral matches antiderivative") {
    // int_0^b cos(3y) sin(3y) dy = sin(3b)^2 / 6
    double b = 7.0 * kPi / 15.0;
    Expr integrand = mul(cos_e(mul(constant(3.0), variable(1))),
                         sin_e(mul(constant(3.0), variable(1))));
    double got = integrate_adaptive(integrand, 1, 0.0, b, 1e-13, {0.0, 0.0});
    double s = std::sin(3.0 * b);
    CHECK(got == doctest::Approx(s * s / 6.0).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.15075141619791228).epsilon(1e-11));
}

TEST_CASE("bump profile mass agrees with independent quadrature") {
    double direct = integrate_adaptive(
        [](double r) {
            double q = 1.0 - r * r;
            return q > 0.0 ? std::exp(-1.0 / q) : 0.0;
        },
        -1.0, 1.0, 1e-15);
    CHECK(bump_profile_mass() == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("constant folding and canonical identities") {
    Expr x = variable(1);
    Expr t = variable(0);
    CHECK(add(x, x).kind() == Kind::Prod);
    CHECK(to_string(add(x, x)) == "2*x1");
    CHECK(to_string(mul(x, x)) == "x1^2");
    CHECK(sub(sin_e(x), sin_e(x)).is_zero());
    CHECK(quot(sin_e(x), sin_e(x)).is_one());
    CHECK(mul(constant(0.0), exp_e(x)).is_zero());
    CHECK(mul(constant(1.0), t).kind() == Kind::Var);
    CHECK(ipow(x, 0).is_one());
    CHECK(ipow(ipow(x, 2), 3).node().ivar == 6);
    CHECK(to_string(sum({mul(constant(2.0), sin_e(t)), mul(constant(3.0), sin_e(t))})) ==
          "5*sin(t)");
    CHECK(evaluate(constant(-0.0), {}) == 0.0);
}

TEST_CASE("like terms cancel structurally") {
    std::mt19937_64 rng(12345);
    for (int i = 0; i < 50; ++i) {
        Expr e = random_expr(rng, 4);
        CHECK(sub(e, e).is_zero());
        Expr twice = add(e, e);
        Expr folded = sub(twice, mul(constant(2.0), e));
        CHECK(folded.is_zero());
    }
}

TEST_CASE("evaluation basics") {
    Expr e = parse_expression("2 + 3*x1^2 - t*x2", 2);
    CHECK(evaluate(e, {2.0, 3.0, 4.0}) == doctest::Approx(2 + 27 - 8).epsilon(1e-15));
    CHECK(evaluate(parse_expression("sin(t)*cos(t)", 0), {0.7}) ==
          doctest::Approx(std::sin(0.7) * std::cos(0.7)).epsilon(1e-15));
    CHECK(evaluate(parse_expression("exp(-t^2)", 0), {1.5}) ==
          doctest::Approx(std::exp(-2.25)).epsilon(1e-15));
}

TEST_CASE("division by zero raises EvalError") {
    Expr e = quot(constant(1.0), variable(1));
    CHECK_THROWS_AS(evaluate(e, {0.0, 0.0}), EvalError);
    CHECK(evaluate(e, {0.0, 2.0}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(quot(variable(0), constant(0.0)), std::invalid_argument);
    CHECK_THROWS_AS(evaluate(exp_e(variable(0)), {1e6}), EvalError);
}

TEST_CASE("derivatives match finite differences") {
    Point at = {0.4, 0.7, -0.3};
    check_derivative(parse_expression("sin(3*x1)*cos(t)", 2), 1, at);
    check_derivative(parse_expression("sin(3*x1)*cos(t)", 2), 0, at);
    check_derivative(parse_expression("exp(x1*x2)", 2), 2, at);
    check_derivative(parse_expression("t^3 - 2*t + 1", 2), 0, at);
    check_derivative(parse_expression("(1 + x1^2)/(2 + cos(x1))", 2), 1, at);
    check_derivative(parse_expression("blend(x1, 0.2, 0.9)", 2), 1, at);
    check_derivative(parse_expression("bump(x1, 0.1, 0.9)", 2), 1, at);
    check_derivative(parse_expression("pow(x1 + 2, -3)", 2), 1, at);
}

TEST_CASE("bump derivatives stay consistent to high order") {
    Expr b = bump(1, -1.0, 1.0);
    Point at = {0.0, 0.37};
    Expr d = b;
    for (int order = 1; order <= 5; ++order) {
        d = differentiate(d, 1);
        // compare against a centered difference of the previous order
        Expr prev = b;
        for (int j = 1; j < order; ++j) prev = differentiate(prev, 1);
        double fd = fd_derivative(prev, 1, at, 1e-6);
        double sym = evaluate(d, at);
        CHECK(std::abs(sym - fd) <= 1e-5 * std::max(1.0, std::abs(sym)));
    }
}

TEST_CASE("bump support and smoothness") {
    Expr b = bump(1, 0.25, 0.75);
    Expr d4 = b;
    for (int j = 0; j < 4; ++j) d4 = differentiate(d4, 1);
    for (double x : {0.0, 0.24999, 0.25, 0.75, 0.7500001, 1.0}) {
        CHECK(evaluate(b, {0.0, x}) == 0.0);
        CHECK(evaluate(d4, {0.0, x}) == 0.0);
    }
    CHECK(evaluate(b, {0.0, 0.5}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(evaluate(b, {0.0, 0.3}) > 0.0);
    // derivatives approach zero at the support edge
    CHECK(std::abs(evaluate(d4, {0.0, 0.2500001})) < 1e-6);
}

TEST_CASE("sine window matches the closed form and vanishes outside") {
    Expr s = sine_bump(1, 0.2, 0.8, 10);
    for (double x : {0.25, 0.5, 0.62}) {
        double want = std::pow(std::sin(kPi * (x - 0.2) / 0.6), 10);
        CHECK(evaluate(s, {0.0, x}) == doctest::Approx(want).epsilon(1e-14));
    }
    Expr d = s;
    for (int order = 0; order <= 8; ++order) {
        for (double x : {0.0, 0.2, 0.8, 1.0})
            CHECK(evaluate(d, {0.0, x}) == 0.0);
        d = differentiate(d, 1);
    }
    CHECK(differentiate(s, 0).is_zero());
    CHECK_THROWS_AS(sine_bump(1, 0.8, 0.2, 4), std::invalid_argument);
    CHECK_THROWS_AS(sine_bump(1, 0.2, 0.8, 0), std::invalid_argument);
}

TEST_CASE("sine window derivatives match finite differences") {
    Expr s = sine_bump(0, 0.1, 0.9, 8);
    Expr d = s;
    for (int order = 1; order <= 4; ++order) {
        Expr prev = d;
        d = differentiate(d, 0);
        for (double t : {0.23, 0.5, 0.71}) {
            double fd = fd_derivative(prev, 0, {t}, 1e-6);
            double sym = evaluate(d, {t});
            CHECK(std::abs(sym - fd) <= 1e-5 * std::max(1.0, std::abs(sym)));
        }
    }
    // approach to the seam stays bounded for orders below the power
    CHECK(std::abs(evaluate(d, {0.1000001})) <= 1e4);
}

TEST_CASE("blend is a smooth monotone switch") {
    Expr s = blend(1, 0.2, 0.8);
    CHECK(evaluate(s, {0.0, 0.1}) == 0.0);
    CHECK(evaluate(s, {0.0, 0.2}) == 0.0);
    CHECK(evaluate(s, {0.0, 0.8}) == 1.0);
    CHECK(evaluate(s, {0.0, 0.95}) == 1.0);
    CHECK(evaluate(s, {0.0, 0.5}) == doctest::Approx(0.5).epsilon(1e-10));
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        double v = evaluate(s, {0.0, 0.2 + 0.6 * i / 100.0});
        CHECK(v >= prev - 1e-15);
        prev = v;
    }
    Expr ds = differentiate(s, 1);
    CHECK(ds.kind() == Kind::Bump);
    CHECK(evaluate(ds, {0.0, 0.15}) == 0.0);
    CHECK(evaluate(ds, {0.0, 0.5}) > 0.0);
}

TEST_CASE("antiderivative node evaluates and differentiates") {
    Expr f = antider(1, cos_e(variable(1)), 0.0, 1e-13);
    CHECK(evaluate(f, {0.0, 1.2}) == doctest::Approx(std::sin(1.2)).epsilon(1e-11));
    CHECK(evaluate(f, {0.0, -0.7}) == doctest::Approx(std::sin(-0.7)).epsilon(1e-11));
    CHECK(identical(differentiate(f, 1), cos_e(variable(1))));

    // differentiation under the integral for a non-integration variable
    Expr g = antider(1, mul(variable(0), cos_e(variable(1))), 0.0, 1e-13);
    Expr dg = differentiate(g, 0);
    CHECK(dg.kind() == Kind::Antider);
    CHECK(evaluate(dg, {5.0, 1.2}) == doctest::Approx(std::sin(1.2)).epsilon(1e-11));
    check_derivative(g, 0, {0.8, 1.2}, 1e-7);
}

TEST_CASE("parser round-trips canonical text") {
    std::vector<std::string> samples = {
        "t", "x1", "x2", "2*x1", "x1^2", "sin(3*x1)", "-x1 + x2",
        "1 - x1*x2 + x2^3", "(1 + x1)/(2 + cos(t))", "exp(-t)*bump(x1, 0, 1)",
        "blend(x2, -0.5, 0.5)", "antider(x1, sin(x1), 0, 1e-13)",
        "sinebump(x1, 0.2, 0.8, 6)", "sinebumpd(t, 0, 1, 0.5, 0, -2)",
        "t/x1/x2", "t/(x1/x2)", "2/(3 + t)^2",
    };
    for (const auto& s : samples) {
        Expr e = parse_expression(s, 2);
        Expr again = parse_expression(to_string(e), 2);
        CAPTURE(s);
        CAPTURE(to_string(e));
        CHECK(identical(e, again));
    }
}

TEST_CASE("random trees round-trip through printing") {
    std::mt19937_64 rng(777);
    for (int i = 0; i < 200; ++i) {
        Expr e = random_expr(rng, 5);
        Expr again = parse_expression(to_string(e), 2);
        CAPTURE(to_string(e));
        REQUIRE(identical(e, again));
        Point at = {0.3, 0.6};
        double a = evaluate(e, at);
        double b = evaluate(again, at);
        CHECK(a == doctest::Approx(b).epsilon(1e-14));
    }
}

TEST_CASE("parser reports positions on bad input") {
    CHECK_THROWS_AS(parse_expression("1 + ", 2), ParseError);
    CHECK_THROWS_AS(parse_expression("sin(x1", 2), ParseError);
    CHECK_THROWS_AS(parse_expression("x3", 2), ParseError);
    CHECK_THROWS_AS(parse_expression("foo(1)", 2), ParseError);
    CHECK_THROWS_AS(parse_expression("1 2", 2), ParseError);
    try {
        parse_expression("2 * @", 2);
        CHECK(false);
    } catch (const ParseError& err) {
        CHECK(err.position == 4);
    }
}

TEST_CASE("simplify rebuilds to the same canonical tree") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 50; ++i) {
        Expr e = random_expr(rng, 5);
        CHECK(identical(e, simplify(e)));
    }
}

TEST_CASE("node_count grows with tree size") {
    Expr x = variable(1);
    CHECK(node_count(x) == 1);
    CHECK(node_count(add(x, constant(2.0))) == 3);
    CHECK(node_count(sin_e(add(x, constant(2.0)))) == 4);
}

TEST_CASE("smooth product bump covers a box") {
    SmoothBump sb;
    sb.box = {{0, 0.1, 0.9}, {1, 0.25, 0.75}};
    sb.amplitude = 2.0;
    Expr e = sb.to_expr();
    CHECK(evaluate(e, {0.5, 0.5}) > 0.0);
    CHECK(evaluate(e, {0.05, 0.5}) == 0.0);
    CHECK(evaluate(e, {0.5, 0.8}) == 0.0);
    CHECK(evaluate(e, {0.5, 0.5}) ==
          doctest::Approx(2.0 * std::exp(-1.0) * std::exp(-1.0)).epsilon(1e-13));
}

TEST_CASE("field tables reproduce cubic data exactly") {
    // f(t, x1) = 1 + 2 t - t^3 + x1^2 t on a uniform grid
    auto f = [](double t, double x) { return 1.0 + 2.0 * t - t * t * t + x * x * t; };
    std::vector<double> ta, xa;
    for (int i = 0; i <= 10; ++i) ta.push_back(i * 0.1);
    for (int j = 0; j <= 8; ++j) xa.push_back(-1.0 + j * 0.25);
    std::vector<double> vals;
    for (double t : ta)
        for (double x : xa) vals.push_back(f(t, x));
    auto table = FieldTable::create({0, 1}, {ta, xa}, vals);
    Expr e = field_expr(table, {0, 0});
    for (double t : {0.05, 0.37, 0.93})
        for (double x : {-0.9, 0.11, 0.99}) {
            CHECK(evaluate(e, {t, x}) == doctest::Approx(f(t, x)).epsilon(1e-12));
        }
    Expr dt = differentiate(e, 0);
    CHECK(evaluate(dt, {0.37, 0.5}) ==
          doctest::Approx(2.0 - 3.0 * 0.37 * 0.37 + 0.25).epsilon(1e-10));
    Expr dxx = differentiate(differentiate(e, 1), 1);
    CHECK(evaluate(dxx, {0.37, 0.5}) == doctest::Approx(2.0 * 0.37).epsilon(1e-10));
    // fourth derivative of a piecewise cubic folds to zero
    Expr d4 = differentiate(differentiate(dxx, 1), 1);
    CHECK(d4.is_zero());
}

TEST_CASE("field tables converge at fourth order on smooth data") {
    auto build_err = [](int n) {
        std::vector<double> xs;
        for (int i = 0; i <= n; ++i) xs.push_back(static_cast<double>(i) / n);
        std::vector<double> vals;
        for (double x : xs) vals.push_back(std::sin(3.0 * x));
        auto table = FieldTable::create({1}, {xs}, vals);
        Expr e = field_expr(table, {0});
        double worst = 0.0;
        for (int k = 0; k < 113; ++k) {
            double x = (k + 0.5) / 113.0;
            worst = std::max(worst, std::abs(evaluate(e, {0.0, x}) - std::sin(3.0 * x)));
        }
        return worst;
    };
    double e1 = build_err(20), e2 = build_err(40);
    double rate = std::log2(e1 / e2);
    CHECK(rate > 3.5);
}

TEST_CASE("expression text is deterministic") {
    Expr a = parse_expression("x1*sin(t) + cos(t)*x1 - 2", 1);
    Expr b = parse_expression("-2 + cos(t)*x1 + sin(t)*x1", 1);
    CHECK(identical(a, b));
    CHECK(to_string(a) == to_string(b));
    CHECK(to_string(a) == "-2 + x1*sin(t) + x1*cos(t)");
}
