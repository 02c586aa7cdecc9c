#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcm {

/* Symbolic expression trees over the variables (t, x1, ..., xN).
 *
 * Variable slot 0 is time, slot k >= 1 is the k-th space coordinate.
 * Expressions are immutable and safe to share; every operation returns a
 * new tree.  Construction goes through the factory functions below which
 * keep trees in a canonical form: sums and products are flattened and
 * sorted, constants are folded, zero terms and unit factors are dropped,
 * a constant times a sum distributes, and like terms differing only by a
 * constant factor are collected.  No other rewriting is performed, so
 * structural equality is a cheap and decidable (if conservative) notion
 * of equality.
 */

class EvalError : public std::runtime_error {
public:
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t pos)
        : std::runtime_error(msg + " (at offset " + std::to_string(pos) + ")"),
          position(pos) {}
    std::size_t position;
};

using Point = std::vector<double>;  // [t, x1, ..., xN]

enum class Kind : std::uint8_t {
    Const,
    Var,
    Bump,      // compactly supported smooth bump (and its derivatives)
    SineBump,  // compactly supported windowed sine power (and its derivatives)
    Step,      // smooth monotone 0 -> 1 transition
    Field,     // tabulated field with spline evaluation
    Sin,
    Cos,
    Exp,
    IPow,
    Prod,
    Quot,
    Antider,   // running integral along one variable
    Sum,
};

struct FieldTable;
struct Node;

class Expr {
public:
    Expr() = default;  // empty handle; only factories make valid ones
    explicit Expr(std::shared_ptr<const Node> p) : p_(std::move(p)) {}

    const Node& node() const { return *p_; }
    const std::shared_ptr<const Node>& ptr() const { return p_; }
    bool valid() const { return p_ != nullptr; }

    Kind kind() const;
    bool is_const() const;
    bool is_zero() const;
    bool is_one() const;
    double const_value() const;  // requires kind() == Const

private:
    std::shared_ptr<const Node> p_;
};

struct Node {
    Kind kind;
    int ivar = 0;               // Var index; Bump/Step/Antider variable; IPow exponent
    double a = 0.0, b = 0.0;    // Const value (a); Bump/Step lo,hi; Antider x0,tol
    int bump_m = 0;             // Bump denominator power
    std::vector<double> poly;   // Bump numerator polynomial in r; SineBump
                                // coefficients over cos powers (fixed total degree)
    std::vector<Expr> kids;
    std::shared_ptr<const FieldTable> table;
    std::vector<int> dord;      // Field: per-axis derivative orders
    std::uint64_t hash = 0;
    std::int64_t tree_count = 1;
};

// --- factories (canonicalizing) ---------------------------------------

Expr constant(double v);
Expr variable(int index);
Expr sum(std::vector<Expr> terms);
Expr prod(std::vector<Expr> factors);
Expr quot(Expr num, Expr den);
Expr ipow(Expr base, int k);  // k >= 0
Expr sin_e(Expr arg);
Expr cos_e(Expr arg);
Expr exp_e(Expr arg);
Expr bump(int var, double lo, double hi);
Expr bump_node(int var, double lo, double hi, std::vector<double> poly, int m);
Expr sine_bump(int var, double lo, double hi, int power);
Expr sine_bump_node(int var, double lo, double hi, std::vector<double> coeffs);
Expr blend(int var, double lo, double hi);
Expr antider(int var, Expr integrand, double x0, double tol = 1e-12);
Expr field_expr(std::shared_ptr<const FieldTable> table, std::vector<int> dord);

inline Expr add(Expr a, Expr b) { return sum({std::move(a), std::move(b)}); }
inline Expr mul(Expr a, Expr b) { return prod({std::move(a), std::move(b)}); }
Expr negate(Expr e);
Expr sub(Expr a, Expr b);

// --- core operations ---------------------------------------------------

// Total order on canonical trees (used for sorting and equality).
int compare(const Expr& a, const Expr& b);
bool identical(const Expr& a, const Expr& b);

// Exact partial derivative with respect to variable `var`.
Expr differentiate(const Expr& e, int var);

// Evaluate at a point.  Throws EvalError on a vanishing denominator or any
// non-finite intermediate; never returns NaN/Inf silently.
double evaluate(const Expr& e, const Point& at);

// Rebuild bottom-up through the canonicalizing factories.
Expr simplify(const Expr& e);

// Canonical, re-parseable text (Field nodes excepted; see docs/grammar.md).
std::string to_string(const Expr& e);

// Number of tree nodes (saturating); the elimination blow-up guard uses it.
std::int64_t node_count(const Expr& e);

// Parse the grammar documented in docs/grammar.md.  `nvars` is N, the
// number of space variables; identifiers t, x1..xN are accepted.
Expr parse_expression(const std::string& text, int nvars);

// --- smooth bump helper -------------------------------------------------

// Axis-aligned product bump: amplitude * prod_k bump(var_k, lo_k, hi_k).
// Strictly positive inside the box, identically zero outside, C^infinity.
struct SmoothBump {
    struct Interval {
        int var;
        double lo, hi;
    };
    std::vector<Interval> box;
    double amplitude = 1.0;

    Expr to_expr() const;
};

// Mass of the 1-d profile exp(-1/(1-r^2)) over [-1,1] (scale bumps by
// (hi-lo)/2 * this to get unit mass).
double bump_profile_mass();

}  // namespace fcm
