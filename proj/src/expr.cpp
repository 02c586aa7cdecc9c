#include "fcm/expr.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <sstream>

#include "fcm/field.hpp"
#include "fcm/quadrature.hpp"

namespace fcm {

namespace {

constexpr std::int64_t kCountCap = std::int64_t(1) << 60;
constexpr double kPi = 3.14159265358979323846;

std::int64_t sat_add(std::int64_t a, std::int64_t b) {
    if (a > kCountCap - b) return kCountCap;
    return a + b;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

std::uint64_t hash_double(double d) {
    if (d == 0.0) d = 0.0;  // collapse -0
    std::uint64_t u;
    std::memcpy(&u, &d, sizeof u);
    return u;
}

Expr make(Node n) {
    std::uint64_t h = mix(1469598103934665603ull, static_cast<std::uint64_t>(n.kind));
    h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(n.ivar)));
    h = mix(h, hash_double(n.a));
    h = mix(h, hash_double(n.b));
    h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(n.bump_m)));
    for (double c : n.poly) h = mix(h, hash_double(c));
    std::int64_t cnt = 1;
    for (const Expr& k : n.kids) {
        h = mix(h, k.node().hash);
        cnt = sat_add(cnt, k.node().tree_count);
    }
    if (n.table) h = mix(h, n.table->serial);
    for (int d : n.dord) h = mix(h, static_cast<std::uint64_t>(d));
    n.hash = h;
    n.tree_count = cnt;
    return Expr(std::make_shared<const Node>(std::move(n)));
}

int cmp_double(double a, double b) {
    if (a < b) return -1;
    if (a > b) return 1;
    return 0;
}

double int_pow(double b, int k) {
    double r = 1.0;
    while (k > 0) {
        if (k & 1) r *= b;
        b *= b;
        k >>= 1;
    }
    return r;
}

// ---- smooth step profile table -----------------------------------------
//
// phi(r) = (1/I) * int_{-1}^{r} exp(-1/(1-s^2)) ds, the C-infinity
// monotone 0 -> 1 profile behind blend().  Values are assembled once from
// per-panel 5-point Gauss-Legendre sums; partial panels reuse the same
// rule, so the table is smooth to machine accuracy.

double bump_profile(double r) {
    double q = 1.0 - r * r;
    if (q <= 0.0) return 0.0;
    return std::exp(-1.0 / q);
}

struct StepTable {
    static constexpr int kPanels = 2048;
    double total = 0.0;
    std::array<double, kPanels + 1> cum{};

    static double gauss5(double a, double b) {
        static const double xs[5] = {0.0, -0.5384693101056831, 0.5384693101056831,
                                     -0.9061798459386640, 0.9061798459386640};
        static const double ws[5] = {0.5688888888888889, 0.4786286704993665,
                                     0.4786286704993665, 0.2369268850561891,
                                     0.2369268850561891};
        double c = 0.5 * (a + b), hw = 0.5 * (b - a);
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += ws[i] * bump_profile(c + hw * xs[i]);
        return hw * s;
    }

    StepTable() {
        double acc = 0.0, comp = 0.0;  // Kahan compensation
        cum[0] = 0.0;
        double h = 2.0 / kPanels;
        for (int i = 0; i < kPanels; ++i) {
            double a = -1.0 + i * h;
            double b = (i + 1 == kPanels) ? 1.0 : a + h;
            double y = gauss5(a, b) - comp;
            double t = acc + y;
            comp = (t - acc) - y;
            acc = t;
            cum[static_cast<std::size_t>(i) + 1] = acc;
        }
        total = acc;
    }

    static const StepTable& get() {
        static const StepTable table;
        return table;
    }

    double phi(double r) const {
        if (r <= -1.0) return 0.0;
        if (r >= 1.0) return 1.0;
        double h = 2.0 / kPanels;
        int i = static_cast<int>((r + 1.0) / h);
        i = std::clamp(i, 0, kPanels - 1);
        double a = -1.0 + i * h;
        return (cum[static_cast<std::size_t>(i)] + gauss5(a, r)) / total;
    }
};

// ---- small polynomial helpers for bump derivatives ----------------------

using Poly = std::vector<double>;

Poly poly_mul(const Poly& p, const Poly& q) {
    if (p.empty() || q.empty()) return {};
    Poly r(p.size() + q.size() - 1, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < q.size(); ++j) r[i + j] += p[i] * q[j];
    return r;
}

Poly poly_add(Poly p, const Poly& q) {
    if (q.size() > p.size()) p.resize(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) p[i] += q[i];
    return p;
}

Poly poly_scale(Poly p, double c) {
    for (double& v : p) v *= c;
    return p;
}

Poly poly_derive(const Poly& p) {
    if (p.size() <= 1) return {};
    Poly r(p.size() - 1);
    for (std::size_t i = 1; i < p.size(); ++i) r[i - 1] = p[i] * static_cast<double>(i);
    return r;
}

void poly_trim(Poly& p) {
    while (!p.empty() && p.back() == 0.0) p.pop_back();
}

double poly_eval(const Poly& p, double x) {
    double r = 0.0;
    for (std::size_t i = p.size(); i-- > 0;) r = r * x + p[i];
    return r;
}

std::pair<double, Expr> split_const_factor(const Expr& e) {
    if (e.is_const()) return {e.const_value(), Expr()};
    if (e.kind() == Kind::Prod && e.node().kids.front().is_const()) {
        const auto& kids = e.node().kids;
        double c = kids.front().const_value();
        if (kids.size() == 2) return {c, kids[1]};
        Node n;
        n.kind = Kind::Prod;
        n.kids.assign(kids.begin() + 1, kids.end());
        return {c, make(std::move(n))};
    }
    return {1.0, e};
}

struct ExprLess {
    bool operator()(const Expr& a, const Expr& b) const { return compare(a, b) < 0; }
};

}  // namespace

// ---- Expr accessors ------------------------------------------------------

Kind Expr::kind() const { return p_->kind; }
bool Expr::is_const() const { return p_->kind == Kind::Const; }
bool Expr::is_zero() const { return is_const() && p_->a == 0.0; }
bool Expr::is_one() const { return is_const() && p_->a == 1.0; }
double Expr::const_value() const { return p_->a; }

// ---- comparison -----------------------------------------------------------

int compare(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return 0;
    const Node& x = a.node();
    const Node& y = b.node();
    if (x.kind != y.kind)
        return x.kind < y.kind ? -1 : 1;
    switch (x.kind) {
        case Kind::Const:
            return cmp_double(x.a, y.a);
        case Kind::Var:
            return x.ivar < y.ivar ? -1 : (x.ivar > y.ivar ? 1 : 0);
        case Kind::Bump:
        case Kind::SineBump: {
            if (x.ivar != y.ivar) return x.ivar < y.ivar ? -1 : 1;
            if (int c = cmp_double(x.a, y.a)) return c;
            if (int c = cmp_double(x.b, y.b)) return c;
            if (x.bump_m != y.bump_m) return x.bump_m < y.bump_m ? -1 : 1;
            if (x.poly.size() != y.poly.size())
                return x.poly.size() < y.poly.size() ? -1 : 1;
            for (std::size_t i = 0; i < x.poly.size(); ++i)
                if (int c = cmp_double(x.poly[i], y.poly[i])) return c;
            return 0;
        }
        case Kind::Step: {
            if (x.ivar != y.ivar) return x.ivar < y.ivar ? -1 : 1;
            if (int c = cmp_double(x.a, y.a)) return c;
            return cmp_double(x.b, y.b);
        }
        case Kind::Field: {
            if (x.table->serial != y.table->serial)
                return x.table->serial < y.table->serial ? -1 : 1;
            if (x.dord != y.dord) return x.dord < y.dord ? -1 : 1;
            return 0;
        }
        case Kind::IPow: {
            if (int c = compare(x.kids[0], y.kids[0])) return c;
            return x.ivar < y.ivar ? -1 : (x.ivar > y.ivar ? 1 : 0);
        }
        case Kind::Antider: {
            if (x.ivar != y.ivar) return x.ivar < y.ivar ? -1 : 1;
            if (int c = cmp_double(x.a, y.a)) return c;
            if (int c = cmp_double(x.b, y.b)) return c;
            return compare(x.kids[0], y.kids[0]);
        }
        default: {
            if (x.kids.size() != y.kids.size())
                return x.kids.size() < y.kids.size() ? -1 : 1;
            for (std::size_t i = 0; i < x.kids.size(); ++i)
                if (int c = compare(x.kids[i], y.kids[i])) return c;
            return 0;
        }
    }
}

bool identical(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return true;
    if (a.node().hash != b.node().hash) return false;
    return compare(a, b) == 0;
}

// ---- factories -------------------------------------------------------------

Expr constant(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("constant: non-finite value");
    if (v == 0.0) v = 0.0;
    Node n;
    n.kind = Kind::Const;
    n.a = v;
    return make(std::move(n));
}

Expr variable(int index) {
    if (index < 0) throw std::invalid_argument("variable: negative index");
    Node n;
    n.kind = Kind::Var;
    n.ivar = index;
    return make(std::move(n));
}

Expr sum(std::vector<Expr> terms) {
    std::vector<Expr> flat;
    flat.reserve(terms.size());
    for (auto& e : terms) {
        if (!e.valid()) throw std::invalid_argument("sum: empty expression");
        if (e.kind() == Kind::Sum)
            for (const Expr& k : e.node().kids) flat.push_back(k);
        else
            flat.push_back(std::move(e));
    }
    double cacc = 0.0;
    std::map<Expr, double, ExprLess> groups;
    for (const Expr& e : flat) {
        auto [c, core] = split_const_factor(e);
        if (!core.valid())
            cacc += c;
        else
            groups[core] += c;
    }
    std::vector<Expr> kids;
    kids.reserve(groups.size() + 1);
    if (cacc != 0.0) kids.push_back(constant(cacc));
    for (auto& [core, c] : groups) {
        if (c == 0.0) continue;
        if (c == 1.0)
            kids.push_back(core);
        else
            kids.push_back(prod({constant(c), core}));
    }
    if (kids.empty()) return constant(0.0);
    if (kids.size() == 1) return kids.front();
    std::sort(kids.begin(), kids.end(), ExprLess{});
    Node n;
    n.kind = Kind::Sum;
    n.kids = std::move(kids);
    return make(std::move(n));
}

Expr prod(std::vector<Expr> factors) {
    std::vector<Expr> flat;
    flat.reserve(factors.size());
    for (auto& e : factors) {
        if (!e.valid()) throw std::invalid_argument("prod: empty expression");
        if (e.kind() == Kind::Prod)
            for (const Expr& k : e.node().kids) flat.push_back(k);
        else
            flat.push_back(std::move(e));
    }
    double cacc = 1.0;
    std::vector<std::pair<Expr, int>> bases;  // (base, exponent)
    for (const Expr& e : flat) {
        if (e.is_const()) {
            cacc *= e.const_value();
            continue;
        }
        if (e.kind() == Kind::IPow)
            bases.emplace_back(e.node().kids[0], e.node().ivar);
        else
            bases.emplace_back(e, 1);
    }
    if (cacc == 0.0) return constant(0.0);
    std::sort(bases.begin(), bases.end(),
              [](const auto& a, const auto& b) { return compare(a.first, b.first) < 0; });
    std::vector<Expr> kids;
    kids.reserve(bases.size() + 1);
    for (std::size_t i = 0; i < bases.size();) {
        std::size_t j = i;
        int e = 0;
        while (j < bases.size() && compare(bases[j].first, bases[i].first) == 0) {
            e += bases[j].second;
            ++j;
        }
        kids.push_back(e == 1 ? bases[i].first : ipow(bases[i].first, e));
        i = j;
    }
    // exponent merging may have produced constants; fold them in
    std::vector<Expr> cleaned;
    cleaned.reserve(kids.size() + 1);
    for (auto& k : kids) {
        if (k.is_const())
            cacc *= k.const_value();
        else
            cleaned.push_back(std::move(k));
    }
    if (cacc == 0.0) return constant(0.0);
    std::sort(cleaned.begin(), cleaned.end(), ExprLess{});
    if (cleaned.empty()) return constant(cacc);
    if (cacc != 1.0 && cleaned.size() == 1 && cleaned.front().kind() == Kind::Sum) {
        // distribute the constant so that negation of a sum stays flat
        std::vector<Expr> terms;
        terms.reserve(cleaned.front().node().kids.size());
        for (const Expr& k : cleaned.front().node().kids)
            terms.push_back(prod({constant(cacc), k}));
        return sum(std::move(terms));
    }
    if (cacc != 1.0) cleaned.insert(cleaned.begin(), constant(cacc));
    if (cleaned.size() == 1) return cleaned.front();
    Node n;
    n.kind = Kind::Prod;
    n.kids = std::move(cleaned);
    return make(std::move(n));
}

Expr quot(Expr num, Expr den) {
    if (!num.valid() || !den.valid()) throw std::invalid_argument("quot: empty expression");
    if (den.is_zero()) throw std::invalid_argument("quot: structurally zero denominator");
    if (num.is_zero()) return constant(0.0);
    if (den.is_const()) return prod({constant(1.0 / den.const_value()), std::move(num)});
    if (den.kind() == Kind::Prod && den.node().kids.front().is_const()) {
        auto [c, rest] = split_const_factor(den);
        return prod({constant(1.0 / c), quot(std::move(num), rest)});
    }
    if (identical(num, den)) return constant(1.0);
    Node n;
    n.kind = Kind::Quot;
    n.kids = {std::move(num), std::move(den)};
    return make(std::move(n));
}

Expr ipow(Expr base, int k) {
    if (!base.valid()) throw std::invalid_argument("ipow: empty expression");
    if (k < 0) return quot(constant(1.0), ipow(std::move(base), -k));
    if (k == 0) return constant(1.0);
    if (k == 1) return base;
    if (base.is_const()) return constant(int_pow(base.const_value(), k));
    if (base.kind() == Kind::IPow) return ipow(base.node().kids[0], base.node().ivar * k);
    Node n;
    n.kind = Kind::IPow;
    n.ivar = k;
    n.kids = {std::move(base)};
    return make(std::move(n));
}

namespace {
Expr unary(Kind kind, Expr arg, double (*fold)(double)) {
    if (!arg.valid()) throw std::invalid_argument("unary: empty expression");
    if (arg.is_const()) return constant(fold(arg.const_value()));
    Node n;
    n.kind = kind;
    n.kids = {std::move(arg)};
    return make(std::move(n));
}
}  // namespace

Expr sin_e(Expr arg) { return unary(Kind::Sin, std::move(arg), [](double v) { return std::sin(v); }); }
Expr cos_e(Expr arg) { return unary(Kind::Cos, std::move(arg), [](double v) { return std::cos(v); }); }
Expr exp_e(Expr arg) { return unary(Kind::Exp, std::move(arg), [](double v) { return std::exp(v); }); }

Expr bump(int var, double lo, double hi) { return bump_node(var, lo, hi, {1.0}, 0); }

Expr bump_node(int var, double lo, double hi, std::vector<double> poly, int m) {
    if (var < 0) throw std::invalid_argument("bump: negative variable index");
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("bump: support interval must satisfy lo < hi");
    if (m < 0) throw std::invalid_argument("bump: negative denominator power");
    poly_trim(poly);
    if (poly.empty()) return constant(0.0);
    Node n;
    n.kind = Kind::Bump;
    n.ivar = var;
    n.a = lo;
    n.b = hi;
    n.bump_m = m;
    n.poly = std::move(poly);
    return make(std::move(n));
}

Expr sine_bump(int var, double lo, double hi, int power) {
    if (power < 1) throw std::invalid_argument("sine_bump: power must be >= 1");
    std::vector<double> coeffs(static_cast<std::size_t>(power) + 1, 0.0);
    coeffs[0] = 1.0;
    return sine_bump_node(var, lo, hi, std::move(coeffs));
}

Expr sine_bump_node(int var, double lo, double hi, std::vector<double> coeffs) {
    if (var < 0) throw std::invalid_argument("sine_bump: negative variable index");
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("sine_bump: support interval must satisfy lo < hi");
    if (coeffs.empty()) throw std::invalid_argument("sine_bump: empty coefficient list");
    bool all_zero = true;
    for (double c : coeffs)
        if (c != 0.0) { all_zero = false; break; }
    if (all_zero) return constant(0.0);
    Node n;
    n.kind = Kind::SineBump;
    n.ivar = var;
    n.a = lo;
    n.b = hi;
    n.poly = std::move(coeffs);
    return make(std::move(n));
}

Expr blend(int var, double lo, double hi) {
    if (var < 0) throw std::invalid_argument("blend: negative variable index");
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("blend: transition interval must satisfy lo < hi");
    Node n;
    n.kind = Kind::Step;
    n.ivar = var;
    n.a = lo;
    n.b = hi;
    return make(std::move(n));
}

Expr antider(int var, Expr integrand, double x0, double tol) {
    if (!integrand.valid()) throw std::invalid_argument("antider: empty integrand");
    if (var < 0) throw std::invalid_argument("antider: negative variable index");
    if (!(tol > 0.0)) throw std::invalid_argument("antider: tol must be positive");
    if (integrand.is_zero()) return constant(0.0);
    Node n;
    n.kind = Kind::Antider;
    n.ivar = var;
    n.a = x0;
    n.b = tol;
    n.kids = {std::move(integrand)};
    return make(std::move(n));
}

Expr field_expr(std::shared_ptr<const FieldTable> table, std::vector<int> dord) {
    if (!table) throw std::invalid_argument("field_expr: null table");
    if (dord.size() != table->vars.size())
        throw std::invalid_argument("field_expr: derivative orders do not match table axes");
    for (int d : dord)
        if (d > 3) return constant(0.0);  // piecewise cubic
    Node n;
    n.kind = Kind::Field;
    n.table = std::move(table);
    n.dord = std::move(dord);
    return make(std::move(n));
}

Expr negate(Expr e) { return prod({constant(-1.0), std::move(e)}); }
Expr sub(Expr a, Expr b) { return sum({std::move(a), negate(std::move(b))}); }

// ---- differentiation --------------------------------------------------------

Expr differentiate(const Expr& e, int var) {
    const Node& n = e.node();
    switch (n.kind) {
        case Kind::Const:
            return constant(0.0);
        case Kind::Var:
            return constant(n.ivar == var ? 1.0 : 0.0);
        case Kind::Sum: {
            std::vector<Expr> parts;
            parts.reserve(n.kids.size());
            for (const Expr& k : n.kids) parts.push_back(differentiate(k, var));
            return sum(std::move(parts));
        }
        case Kind::Prod: {
            std::vector<Expr> parts;
            for (std::size_t i = 0; i < n.kids.size(); ++i) {
                Expr d = differentiate(n.kids[i], var);
                if (d.is_zero()) continue;
                std::vector<Expr> fs;
                fs.reserve(n.kids.size());
                for (std::size_t j = 0; j < n.kids.size(); ++j)
                    fs.push_back(j == i ? d : n.kids[j]);
                parts.push_back(prod(std::move(fs)));
            }
            return sum(std::move(parts));
        }
        case Kind::Quot: {
            const Expr& u = n.kids[0];
            const Expr& v = n.kids[1];
            Expr du = differentiate(u, var);
            Expr dv = differentiate(v, var);
            if (dv.is_zero()) return quot(du, v);
            return quot(sub(mul(du, v), mul(u, dv)), ipow(v, 2));
        }
        case Kind::IPow: {
            const Expr& b = n.kids[0];
            Expr db = differentiate(b, var);
            return prod({constant(static_cast<double>(n.ivar)), ipow(b, n.ivar - 1), db});
        }
        case Kind::Sin:
            return mul(cos_e(n.kids[0]), differentiate(n.kids[0], var));
        case Kind::Cos:
            return prod({constant(-1.0), sin_e(n.kids[0]), differentiate(n.kids[0], var)});
        case Kind::Exp:
            return mul(e, differentiate(n.kids[0], var));
        case Kind::Bump: {
            if (var != n.ivar) return constant(0.0);
            // value = B(r) P(r)/(1-r^2)^m with B = exp(-1/(1-r^2));
            // d/dr: new numerator P'(r) q^2 + (2 m r q - 2 r) P(r), q = 1-r^2,
            // denominator power m+2, then the chain factor dr/dx.
            Poly q = {1.0, 0.0, -1.0};
            Poly part = poly_mul(poly_derive(n.poly), poly_mul(q, q));
            Poly rq = {0.0, 1.0, 0.0, -1.0};  // r q
            part = poly_add(part, poly_scale(poly_mul(rq, n.poly), 2.0 * n.bump_m));
            part = poly_add(part, poly_scale(poly_mul(Poly{0.0, 1.0}, n.poly), -2.0));
            part = poly_scale(std::move(part), 2.0 / (n.b - n.a));
            return bump_node(n.ivar, n.a, n.b, std::move(part), n.bump_m + 2);
        }
        case Kind::SineBump: {
            if (var != n.ivar) return constant(0.0);
            // value = sum_m c_m sin^{p-m}(th) cos^m(th), th = pi (x-a)/(b-a);
            // d/dth keeps the total degree p, then the chain factor dth/dx.
            std::size_t p = n.poly.size() - 1;
            double k = kPi / (n.b - n.a);
            std::vector<double> out(p + 1, 0.0);
            for (std::size_t m = 0; m <= p; ++m) {
                double c = n.poly[m];
                if (c == 0.0) continue;
                if (m < p) out[m + 1] += c * k * static_cast<double>(p - m);
                if (m > 0) out[m - 1] -= c * k * static_cast<double>(m);
            }
            return sine_bump_node(n.ivar, n.a, n.b, std::move(out));
        }
        case Kind::Step: {
            if (var != n.ivar) return constant(0.0);
            double scale = 2.0 / ((n.b - n.a) * StepTable::get().total);
            return bump_node(n.ivar, n.a, n.b, {scale}, 0);
        }
        case Kind::Antider: {
            if (var == n.ivar) return n.kids[0];
            return antider(n.ivar, differentiate(n.kids[0], var), n.a, n.b);
        }
        case Kind::Field: {
            for (std::size_t ax = 0; ax < n.table->vars.size(); ++ax) {
                if (n.table->vars[ax] == var) {
                    std::vector<int> d = n.dord;
                    d[ax] += 1;
                    return field_expr(n.table, std::move(d));
                }
            }
            return constant(0.0);
        }
    }
    throw std::logic_error("differentiate: unhandled node kind");
}

// ---- evaluation ---------------------------------------------------------------

namespace {

double coord(int ivar, const Point& at) {
    if (ivar < 0 || static_cast<std::size_t>(ivar) >= at.size())
        throw EvalError("evaluate: point has no coordinate for variable index " +
                        std::to_string(ivar));
    return at[static_cast<std::size_t>(ivar)];
}

double eval_rec(const Node& n, const Point& at) {
    switch (n.kind) {
        case Kind::Const:
            return n.a;
        case Kind::Var:
            return coord(n.ivar, at);
        case Kind::Sum: {
            double s = 0.0;
            for (const Expr& k : n.kids) s += eval_rec(k.node(), at);
            return s;
        }
        case Kind::Prod: {
            double p = 1.0;
            for (const Expr& k : n.kids) p *= eval_rec(k.node(), at);
            return p;
        }
        case Kind::Quot: {
            double den = eval_rec(n.kids[1].node(), at);
            if (den == 0.0) throw EvalError("evaluate: denominator vanished");
            double r = eval_rec(n.kids[0].node(), at) / den;
            if (!std::isfinite(r)) throw EvalError("evaluate: non-finite quotient");
            return r;
        }
        case Kind::IPow:
            return int_pow(eval_rec(n.kids[0].node(), at), n.ivar);
        case Kind::Sin:
            return std::sin(eval_rec(n.kids[0].node(), at));
        case Kind::Cos:
            return std::cos(eval_rec(n.kids[0].node(), at));
        case Kind::Exp: {
            double r = std::exp(eval_rec(n.kids[0].node(), at));
            if (!std::isfinite(r)) throw EvalError("evaluate: exp overflow");
            return r;
        }
        case Kind::Bump: {
            double x = coord(n.ivar, at);
            double r = (2.0 * x - n.a - n.b) / (n.b - n.a);
            if (r <= -1.0 || r >= 1.0) return 0.0;
            double q = 1.0 - r * r;
            return std::exp(-1.0 / q) * poly_eval(n.poly, r) / int_pow(q, n.bump_m);
        }
        case Kind::SineBump: {
            double x = coord(n.ivar, at);
            if (x <= n.a || x >= n.b) return 0.0;
            double th = kPi * (x - n.a) / (n.b - n.a);
            double s = std::sin(th), c = std::cos(th);
            int p = static_cast<int>(n.poly.size()) - 1;
            double v = 0.0;
            for (int m = 0; m <= p; ++m)
                if (n.poly[static_cast<std::size_t>(m)] != 0.0)
                    v += n.poly[static_cast<std::size_t>(m)] * int_pow(s, p - m) * int_pow(c, m);
            return v;
        }
        case Kind::Step: {
            double x = coord(n.ivar, at);
            double r = (2.0 * x - n.a - n.b) / (n.b - n.a);
            return StepTable::get().phi(r);
        }
        case Kind::Antider: {
            double x = coord(n.ivar, at);
            if (x == n.a) return 0.0;
            Point p = at;
            return integrate_adaptive(n.kids[0], n.ivar, n.a, x, n.b, std::move(p));
        }
        case Kind::Field:
            return n.table->eval(n.dord, at);
    }
    throw std::logic_error("evaluate: unhandled node kind");
}

}  // namespace

double evaluate(const Expr& e, const Point& at) {
    double r = eval_rec(e.node(), at);
    if (!std::isfinite(r)) throw EvalError("evaluate: non-finite result");
    return r;
}

// ---- rebuild / counting ----------------------------------------------------------

Expr simplify(const Expr& e) {
    const Node& n = e.node();
    switch (n.kind) {
        case Kind::Const:
        case Kind::Var:
        case Kind::Bump:
        case Kind::SineBump:
        case Kind::Step:
        case Kind::Field:
            return e;
        case Kind::Sum: {
            std::vector<Expr> kids;
            kids.reserve(n.kids.size());
            for (const Expr& k : n.kids) kids.push_back(simplify(k));
            return sum(std::move(kids));
        }
        case Kind::Prod: {
            std::vector<Expr> kids;
            kids.reserve(n.kids.size());
            for (const Expr& k : n.kids) kids.push_back(simplify(k));
            return prod(std::move(kids));
        }
        case Kind::Quot:
            return quot(simplify(n.kids[0]), simplify(n.kids[1]));
        case Kind::IPow:
            return ipow(simplify(n.kids[0]), n.ivar);
        case Kind::Sin:
            return sin_e(simplify(n.kids[0]));
        case Kind::Cos:
            return cos_e(simplify(n.kids[0]));
        case Kind::Exp:
            return exp_e(simplify(n.kids[0]));
        case Kind::Antider:
            return antider(n.ivar, simplify(n.kids[0]), n.a, n.b);
    }
    throw std::logic_error("simplify: unhandled node kind");
}

std::int64_t node_count(const Expr& e) { return e.node().tree_count; }

// ---- printing ----------------------------------------------------------------

namespace {

std::string num_str(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string var_str(int i) { return i == 0 ? "t" : "x" + std::to_string(i); }

enum Prec { kSum = 0, kProd = 1, kAtom = 2 };

void print(std::string& out, const Expr& e, int prec);

bool negative_leading(const Expr& e) {
    if (e.is_const()) return e.const_value() < 0.0;
    if (e.kind() == Kind::Prod && e.node().kids.front().is_const())
        return e.node().kids.front().const_value() < 0.0;
    return false;
}

void print_call(std::string& out, const char* name, const Expr& arg) {
    out += name;
    out += '(';
    print(out, arg, kSum);
    out += ')';
}

void print(std::string& out, const Expr& e, int prec) {
    const Node& n = e.node();
    switch (n.kind) {
        case Kind::Const: {
            double v = n.a;
            if (v < 0.0 && prec >= kProd) {
                out += '(';
                out += num_str(v);
                out += ')';
            } else {
                out += num_str(v);
            }
            return;
        }
        case Kind::Var:
            out += var_str(n.ivar);
            return;
        case Kind::Sum: {
            bool wrap = prec > kSum;
            if (wrap) out += '(';
            for (std::size_t i = 0; i < n.kids.size(); ++i) {
                const Expr& k = n.kids[i];
                if (i == 0) {
                    print(out, k, kSum);
                } else if (negative_leading(k)) {
                    out += " - ";
                    print(out, negate(k), kSum + 1);
                } else {
                    out += " + ";
                    print(out, k, kSum + 1);
                }
            }
            if (wrap) out += ')';
            return;
        }
        case Kind::Prod: {
            bool wrap = prec > kProd;
            std::size_t first = 0;
            std::string body;
            if (n.kids.front().is_const() && n.kids.front().const_value() == -1.0 &&
                n.kids.size() > 1) {
                body += '-';
                first = 1;
            }
            for (std::size_t i = first; i < n.kids.size(); ++i) {
                if (i > first) body += '*';
                print(body, n.kids[i], i == first ? kProd : kAtom);
            }
            if (wrap || (prec == kProd && body[0] == '-')) out += '(' + body + ')';
            else out += body;
            return;
        }
        case Kind::Quot: {
            bool wrap = prec > kProd;
            if (wrap) out += '(';
            print(out, n.kids[0], kProd);
            out += '/';
            print(out, n.kids[1], kAtom);
            if (wrap) out += ')';
            return;
        }
        case Kind::IPow: {
            print(out, n.kids[0], kAtom);
            out += '^';
            out += std::to_string(n.ivar);
            return;
        }
        case Kind::Sin:
            print_call(out, "sin", n.kids[0]);
            return;
        case Kind::Cos:
            print_call(out, "cos", n.kids[0]);
            return;
        case Kind::Exp:
            print_call(out, "exp", n.kids[0]);
            return;
        case Kind::Bump: {
            if (n.poly.size() == 1 && n.poly[0] == 1.0 && n.bump_m == 0) {
                out += "bump(" + var_str(n.ivar) + ", " + num_str(n.a) + ", " + num_str(n.b) + ")";
            } else {
                out += "bumpd(" + var_str(n.ivar) + ", " + num_str(n.a) + ", " + num_str(n.b) +
                       ", " + std::to_string(n.bump_m);
                for (double c : n.poly) out += ", " + num_str(c);
                out += ")";
            }
            return;
        }
        case Kind::SineBump: {
            std::size_t p = n.poly.size() - 1;
            bool pure = n.poly[0] != 0.0;
            for (std::size_t m = 1; m <= p && pure; ++m)
                if (n.poly[m] != 0.0) pure = false;
            if (pure && n.poly[0] == 1.0) {
                out += "sinebump(" + var_str(n.ivar) + ", " + num_str(n.a) + ", " +
                       num_str(n.b) + ", " + std::to_string(p) + ")";
            } else {
                out += "sinebumpd(" + var_str(n.ivar) + ", " + num_str(n.a) + ", " + num_str(n.b);
                for (double c : n.poly) out += ", " + num_str(c);
                out += ")";
            }
            return;
        }
        case Kind::Step:
            out += "blend(" + var_str(n.ivar) + ", " + num_str(n.a) + ", " + num_str(n.b) + ")";
            return;
        case Kind::Antider: {
            out += "antider(" + var_str(n.ivar) + ", ";
            print(out, n.kids[0], kSum);
            out += ", " + num_str(n.a) + ", " + num_str(n.b) + ")";
            return;
        }
        case Kind::Field: {
            out += "field#" + std::to_string(n.table->serial) + "(";
            for (std::size_t i = 0; i < n.dord.size(); ++i) {
                if (i) out += ',';
                out += std::to_string(n.dord[i]);
            }
            out += ")";
            return;
        }
    }
}

}  // namespace

std::string to_string(const Expr& e) {
    std::string out;
    print(out, e, kSum);
    return out;
}

// ---- parser ----------------------------------------------------------------------

namespace {

struct Parser {
    const std::string& s;
    std::size_t pos = 0;
    int nvars;

    void skip_ws() {
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' || s[pos] == '\r'))
            ++pos;
    }

    bool peek(char c) {
        skip_ws();
        return pos < s.size() && s[pos] == c;
    }

    bool accept(char c) {
        if (peek(c)) {
            ++pos;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c))
            throw ParseError(std::string("expected '") + c + "'", pos);
    }

    [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, pos); }

    Expr parse() {
        Expr e = expr();
        skip_ws();
        if (pos != s.size()) fail("unexpected trailing input");
        return e;
    }

    Expr expr() {
        Expr e = term();
        for (;;) {
            if (accept('+'))
                e = add(std::move(e), term());
            else if (accept('-'))
                e = sub(std::move(e), term());
            else
                return e;
        }
    }

    Expr term() {
        Expr e = unary();
        for (;;) {
            if (accept('*'))
                e = mul(std::move(e), unary());
            else if (accept('/'))
                e = quot(std::move(e), unary());
            else
                return e;
        }
    }

    Expr unary() {
        if (accept('-')) return negate(unary());
        return power();
    }

    Expr power() {
        Expr base = primary();
        skip_ws();
        if (accept('^')) {
            bool neg = accept('-');
            long k = integer();
            return ipow(std::move(base), static_cast<int>(neg ? -k : k));
        }
        return base;
    }

    long integer() {
        skip_ws();
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos == start) fail("expected integer");
        return std::stol(s.substr(start, pos - start));
    }

    double number() {
        skip_ws();
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) fail("expected number");
        pos += static_cast<std::size_t>(end - begin);
        return v;
    }

    double signed_number() {
        skip_ws();
        bool neg = accept('-');
        double v = number();
        return neg ? -v : v;
    }

    std::string ident() {
        skip_ws();
        std::size_t start = pos;
        if (pos < s.size() &&
            (std::isalpha(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) {
            ++pos;
            while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
                ++pos;
        }
        if (pos == start) fail("expected identifier");
        return s.substr(start, pos - start);
    }

    int var_index(const std::string& name, std::size_t at) {
        if (name == "t") return 0;
        if (name.size() >= 2 && name[0] == 'x') {
            bool digits = true;
            for (std::size_t i = 1; i < name.size(); ++i)
                if (!std::isdigit(static_cast<unsigned char>(name[i]))) digits = false;
            if (digits) {
                int k = std::stoi(name.substr(1));
                if (k >= 1 && k <= nvars) return k;
                throw ParseError("variable " + name + " outside declared dimension", at);
            }
        }
        return -1;
    }

    int require_var_arg() {
        skip_ws();
        std::size_t at = pos;
        std::string name = ident();
        int v = var_index(name, at);
        if (v < 0) throw ParseError("expected a variable name, got '" + name + "'", at);
        return v;
    }

    Expr primary() {
        skip_ws();
        if (pos >= s.size()) fail("unexpected end of input");
        char c = s[pos];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return constant(number());
        if (c == '(') {
            ++pos;
            Expr e = expr();
            expect(')');
            return e;
        }
        std::size_t at = pos;
        std::string name = ident();
        if (!peek('(')) {
            int v = var_index(name, at);
            if (v < 0) throw ParseError("unknown identifier '" + name + "'", at);
            return variable(v);
        }
        expect('(');
        Expr result;
        if (name == "sin" || name == "cos" || name == "exp") {
            Expr a = expr();
            result = name == "sin" ? sin_e(a) : name == "cos" ? cos_e(a) : exp_e(a);
        } else if (name == "pow") {
            Expr a = expr();
            expect(',');
            skip_ws();
            bool neg = accept('-');
            long k = integer();
            result = ipow(std::move(a), static_cast<int>(neg ? -k : k));
        } else if (name == "bump") {
            int v = require_var_arg();
            expect(',');
            double lo = signed_number();
            expect(',');
            double hi = signed_number();
            result = bump(v, lo, hi);
        } else if (name == "blend") {
            int v = require_var_arg();
            expect(',');
            double lo = signed_number();
            expect(',');
            double hi = signed_number();
            result = blend(v, lo, hi);
        } else if (name == "sinebump") {
            int v = require_var_arg();
            expect(',');
            double lo = signed_number();
            expect(',');
            double hi = signed_number();
            expect(',');
            long p = integer();
            result = sine_bump(v, lo, hi, static_cast<int>(p));
        } else if (name == "sinebumpd") {
            int v = require_var_arg();
            expect(',');
            double lo = signed_number();
            expect(',');
            double hi = signed_number();
            std::vector<double> coeffs;
            while (accept(',')) coeffs.push_back(signed_number());
            if (coeffs.empty()) fail("sinebumpd: missing coefficients");
            result = sine_bump_node(v, lo, hi, std::move(coeffs));
        } else if (name == "bumpd") {
            int v = require_var_arg();
            expect(',');
            double lo = signed_number();
            expect(',');
            double hi = signed_number();
            expect(',');
            long m = integer();
            std::vector<double> poly;
            while (accept(',')) poly.push_back(signed_number());
            if (poly.empty()) fail("bumpd: missing polynomial coefficients");
            result = bump_node(v, lo, hi, std::move(poly), static_cast<int>(m));
        } else if (name == "antider") {
            int v = require_var_arg();
            expect(',');
            Expr body = expr();
            expect(',');
            double x0 = signed_number();
            double tol = 1e-12;
            if (accept(',')) tol = signed_number();
            result = antider(v, std::move(body), x0, tol);
        } else {
            throw ParseError("unknown function '" + name + "'", at);
        }
        expect(')');
        return result;
    }
};

}  // namespace

Expr parse_expression(const std::string& text, int nvars) {
    if (nvars < 0) throw std::invalid_argument("parse_expression: negative dimension");
    Parser p{text, 0, nvars};
    return p.parse();
}

// ---- SmoothBump -------------------------------------------------------------------

Expr SmoothBump::to_expr() const {
    std::vector<Expr> fs;
    fs.push_back(constant(amplitude));
    for (const auto& iv : box) fs.push_back(bump(iv.var, iv.lo, iv.hi));
    return prod(std::move(fs));
}

double bump_profile_mass() { return StepTable::get().total; }

// ---- FieldTable --------------------------------------------------------------------

std::shared_ptr<FieldTable> FieldTable::create(std::vector<int> vars,
                                               std::vector<std::vector<double>> axes,
                                               std::vector<double> values) {
    static std::atomic<std::uint64_t> next_serial{1};
    if (vars.size() != axes.size())
        throw std::invalid_argument("FieldTable: vars/axes size mismatch");
    std::size_t total = 1;
    for (const auto& ax : axes) {
        if (ax.size() < 4)
            throw std::invalid_argument("FieldTable: every axis needs at least 4 nodes");
        double h = ax[1] - ax[0];
        for (std::size_t i = 1; i < ax.size(); ++i) {
            if (!(ax[i] > ax[i - 1]))
                throw std::invalid_argument("FieldTable: axis not strictly increasing");
            if (std::abs((ax[i] - ax[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
                throw std::invalid_argument("FieldTable: axis spacing not uniform");
        }
        total *= ax.size();
    }
    if (values.size() != total)
        throw std::invalid_argument("FieldTable: value count does not match axes");
    auto t = std::make_shared<FieldTable>();
    t->vars = std::move(vars);
    t->axes = std::move(axes);
    t->values = std::move(values);
    t->serial = next_serial.fetch_add(1);
    return t;
}

std::size_t FieldTable::index(const std::vector<std::size_t>& idx) const {
    std::size_t r = 0;
    for (std::size_t ax = 0; ax < axes.size(); ++ax) r = r * axes[ax].size() + idx[ax];
    return r;
}

namespace {

// Weights of the cubic through nodes {0,1,2,3} (local coordinates) and of
// its derivatives, evaluated at xi.
void lagrange_weights(double xi, int order, double h, double w[4]) {
    for (int j = 0; j < 4; ++j) {
        // polynomial prod_{k != j} (xi - k)/(j - k), expanded
        double c[4] = {0, 0, 0, 0};
        c[0] = 1.0;
        int deg = 0;
        double denom = 1.0;
        for (int k = 0; k < 4; ++k) {
            if (k == j) continue;
            denom *= (j - k);
            for (int p = deg; p >= 0; --p) {
                c[p + 1] += c[p];
                c[p] *= -k;
            }
            ++deg;
        }
        double d[4];
        for (int p = 0; p < 4; ++p) d[p] = c[p] / denom;
        for (int o = 0; o < order; ++o) {
            for (int p = 0; p < 3; ++p) d[p] = d[p + 1] * (p + 1);
            d[3] = 0.0;
        }
        double v = ((d[3] * xi + d[2]) * xi + d[1]) * xi + d[0];
        w[j] = v / int_pow(h, order);
    }
}

}  // namespace

double FieldTable::eval(const std::vector<int>& dord, const Point& at) const {
    const std::size_t dim = axes.size();
    std::vector<std::array<double, 4>> w(dim);
    std::vector<std::size_t> base(dim);
    for (std::size_t ax = 0; ax < dim; ++ax) {
        const auto& xs = axes[ax];
        int v = vars[ax];
        if (v < 0 || static_cast<std::size_t>(v) >= at.size())
            throw EvalError("field: point has no coordinate for variable index " + std::to_string(v));
        double x = at[static_cast<std::size_t>(v)];
        double h = xs[1] - xs[0];
        double u = (x - xs[0]) / h;
        long cell = static_cast<long>(std::floor(u));
        long b = std::clamp(cell - 1, 0l, static_cast<long>(xs.size()) - 4);
        base[ax] = static_cast<std::size_t>(b);
        lagrange_weights(u - static_cast<double>(b), dord[ax], h, w[ax].data());
    }
    // tensor contraction over the 4^dim stencil
    std::vector<std::size_t> idx(dim);
    double total = 0.0;
    std::vector<int> off(dim, 0);
    for (;;) {
        double ww = 1.0;
        for (std::size_t ax = 0; ax < dim; ++ax) {
            ww *= w[ax][static_cast<std::size_t>(off[ax])];
            idx[ax] = base[ax] + static_cast<std::size_t>(off[ax]);
        }
        total += ww * values[index(idx)];
        std::size_t ax = 0;
        for (; ax < dim; ++ax) {
            if (++off[ax] < 4) break;
            off[ax] = 0;
        }
        if (ax == dim) break;
    }
    return total;
}

}  // namespace fcm
