#include "fcm/quadrature.hpp"

#include <cmath>
#include <stdexcept>

namespace fcm {

namespace {

struct Quad {
    const std::function<double(double)>& f;
    int max_depth;

    // Classic recursive Simpson refinement; `whole` is Simpson on [a,b],
    // fa/fm/fb the endpoint and midpoint values.
    double refine(double a, double b, double fa, double fm, double fb,
                  double whole, double tol, int depth) const {
        double m = 0.5 * (a + b);
        double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
        double flm = f(lm), frm = f(rm);
        double h6 = (b - a) / 12.0;
        double left = h6 * (fa + 4.0 * flm + fm);
        double right = h6 * (fm + 4.0 * frm + fb);
        double delta = left + right - whole;
        if (depth >= max_depth || std::abs(delta) <= 15.0 * tol)
            return left + right + delta / 15.0;
        return refine(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) +
               refine(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
    }
};

}  // namespace

double integrate_adaptive(const std::function<double(double)>& f, double lo,
                          double hi, double tol, int initial_panels) {
    if (!(tol > 0.0)) throw std::invalid_argument("integrate_adaptive: tol must be positive");
    if (lo == hi) return 0.0;
    double sign = 1.0;
    if (hi < lo) {
        std::swap(lo, hi);
        sign = -1.0;
    }
    if (initial_panels < 1) initial_panels = 1;
    Quad q{f, 48};
    double h = (hi - lo) / initial_panels;
    double panel_tol = tol / initial_panels;
    double total = 0.0;
    for (int i = 0; i < initial_panels; ++i) {
        double a = lo + i * h;
        double b = (i + 1 == initial_panels) ? hi : a + h;
        double m = 0.5 * (a + b);
        double fa = f(a), fm = f(m), fb = f(b);
        double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += q.refine(a, b, fa, fm, fb, whole, panel_tol, 0);
    }
    if (!std::isfinite(total))
        throw EvalError("integrate_adaptive: non-finite quadrature result");
    return sign * total;
}

double integrate_adaptive(const Expr& e, int var, double lo, double hi,
                          double tol, Point at) {
    if (var < 0 || static_cast<std::size_t>(var) >= at.size())
        throw std::invalid_argument("integrate_adaptive: variable outside point dimension");
    return integrate_adaptive(
        [&](double x) {
            at[static_cast<std::size_t>(var)] = x;
            return evaluate(e, at);
        },
        lo, hi, tol);
}

}  // namespace fcm
