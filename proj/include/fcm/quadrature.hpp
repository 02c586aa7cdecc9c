#pragma once

#include <functional>

#include "fcm/expr.hpp"

namespace fcm {

/* Adaptive Simpson quadrature with an absolute error target.  The range is
 * pre-split into a fixed number of panels before refinement so narrow
 * features (compact bumps) cannot hide from the error estimate.
 */
double integrate_adaptive(const std::function<double(double)>& f, double lo,
                          double hi, double tol, int initial_panels = 32);

// Integrate `e` along variable `var` over [lo, hi]; the remaining
// variables are bound to the entries of `at`.
double integrate_adaptive(const Expr& e, int var, double lo, double hi,
                          double tol, Point at);

}  // namespace fcm
