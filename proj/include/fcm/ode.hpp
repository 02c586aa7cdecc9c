#pragma once

#include <functional>
#include <vector>

namespace fcm {

using OdeFn =
    std::function<void(double s, const std::vector<double>& y, std::vector<double>& dy)>;

// Adaptive Dormand-Prince integration of y' = f(s, y) from s0 to s1
// (either direction). Error control mixes the relative and absolute
// tolerances per component.
std::vector<double> integrate_ode(const OdeFn& f, std::vector<double> y0,
                                  double s0, double s1, double rel_tol = 1e-9,
                                  double abs_tol = 1e-12);

// Same integration but recording the state at every requested node.
// `nodes` must be monotone starting at s0 (weakly increasing or weakly
// decreasing); the integrator lands on each node exactly.
std::vector<std::vector<double>> integrate_ode_at(const OdeFn& f,
                                                  std::vector<double> y0,
                                                  double s0,
                                                  const std::vector<double>& nodes,
                                                  double rel_tol = 1e-9,
                                                  double abs_tol = 1e-12);

}  // namespace fcm
