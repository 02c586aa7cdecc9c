#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcm/expr.hpp"
#include "fcm/geometry.hpp"
#include "fcm/simulate.hpp"

namespace fcm {

// Raised when a witness construction cannot meet its own postconditions
// (sign conditions, collar bounds, boundary values).
class SpectralError : public std::runtime_error {
 public:
  explicit SpectralError(const std::string& msg) : std::runtime_error(msg) {}
};

// Eigenfunction of -Lap - a with eigenvalue s = 1 that is identically 1 on
// omega1, so every spatial derivative vanishes there, while
// a = (-Lap phi - phi)/phi stays bounded: phi >= delta on omega2 and equals
// the first Dirichlet mode of the domain outside it.
struct BlendedPotential {
  Expr phi, a;
  double s = 1.0;
  Box domain, omega, omega1, omega2;
};

// Builds the flat-window eigenfunction on strictly nested boxes
// omega < omega1 < omega2 < domain (N = 1 or 2) by ramping the first
// Dirichlet mode up to the constant 1 between omega2 and omega1. delta is
// the floor claimed for phi on omega2, verified by sampling.
BlendedPotential build_blended_potential_nd(const Box& domain, const Box& omega,
                                            const Box& omega1, const Box& omega2,
                                            double delta);

// Compactly supported bump on (lo, hi). Default profile is the
// exp(-1/(1-r^2)) family scaled to unit mass; exp_window switches to
// exp(x) clamped by a smooth plateau window, so the bump equals e^x
// exactly on [flat_lo, flat_hi].
struct BumpSpec {
  double lo = 0.0, hi = 0.0;
  bool exp_window = false;
  double flat_lo = 0.0, flat_hi = 0.0;

  Expr to_expr() const;
};

// Default bump for slot 1, 2 or 3 of the one-dimensional witness; slot 1
// lives in (pi/12, pi/6), slots 2 and 3 in (9pi/12, 5pi/6) and
// (5pi/6, 11pi/12). exp_window only applies to slot 1 and places the
// plateau on the middle half of the support.
BumpSpec counterexample_bump(int slot, bool exp_window = false);

// One-dimensional witness pair on (0, pi): psi solves -psi'' - a psi = 9 psi
// by construction of a, equals sin(7pi/5) on the control window
// omega = (7pi/15, 8pi/15), and returns to sin(3x) across the collars;
// phi solves -phi'' - psi' = 9 phi with phi(0) = phi(pi) = 0 and phi = 0
// on omega.
struct CounterexampleData {
  Expr psi, phi, a;
  Expr theta1, theta2, theta3;
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;
  double alpha = 0.0;
  double s = 9.0;
  double omega_lo = 0.0, omega_hi = 0.0;
  double omega1_lo = 0.0, omega1_hi = 0.0;  // theta1 plateau (support if none)
  double eps_blend = 0.0;
  double layer = 0.0;       // width of each collar blend layer
  double dichotomy = 0.0;   // phi(pi) imbalance resolved by C2/C3
  double quad_tol = 0.0;

  // Samples (x, psi, phi, a) at `points` uniform interior nodes.
  void export_csv(const std::string& path, int points = 1000) const;
};

CounterexampleData build_counterexample_1d(const BumpSpec& t1, const BumpSpec& t2,
                                           const BumpSpec& t3,
                                           double eps_blend = 1e-3,
                                           double quad_tol = 1e-10);
CounterexampleData build_counterexample_1d(double eps_blend = 1e-3,
                                           double quad_tol = 1e-10);

enum class FattoriniMode { single, coupled };

// Eigen search request: test the `lowest` smallest Dirichlet eigenpairs,
// or, when `inserted` is set, test the given witness at eigenvalue s
// instead of eigensolving. psi is only read in coupled mode.
struct EigenSearchSpec {
  int lowest = 6;
  bool inserted = false;
  double s = 0.0;
  Expr phi, psi;
};

struct FattoriniReport {
  FattoriniMode mode = FattoriniMode::single;
  int n = 0;          // interior grid nodes
  double h = 0.0;
  double tol = 0.0;
  std::vector<double> eigenvalues;
  std::vector<double> eigen_residuals;  // max-norm stencil residuals, unit pair
  std::vector<double> window_values;    // max |phi'| on the window (single)
                                        // or max |phi| on it (coupled)
  int obstructed_index = -1;
  bool obstructed = false;

  std::string to_json_string() const;
};

// Obstruction test on an interval domain. single mode: eigenpairs of
// -phi'' - a phi = s phi, window value = max |phi'| over window nodes
// (centered differences for solved eigenvectors, the exact derivative for
// an inserted witness). coupled mode: -psi'' - a psi = s psi first, then
// -phi'' - psi' = s phi solved in the discrete sine basis with the
// resonant mode deflated and its free coefficient minimizing phi on the
// window; window value = max |phi| there. Verdict "obstructed" needs both
// the residual and the window value of some pair at or below tol after
// normalizing the pair to unit weighted norm.
FattoriniReport fattorini_check(const Expr& a, const EigenSearchSpec& spec,
                                double dom_lo, double dom_hi, double win_lo,
                                double win_hi, int n, FattoriniMode mode,
                                double tol);

// Eigenvector of the transpose one-step map with minimal control coupling,
// assembled from the field-2 tridiagonal eigenproblem and the sine-basis
// solve of the field-1 row, then combined with the nearest pure sine mode
// so that |B^T w| is minimized. Requires a 1D one-control system whose
// first row is the plain Laplacian and whose coupling is d/dx1.
struct DiscreteWitness {
  bool found = false;
  std::vector<double> w;    // interleaved state, unit norm
  double lambda = 0.0;      // one-step multiplier (Rayleigh value)
  double eigenvalue = 0.0;  // continuous eigenvalue of the generating pair
  double residual = 0.0;    // |S^T w - lambda w|
  double coupling = 0.0;    // |B^T w| / dt
  int candidates = 0;
};

DiscreteWitness find_invariant_witness(const DiscreteSystem& ds, const Expr& a,
                                       int lowest, double coupling_tol,
                                       double residual_tol = 1e-6);

// Max relative drift of <y(T), w> against lambda^steps <y0, w> with
// y0 = w, over the zero control plus `n_controls` uniform random control
// trajectories. Throws if the witness search did not qualify.
double invariant_functional_test(const DiscreteSystem& ds,
                                 const DiscreteWitness& witness, int n_controls,
                                 std::uint64_t seed);

}  // namespace fcm
