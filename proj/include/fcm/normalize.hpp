#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fcm/expr.hpp"
#include "fcm/system.hpp"

namespace fcm {

// Raised when a coordinate straightening cannot be carried out: the
// coupling drift vanishes or flips orientation, the characteristics leave
// the window, or the chart folds even at tiny extent.
struct NormalizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Axis-aligned seed surface x1 = x1: a point for N = 1, the segment
// {x1} x [z_lo, z_hi] for N = 2. eps_s = 0 derives the flow extent from
// the window; a positive value is the starting extent. Either way the
// extent is halved until the chart stays inside the window and keeps a
// non-degenerate Jacobian.
struct HypersurfaceSpec {
  double x1 = 0.0;
  double z_lo = 0.0, z_hi = 0.0;
  double eps_s = 0.0;
};

// Characteristic chart of the y1 -> y2 coupling drift. New coordinates
// are (t, s, z): t is untouched, s runs along the drift characteristics,
// z parametrizes the seed surface. chart and jac wrap tables over (s, z)
// filled by ODE integration; evaluation interpolates cubically, so the
// pieces stay usable inside expression trees.
struct FlowMap {
  int N = 1;
  HypersurfaceSpec base;
  double eps_s = 0.0;
  double t0 = 0.0, t1 = 0.0;
  std::vector<double> s_axis, z_axis;  // z_axis empty for N = 1
  std::vector<Expr> chart;  // x_k = chart[k](s, z), expression vars (t, s, z)
  std::vector<Expr> jac;    // row-major N x N, d chart / d (s, z)
  Expr det_j;               // determinant of jac
  Expr log_det;             // ln |det_j|, feeds the divergence-form drift

  // (s, z) with chart(s, z) = x, Newton iteration seeded from the nearest
  // table node. Throws NormalizeError when x is outside the chart range.
  std::vector<double> invert(const std::vector<double>& x) const;
  // One row per table node: t, s, z, chart components, det J.
  void export_csv(const std::string& path) const;
};

struct StraightenResult {
  ParabolicSystem sys;  // coefficients over (t, s, z)
  FlowMap flow;
};

// Pulls every coefficient back through the characteristic chart seeded on
// gamma, turning the first-order coupling g21.grad into exactly d/ds (the
// new a21 is the old one evaluated along the chart). Coefficients must be
// time-independent and g21 must be nonzero on the window with a constant
// orientation along x1 across the seed surface. Transformed coefficients
// come back as interpolated fields; the diffusion picks up the usual
// J^-1 d J^-T congruence plus the log-Jacobian drift of the
// divergence form.
StraightenResult straighten_coupling(const ParabolicSystem& sys,
                                     const HypersurfaceSpec& gamma,
                                     double ode_tol = 1e-9,
                                     int table_nodes = 65);

// Same, with the seed surface chosen automatically inside the window on
// the side the drift points away from.
StraightenResult straighten_coupling(const ParabolicSystem& sys,
                                     double ode_tol = 1e-9,
                                     int table_nodes = 65);

// Largest mismatch between the chart's s-velocity and the coupling drift,
// measured through smooth probe functions on a samples^dim grid over the
// chart. Bounded by O(ode_tol + h^2) for a healthy flow.
double coupling_residual(const FlowMap& flow, const ParabolicSystem& original,
                         int samples);

struct GaugeFunction {
  Expr theta;                // exp(-antiderivative of a21 along x1)
  double lower_bound = 0.0;  // sampled min |theta| on the domain
};

struct GaugeResult {
  ParabolicSystem sys;
  GaugeFunction gauge;
};

// Removes the zero-order coupling a21 by rescaling both unknowns with
// theta. Requires the coupling drift to be literally e1 (straightened
// form) and a21 to be time-independent. The returned system has a21
// identically zero and normal_form set; diffusion tensors are unchanged,
// drifts and potentials pick up the conjugation terms.
GaugeResult gauge_transform(const ParabolicSystem& sys);

}  // namespace fcm
