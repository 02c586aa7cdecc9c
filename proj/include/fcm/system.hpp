#pragma once

#include <vector>

#include "fcm/diffop.hpp"
#include "fcm/expr.hpp"
#include "fcm/geometry.hpp"

namespace fcm {

// Coefficient bundle of the coupled two-equation parabolic system
//
//   dt y1 = Div(d1 grad y1) + g11.grad y1 + a11 y1 + g12.grad y2 + a12 y2 + control
//   dt y2 = Div(d2 grad y2) + g22.grad y2 + a22 y2 + (g21.grad y1 + a21 y1)
//
// over a box domain in R^N, with an axis-aligned space-time control window.
// Expressions use variables (t, x1, .., xN). Diffusion tensors are stored as
// the upper triangle of a symmetric N x N matrix.
struct ParabolicSystem {
  int N = 0;
  std::vector<Expr> d1, d2;                // size N(N+1)/2, entry (i,j), i <= j
  std::vector<Expr> g11, g12, g21, g22;    // size N
  Expr a11, a12, a21, a22;
  Box domain;        // N-dimensional, space only
  Window window;     // (1+N)-dimensional, (t0,t1) x O
  double d0 = 0.0;   // ellipticity constant
  // When set, the y1 -> y2 coupling is declared to be exactly d/dx1
  // (g21 = e1, a21 = 0), the form the elimination machinery requires.
  bool normal_form = false;

  // Upper-triangle slot of (i,j), 1-based axes, i <= j after swap.
  static int tri_index(int N, int i, int j);
  const Expr& dmat(int which, int i, int j) const;  // which: 1 or 2

  // A system with d1 = d2 = Id, all drifts and potentials zero.
  static ParabolicSystem laplacian(int N, Box domain, Window window);
};

// Shape checks, window containment, and sampled uniform ellipticity
// (16 seeded random directions per sample point). Throws on violation.
void validate_system(const ParabolicSystem& sys);

// The operators the solvability pipeline works with:
//   L        2 x 3 rows applied to (z1, z2, v), rows of the controlled system
//   L0       1 x 2, the second row of L as a map of (z1, z2)
//   L1, L2   components of the formal adjoint of L0 (L1 = d/dx1)
//   L3       L2 - bracket o L1, free of x1-derivatives
//   bracket  the first-order operator whose composition with L1 removes
//            every x1-derivative from L2
struct SystemOperators {
  OpMatrix L;
  OpMatrix L0;
  LinDiffOp L1, L2, L3, bracket;

  SystemOperators(int nvars)
      : L(2, 3, nvars), L0(1, 2, nvars),
        L1(nvars), L2(nvars), L3(nvars), bracket(nvars) {}
};

// Requires sys.normal_form. The L2 returned is built from the closed-form
// coefficient expressions; tests cross-check it against op_adjoint.
SystemOperators build_system_operators(const ParabolicSystem& sys);

// dt - Div(d grad .) - g.grad - a, the building block of both rows.
LinDiffOp parabolic_row_op(int N, const std::vector<Expr>& d_upper,
                           const std::vector<Expr>& g, const Expr& a);

}  // namespace fcm
