#pragma once

#include "fcm/simulate.hpp"
#include "fcm/solvability.hpp"
#include "fcm/system.hpp"

namespace fcm::testing {

// 1D configuration used for the three-stage synthesis study: target pair
// supported strictly inside the window, its two-control right-hand sides,
// and the full solver for the window.
struct AssemblyCase {
  ParabolicSystem sys;
  Expr y1_hat, y2_hat;
  Expr u1_hat, u2_hat;
  AssembledSolver solver;
};

// The target pair is y-hat = w + m, where row two annihilates w (so the
// assembled state equals w up to round-off) and m matches what the solver
// reconstructs from u2-hat.  Sine-power windows keep the derivatives that
// enter the scheme's truncation error resolvable on coarse grids, unlike
// exponential bumps whose high derivatives concentrate near the support
// boundary.
inline AssemblyCase manufactured_assembly_case() {
  Box domain({0.0}, {1.0});
  Window window({0.05, 0.08}, {0.95, 0.92});
  auto sys = ParabolicSystem::laplacian(1, domain, window);
  sys.g21[0] = constant(1.0);
  sys.normal_form = true;
  sys.a11 = constant(-1.0);
  sys.a12 = constant(0.5);
  sys.a22 = negate(variable(1));

  Expr bt = sine_bump(0, 0.10, 0.90, 10);
  Expr btd = differentiate(bt, 0);
  Expr btdd = differentiate(btd, 0);
  Expr rho = sine_bump(1, 0.13, 0.87, 10);
  Expr r1 = differentiate(rho, 1);
  Expr r2 = differentiate(r1, 1);
  Expr r3 = differentiate(r2, 1);
  Expr x1 = variable(1);

  // w2 = bt'*rho'', w1 chosen so that dx(w1) = dt(w2) - dxx(w2) + x1*w2;
  // every antiderivative in that balance closes because rho appears one
  // derivative up.
  Expr aw = constant(1e-6);
  Expr w2 = mul(aw, mul(btd, r2));
  Expr w1 = mul(aw, sum({mul(btdd, r1), negate(mul(btd, r3)),
                         mul(btd, sub(mul(x1, r1), rho))}));

  Expr u2h = mul(constant(1e-2), mul(bt, sine_bump(1, 0.15, 0.85, 10)));
  Expr m1 = sum({negate(differentiate(u2h, 0)), differentiate(differentiate(u2h, 1), 1),
                 negate(mul(x1, u2h))});
  Expr m2 = negate(differentiate(u2h, 1));

  Expr y1h = add(w1, m1);
  Expr y2h = add(w2, m2);

  auto ops = build_system_operators(sys);
  auto rows = op_matrix_apply(ops.L, {y1h, y2h, constant(0.0)});
  auto elim = eliminate(ops.L1, ops.L3, sys.window, 0.0);
  return {sys, y1h, y2h, rows[0], u2h, assemble_full_solver(sys, elim)};
}

inline Grid assembly_grid(const ParabolicSystem& sys, int cells) {
  return Grid(1, {cells - 1}, sys.domain, 1.0 / cells, 1.0);
}

}  // namespace fcm::testing
