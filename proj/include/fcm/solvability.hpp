#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fcm/diffop.hpp"
#include "fcm/geometry.hpp"
#include "fcm/system.hpp"

namespace fcm {

// Raised when the algebraic solvability machinery cannot proceed on the
// given window (coefficient membership, un-selectable coefficients,
// degenerate windows, expression blow-up).
class SolvabilityError : public std::runtime_error {
 public:
  explicit SolvabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Decomposition N = A o L1 + B o L2 carried through the elimination loop.
struct PairDecomposition {
  LinDiffOp A, B;
};

struct EliminationResult {
  LinDiffOp M1, M2;
  Window final_window;
  int steps = 0;
  Expr multiplier;       // the zero-order coefficient the loop ends on
  int order = 0;         // max(order(M1), order(M2))
  int order_bound = 0;   // sum over steps of the pre-step operator order
};

enum class Verdict { holds, fails, inconclusive };

std::string verdict_name(Verdict v);

struct SliceResidual {
  std::vector<double> slice_point;  // fixed (t, x2..xN) values
  double residual = 0.0;            // ||r||_2 / ||a~22||_2 over the x1 samples
};

struct ConditionReport {
  Verdict verdict = Verdict::inconclusive;
  Window witness;
  std::vector<SliceResidual> slices;
  double tol = 0.0;
};

struct SamplingSpec {
  int slice_per_axis = 8;  // slice grid density in t and x2..xN
  int x1_samples = 24;     // x1 sample count per slice
};

// Per-slice least squares of the zero-order coefficient of L3 against the
// span of {1} and the derivative-term coefficients of L3, x1 sampled along
// the slice. Verdict "holds" needs a slice residual >= 10*tol, "fails"
// needs all residuals <= tol.
ConditionReport check_condition(const ParabolicSystem& sys, const Window& window,
                                const SamplingSpec& grid, double tol);

// Commutator-elimination loop producing M1, M2 with M1 o L1 + M2 o L2 = Id
// on the final window. L1 must be d/dx1 and L2 must carry no x1-derivatives.
// delta <= 0 selects the default threshold 1e-6 * (max sampled coefficient
// magnitude). Throws SolvabilityError when the zero-order coefficient
// vanishes with everything else (module membership) or no sub-box
// qualifies.
EliminationResult eliminate(const LinDiffOp& L1, const LinDiffOp& L2,
                            const Window& window, double delta);

struct AssembledSolver {
  OpMatrix M;      // 3 x 2: rows (z1, z2, v) against columns (f1, f2)
  int order = 0;   // max entry order
  Window window;
};

// Turns the scalar pair identity into a right inverse of the full two-row
// system operator: adjoint-transposes (M1~, M2~), then back-substitutes the
// first row to recover the v component.
AssembledSolver assemble_full_solver(const ParabolicSystem& sys,
                                     const EliminationResult& elim);

// Max relative residual of (L o M - Id) u over random smooth test functions
// u evaluated at random points of the window.
double verify_identity(const LinDiffOp& L, const LinDiffOp& M, const Window& window,
                       int trials, std::uint64_t seed = 0x1d37u);
double verify_identity(const OpMatrix& L, const OpMatrix& M, const Window& window,
                       int trials, std::uint64_t seed = 0x1d37u);

// Residual of N = A o L1 + B o L2 over `trials` random test functions.
double pair_residual(const LinDiffOp& N, const PairDecomposition& pair,
                     const LinDiffOp& L1, const LinDiffOp& L2,
                     const Window& window, int trials, std::uint64_t seed = 0xfeedu);

std::string to_json_string(const ConditionReport& report);
std::string to_json_string(const EliminationResult& result);

}  // namespace fcm
