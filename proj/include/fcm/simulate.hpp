#pragma once

#include <string>
#include <vector>

#include "fcm/expr.hpp"
#include "fcm/geometry.hpp"
#include "fcm/linalg.hpp"
#include "fcm/solvability.hpp"
#include "fcm/system.hpp"

namespace fcm {

// Uniform tensor grid of interior nodes (Dirichlet values live on the
// excluded boundary layer) with a fixed-step time axis. dt is snapped so
// that an integer number of steps lands exactly on T.
struct Grid {
  int N = 1;
  std::vector<int> nodes;  // interior nodes per axis
  Box domain;
  double dt = 0.0;
  double T = 0.0;

  Grid(int dim, std::vector<int> interior_nodes, Box dom, double step, double horizon);

  int node_count() const;
  int steps() const { return steps_; }
  double h(int axis) const;
  // Spatial coordinates of a flat node index, axis 0 fastest.
  std::vector<double> point(int flat) const;

 private:
  int steps_ = 0;
};

enum class ControlMode { one_control, two_control };

// One-step maps of the implicit theta-scheme for the two-field system:
// y_{k+1} = S y_k + B u_k with S = E^{-1} X, B = E^{-1} dt Mask, and the
// exact transposes of both, shared through one banded LU of E. Fields are
// interleaved per node (2g for field 1, 2g+1 for field 2).
class DiscreteSystem {
 public:
  DiscreteSystem(const ParabolicSystem& sys, const Grid& grid, double theta,
                 ControlMode mode);

  const Grid& grid() const { return grid_; }
  ControlMode mode() const { return mode_; }
  double theta() const { return theta_; }
  int state_size() const { return 2 * grid_.node_count(); }
  int control_size() const;
  const std::vector<double>& mask() const { return mask_; }

  std::vector<double> step(const std::vector<double>& y,
                           const std::vector<double>& u) const;
  std::vector<double> step_free(const std::vector<double>& y) const;
  // One step with a raw, unmasked state-sized source (manufactured data).
  std::vector<double> step_source(const std::vector<double>& y,
                                  const std::vector<double>& s) const;
  std::vector<double> transpose_state(const std::vector<double>& q) const;
  std::vector<double> transpose_control(const std::vector<double>& q) const;

  // L2-weighted inner product on state vectors (h^N per node).
  double state_dot(const std::vector<double>& a, const std::vector<double>& b) const;
  double cell_volume() const { return cell_volume_; }

  // Residual of one theta-step fed with exact samples: (E y1 - X y0)/dt - M uc,
  // where uc is the control sample matching the scheme's quadrature point.
  std::vector<double> step_residual(const std::vector<double>& y0,
                                    const std::vector<double>& y1,
                                    const std::vector<double>& uc) const;

 private:
  Grid grid_;
  double theta_;
  ControlMode mode_;
  double cell_volume_;
  BandedMatrix E_, X_;
  BandedLU lu_;
  std::vector<double> mask_;  // per node

  std::vector<double> inject(const std::vector<double>& u) const;
};

DiscreteSystem discretize(const ParabolicSystem& sys, const Grid& grid,
                          double theta, ControlMode mode);

// Marches y0 through all time steps. u may be empty (free evolution) or
// hold one control vector per step. Throws on non-finite values, naming
// the step where the blow-up appeared.
std::vector<std::vector<double>> solve_forward(
    const DiscreteSystem& ds, std::vector<double> y0,
    const std::vector<std::vector<double>>& u);

struct HUMResult {
  double eps = 0.0;
  std::vector<std::vector<double>> control;     // per step
  std::vector<std::vector<double>> trajectory;  // per time node
  double terminal_norm = 0.0;  // weighted L2 of y(T)
  double control_norm = 0.0;   // weighted L2 over the cylinder
  double cost = 0.0;
  std::vector<double> costs;   // cost per CG iterate, non-increasing
  int iterations = 0;
  bool converged = false;
};

// Penalized quadratic synthesis: minimizes
//   J(u) = 1/2 ||u||^2 + 1/(2 eps) ||y_u(T)||^2
// by conjugate gradients on the control space, using the exact transpose
// of the one-step maps for the gradient.
HUMResult hum_control(const DiscreteSystem& ds, const std::vector<double>& y0,
                      double eps, double cg_tol, int max_iter = 600);

struct AssemblyReport {
  double residual = 0.0;       // max theta-scheme residual of (y, u)
  double terminal_norm = 0.0;  // max |y(T)| over nodes
  double support_leak = 0.0;   // max |(z, v)| sampled outside the window
  bool support_inside = false;
  double h = 0.0;
};

// Three-stage synthesis on manufactured data: (z, v) := M(u_hat),
// (y, u) := (y_hat - z, -v), then the one-control residual of (y, u) is
// measured with the Crank-Nicolson stencil on the given grid. u1_hat and
// u2_hat must be the two-control right-hand sides of y_hat.
AssemblyReport fictitious_assembly(const ParabolicSystem& sys, const Grid& grid,
                                   const Expr& y1_hat, const Expr& y2_hat,
                                   const Expr& u1_hat, const Expr& u2_hat,
                                   const AssembledSolver& solver);

void export_trajectory_csv(const std::string& path, const DiscreteSystem& ds,
                           const std::vector<std::vector<double>>& traj,
                           const std::vector<std::vector<double>>& control);

struct SweepEntry {
  double eps = 0.0;
  double terminal_norm = 0.0;
  double control_norm = 0.0;
  int iterations = 0;
};

void export_sweep_csv(const std::string& path, const std::vector<SweepEntry>& rows);

}  // namespace fcm
