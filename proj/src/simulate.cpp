#include "fcm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fcm {

namespace {

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Grid::Grid(int dim, std::vector<int> interior_nodes, Box dom, double step,
           double horizon)
    : N(dim), nodes(std::move(interior_nodes)), domain(std::move(dom)), dt(step),
      T(horizon) {
  if (N < 1 || N > 2) throw std::invalid_argument("Grid: dimension must be 1 or 2");
  if (static_cast<int>(nodes.size()) != N || domain.dim() != N)
    throw std::invalid_argument("Grid: axis count mismatch");
  for (int n : nodes)
    if (n < 3) throw std::invalid_argument("Grid: need at least 3 interior nodes per axis");
  if (!(dt > 0.0) || !(T > 0.0)) throw std::invalid_argument("Grid: dt and T must be positive");
  steps_ = std::max(1, static_cast<int>(std::lround(T / dt)));
  dt = T / steps_;
}

int Grid::node_count() const {
  int c = 1;
  for (int n : nodes) c *= n;
  return c;
}

double Grid::h(int axis) const {
  return domain.extent(axis) / (nodes[static_cast<size_t>(axis)] + 1);
}

std::vector<double> Grid::point(int flat) const {
  std::vector<double> p(static_cast<size_t>(N));
  for (int a = 0; a < N; ++a) {
    int n = nodes[static_cast<size_t>(a)];
    int i = flat % n;
    flat /= n;
    p[static_cast<size_t>(a)] = domain.lo[static_cast<size_t>(a)] + (i + 1) * h(a);
  }
  return p;
}

namespace {

// Evaluates a spatial coefficient at t = 0, rejecting time dependence.
class CoeffSampler {
 public:
  explicit CoeffSampler(int dim) : dim_(dim) {}

  double operator()(const Expr& e, const std::vector<double>& x) {
    std::vector<double> p(static_cast<size_t>(dim_ + 1), 0.0);
    for (int a = 0; a < dim_; ++a) p[static_cast<size_t>(a + 1)] = x[static_cast<size_t>(a)];
    double v0 = evaluate(e, p);
    if (!checked_.insert(&e.node()).second) return v0;
    p[0] = 0.37;
    double v1 = evaluate(e, p);
    if (std::abs(v1 - v0) > 1e-12 * std::max({1.0, std::abs(v0), std::abs(v1)}))
      throw std::invalid_argument(
          "discretize: time-dependent coefficients are not supported");
    return v0;
  }

 private:
  int dim_;
  std::set<const void*> checked_;
};

}  // namespace

DiscreteSystem::DiscreteSystem(const ParabolicSystem& sys, const Grid& grid,
                               double theta, ControlMode mode)
    : grid_(grid), theta_(theta), mode_(mode), cell_volume_(1.0),
      E_(2 * grid.node_count(), grid.N == 1 ? 3 : 2 * grid.nodes[0] + 3,
         grid.N == 1 ? 3 : 2 * grid.nodes[0] + 3),
      X_(E_.n(), E_.kl(), E_.ku()),
      lu_([&] {
        if (sys.N != grid.N) throw std::invalid_argument("discretize: dimension mismatch");
        if (theta != 1.0 && theta != 0.5)
          throw std::invalid_argument("discretize: theta must be 1 or 1/2");
        validate_system(sys);

        int nn = grid.node_count();
        CoeffSampler coeff(grid.N);

        // Dense-per-node assembly of the spatial operator into E and X.
        // A acts on interleaved fields; neighbor offsets are per spatial
        // axis with Dirichlet zero outside the interior block.
        auto flat_shift = [&](int flat, int axis, int delta) -> int {
          int n0 = grid.nodes[0];
          if (grid.N == 1) {
            int i = flat + delta;
            return (i < 0 || i >= n0) ? -1 : i;
          }
          int i = flat % n0, j = flat / n0;
          if (axis == 0)
            i += delta;
          else
            j += delta;
          if (i < 0 || i >= n0 || j < 0 || j >= grid.nodes[1]) return -1;
          return i + n0 * j;
        };

        auto add_entry = [&](int row, int col, double v) {
          if (col < 0) return;  // Dirichlet neighbor
          E_.at(row, col) += -theta * grid.dt * v;
          X_.at(row, col) += (1.0 - theta) * grid.dt * v;
        };

        for (int g = 0; g < nn; ++g) {
          auto x = grid.point(g);
          for (int f = 0; f < 2; ++f) {
            int row = 2 * g + f;
            const auto& d = f == 0 ? sys.d1 : sys.d2;
            const auto& g_self = f == 0 ? sys.g11 : sys.g22;
            const auto& g_cross = f == 0 ? sys.g12 : sys.g21;
            const Expr& a_self = f == 0 ? sys.a11 : sys.a22;
            const Expr& a_cross = f == 0 ? sys.a12 : sys.a21;
            int self = f, cross = 1 - f;

            // Div(d grad y_f): flux form on the diagonal, centered cross
            // terms for the off-diagonal tensor entries.
            for (int i = 0; i < grid.N; ++i) {
              double hi = grid.h(i);
              const Expr& dii = d[static_cast<size_t>(
                  ParabolicSystem::tri_index(grid.N, i + 1, i + 1))];
              auto xp = x, xm = x;
              xp[static_cast<size_t>(i)] += 0.5 * hi;
              xm[static_cast<size_t>(i)] -= 0.5 * hi;
              double dp = coeff(dii, xp), dm = coeff(dii, xm);
              int gp = flat_shift(g, i, 1), gm = flat_shift(g, i, -1);
              add_entry(row, gp >= 0 ? 2 * gp + self : -1, dp / (hi * hi));
              add_entry(row, row, -(dp + dm) / (hi * hi));
              add_entry(row, gm >= 0 ? 2 * gm + self : -1, dm / (hi * hi));
              for (int j = 0; j < grid.N; ++j) {
                if (j == i) continue;
                const Expr& dij = d[static_cast<size_t>(
                    ParabolicSystem::tri_index(grid.N, i + 1, j + 1))];
                double hj = grid.h(j);
                // d/dx_i (d_ij d/dx_j y) with central differences.
                for (int si = -1; si <= 1; si += 2) {
                  int gi = flat_shift(g, i, si);
                  if (gi < 0) continue;
                  auto xi = grid.point(gi);
                  double c = si * coeff(dij, xi) / (2.0 * hi);
                  for (int sj = -1; sj <= 1; sj += 2) {
                    int gij = flat_shift(gi, j, sj);
                    add_entry(row, gij >= 0 ? 2 * gij + self : -1,
                              c * sj / (2.0 * hj));
                  }
                }
              }
            }

            // First-order self and cross drifts, centered.
            for (int i = 0; i < grid.N; ++i) {
              double hi = grid.h(i);
              double gs = coeff(g_self[static_cast<size_t>(i)], x);
              double gc = coeff(g_cross[static_cast<size_t>(i)], x);
              int gp = flat_shift(g, i, 1), gm = flat_shift(g, i, -1);
              add_entry(row, gp >= 0 ? 2 * gp + self : -1, gs / (2.0 * hi));
              add_entry(row, gm >= 0 ? 2 * gm + self : -1, -gs / (2.0 * hi));
              add_entry(row, gp >= 0 ? 2 * gp + cross : -1, gc / (2.0 * hi));
              add_entry(row, gm >= 0 ? 2 * gm + cross : -1, -gc / (2.0 * hi));
            }

            add_entry(row, row, coeff(a_self, x));
            add_entry(row, 2 * g + cross, coeff(a_cross, x));
          }
        }
        for (int r = 0; r < E_.n(); ++r) {
          E_.at(r, r) += 1.0;
          X_.at(r, r) += 1.0;
        }
        return BandedLU(E_);
      }()) {
  for (int a = 0; a < grid_.N; ++a) cell_volume_ *= grid_.h(a);

  // Mollified indicator of the spatial window: smoothstep ramp two cells
  // wide on each face.
  int nn = grid_.node_count();
  mask_.assign(static_cast<size_t>(nn), 1.0);
  for (int g = 0; g < nn; ++g) {
    auto x = grid_.point(g);
    double m = 1.0;
    for (int a = 0; a < grid_.N; ++a) {
      double lo = sys.window.lo[static_cast<size_t>(a + 1)];
      double hi = sys.window.hi[static_cast<size_t>(a + 1)];
      double ramp = 2.0 * grid_.h(a);
      double s = std::min(x[static_cast<size_t>(a)] - lo, hi - x[static_cast<size_t>(a)]) / ramp;
      m *= smoothstep(s);
    }
    mask_[static_cast<size_t>(g)] = m;
  }
}

int DiscreteSystem::control_size() const {
  return mode_ == ControlMode::two_control ? 2 * grid_.node_count()
                                           : grid_.node_count();
}

std::vector<double> DiscreteSystem::inject(const std::vector<double>& u) const {
  int nn = grid_.node_count();
  std::vector<double> s(static_cast<size_t>(2 * nn), 0.0);
  for (int g = 0; g < nn; ++g) {
    s[static_cast<size_t>(2 * g)] = mask_[static_cast<size_t>(g)] * u[static_cast<size_t>(g)];
    if (mode_ == ControlMode::two_control)
      s[static_cast<size_t>(2 * g + 1)] =
          mask_[static_cast<size_t>(g)] * u[static_cast<size_t>(g + nn)];
  }
  return s;
}

std::vector<double> DiscreteSystem::step(const std::vector<double>& y,
                                         const std::vector<double>& u) const {
  if (static_cast<int>(u.size()) != control_size())
    throw std::invalid_argument("step: control size mismatch");
  auto rhs = X_.apply(y);
  auto src = inject(u);
  for (size_t i = 0; i < rhs.size(); ++i) rhs[i] += grid_.dt * src[i];
  return lu_.solve(std::move(rhs));
}

std::vector<double> DiscreteSystem::step_free(const std::vector<double>& y) const {
  return lu_.solve(X_.apply(y));
}

std::vector<double> DiscreteSystem::step_source(const std::vector<double>& y,
                                                const std::vector<double>& s) const {
  if (s.size() != y.size()) throw std::invalid_argument("step_source: size mismatch");
  auto rhs = X_.apply(y);
  for (size_t i = 0; i < rhs.size(); ++i) rhs[i] += grid_.dt * s[i];
  return lu_.solve(std::move(rhs));
}

std::vector<double> DiscreteSystem::transpose_state(const std::vector<double>& q) const {
  return X_.apply_transpose(lu_.solve_transpose(q));
}

std::vector<double> DiscreteSystem::transpose_control(const std::vector<double>& q) const {
  auto w = lu_.solve_transpose(q);
  int nn = grid_.node_count();
  std::vector<double> u(static_cast<size_t>(control_size()), 0.0);
  for (int g = 0; g < nn; ++g) {
    u[static_cast<size_t>(g)] =
        grid_.dt * mask_[static_cast<size_t>(g)] * w[static_cast<size_t>(2 * g)];
    if (mode_ == ControlMode::two_control)
      u[static_cast<size_t>(g + nn)] =
          grid_.dt * mask_[static_cast<size_t>(g)] * w[static_cast<size_t>(2 * g + 1)];
  }
  return u;
}

double DiscreteSystem::state_dot(const std::vector<double>& a,
                                 const std::vector<double>& b) const {
  return cell_volume_ * dot(a, b);
}

std::vector<double> DiscreteSystem::step_residual(const std::vector<double>& y0,
                                                  const std::vector<double>& y1,
                                                  const std::vector<double>& uc) const {
  auto lhs = E_.apply(y1);
  auto rhs = X_.apply(y0);
  auto src = inject(uc);
  std::vector<double> r(lhs.size());
  for (size_t i = 0; i < r.size(); ++i)
    r[i] = (lhs[i] - rhs[i]) / grid_.dt - src[i];
  return r;
}

DiscreteSystem discretize(const ParabolicSystem& sys, const Grid& grid,
                          double theta, ControlMode mode) {
  return DiscreteSystem(sys, grid, theta, mode);
}

std::vector<std::vector<double>> solve_forward(
    const DiscreteSystem& ds, std::vector<double> y0,
    const std::vector<std::vector<double>>& u) {
  if (static_cast<int>(y0.size()) != ds.state_size())
    throw std::invalid_argument("solve_forward: state size mismatch");
  if (!u.empty() && static_cast<int>(u.size()) != ds.grid().steps())
    throw std::invalid_argument("solve_forward: control trajectory length mismatch");
  std::vector<std::vector<double>> traj;
  traj.reserve(static_cast<size_t>(ds.grid().steps()) + 1);
  traj.push_back(std::move(y0));
  for (int k = 0; k < ds.grid().steps(); ++k) {
    auto next = u.empty() ? ds.step_free(traj.back())
                          : ds.step(traj.back(), u[static_cast<size_t>(k)]);
    for (double v : next)
      if (!std::isfinite(v))
        throw std::runtime_error("solve_forward: non-finite state at step " +
                                 std::to_string(k + 1));
    traj.push_back(std::move(next));
  }
  return traj;
}

HUMResult hum_control(const DiscreteSystem& ds, const std::vector<double>& y0,
                      double eps, double cg_tol, int max_iter) {
  if (!(eps > 0.0)) throw std::invalid_argument("hum_control: eps must be positive");
  int M = ds.grid().steps();
  int nc = ds.control_size();
  size_t stacked = static_cast<size_t>(M) * static_cast<size_t>(nc);
  double w_state = ds.cell_volume();
  double w_ctrl = ds.grid().dt * ds.cell_volume();

  auto unstack = [&](const std::vector<double>& u) {
    std::vector<std::vector<double>> out(static_cast<size_t>(M));
    for (int k = 0; k < M; ++k)
      out[static_cast<size_t>(k)].assign(
          u.begin() + static_cast<long>(k) * nc,
          u.begin() + static_cast<long>(k + 1) * nc);
    return out;
  };

  // Terminal state of the control-to-state map with zero initial data.
  auto apply_G = [&](const std::vector<double>& u) {
    std::vector<double> y(static_cast<size_t>(ds.state_size()), 0.0);
    for (int k = 0; k < M; ++k) {
      std::vector<double> uk(u.begin() + static_cast<long>(k) * nc,
                             u.begin() + static_cast<long>(k + 1) * nc);
      y = ds.step(y, uk);
    }
    return y;
  };
  // Adjoint of G with respect to the weighted pairings.
  auto apply_Gt = [&](const std::vector<double>& z) {
    std::vector<double> out(stacked, 0.0);
    std::vector<double> q = z;
    for (int k = M - 1; k >= 0; --k) {
      auto uk = ds.transpose_control(q);
      for (int i = 0; i < nc; ++i)
        out[static_cast<size_t>(k) * static_cast<size_t>(nc) + static_cast<size_t>(i)] =
            uk[static_cast<size_t>(i)] / ds.grid().dt;
      q = ds.transpose_state(q);
    }
    return out;
  };

  auto free_traj = solve_forward(ds, y0, {});
  const auto& yT_free = free_traj.back();

  std::vector<double> b = apply_Gt(yT_free);
  for (auto& v : b) v /= -eps;
  auto apply_A = [&](const std::vector<double>& u) {
    auto gu = apply_G(u);
    auto out = apply_Gt(gu);
    for (size_t i = 0; i < stacked; ++i) out[i] = u[i] + out[i] / eps;
    return out;
  };

  auto cg = conjugate_gradient(apply_A, b, cg_tol, max_iter);

  HUMResult res;
  res.eps = eps;
  res.iterations = cg.iterations;
  res.converged = cg.residual <= cg_tol;
  res.control = unstack(cg.x);
  res.trajectory = solve_forward(ds, y0, res.control);
  const auto& yT = res.trajectory.back();
  res.terminal_norm = std::sqrt(ds.state_dot(yT, yT));
  res.control_norm = std::sqrt(w_ctrl * dot(cg.x, cg.x));
  res.cost = 0.5 * res.control_norm * res.control_norm +
             res.terminal_norm * res.terminal_norm / (2.0 * eps);
  double j0 = w_state * dot(yT_free, yT_free) / (2.0 * eps);
  for (double obj : cg.objectives) res.costs.push_back(w_ctrl * obj + j0);
  return res;
}

AssemblyReport fictitious_assembly(const ParabolicSystem& sys, const Grid& grid,
                                   const Expr& y1_hat, const Expr& y2_hat,
                                   const Expr& u1_hat, const Expr& u2_hat,
                                   const AssembledSolver& solver) {
  auto zv = op_matrix_apply(solver.M, {u1_hat, u2_hat});
  Expr z1 = zv[0], z2 = zv[1], v = zv[2];
  Expr y1 = sub(y1_hat, z1), y2 = sub(y2_hat, z2), u = negate(v);

  DiscreteSystem ds(sys, grid, 0.5, ControlMode::one_control);
  int nn = grid.node_count();
  int K = grid.steps();

  auto sample_pair = [&](double t) {
    std::vector<double> s(static_cast<size_t>(2 * nn));
    for (int g = 0; g < nn; ++g) {
      auto x = grid.point(g);
      std::vector<double> p{t};
      p.insert(p.end(), x.begin(), x.end());
      s[static_cast<size_t>(2 * g)] = evaluate(y1, p);
      s[static_cast<size_t>(2 * g + 1)] = evaluate(y2, p);
    }
    return s;
  };
  auto sample_control = [&](double t) {
    std::vector<double> s(static_cast<size_t>(nn));
    for (int g = 0; g < nn; ++g) {
      auto x = grid.point(g);
      std::vector<double> p{t};
      p.insert(p.end(), x.begin(), x.end());
      s[static_cast<size_t>(g)] = evaluate(u, p);
    }
    return s;
  };

  AssemblyReport rep;
  rep.h = grid.h(0);
  auto prev = sample_pair(0.0);
  for (int k = 0; k < K; ++k) {
    auto next = sample_pair((k + 1) * grid.dt);
    auto uc = sample_control((k + 0.5) * grid.dt);
    auto r = ds.step_residual(prev, next, uc);
    for (double x : r) rep.residual = std::max(rep.residual, std::abs(x));
    prev = std::move(next);
  }
  for (double x : prev) rep.terminal_norm = std::max(rep.terminal_norm, std::abs(x));

  for (int k = 0; k <= K; ++k) {
    double t = k * grid.dt;
    for (int g = 0; g < nn; ++g) {
      auto x = grid.point(g);
      std::vector<double> p{t};
      p.insert(p.end(), x.begin(), x.end());
      if (sys.window.contains(p)) continue;
      for (const Expr* e : {&z1, &z2, &v})
        rep.support_leak = std::max(rep.support_leak, std::abs(evaluate(*e, p)));
    }
  }
  rep.support_inside = rep.support_leak == 0.0;
  return rep;
}

void export_trajectory_csv(const std::string& path, const DiscreteSystem& ds,
                           const std::vector<std::vector<double>>& traj,
                           const std::vector<std::vector<double>>& control) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_trajectory_csv: cannot open " + path);
  const auto& g = ds.grid();
  out << "t,";
  for (int a = 0; a < g.N; ++a) out << "x" << a + 1 << ",";
  out << "y1,y2,u\n";
  out << "s,";
  for (int a = 0; a < g.N; ++a) out << "m,";
  out << "1,1,1\n";
  int nn = g.node_count();
  for (size_t k = 0; k < traj.size(); ++k) {
    double t = static_cast<double>(k) * g.dt;
    for (int n = 0; n < nn; ++n) {
      out << fmt(t) << ",";
      auto x = g.point(n);
      for (double c : x) out << fmt(c) << ",";
      double uval = 0.0;
      if (k < control.size() && !control[k].empty()) uval = control[k][static_cast<size_t>(n)];
      out << fmt(traj[k][static_cast<size_t>(2 * n)]) << ","
          << fmt(traj[k][static_cast<size_t>(2 * n + 1)]) << "," << fmt(uval) << "\n";
    }
  }
}

void export_sweep_csv(const std::string& path, const std::vector<SweepEntry>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_sweep_csv: cannot open " + path);
  out << "eps,terminal_norm,control_norm,iterations\n";
  out << "1,1,1,count\n";
  for (const auto& r : rows)
    out << fmt(r.eps) << "," << fmt(r.terminal_norm) << "," << fmt(r.control_norm)
        << "," << r.iterations << "\n";
}

}  // namespace fcm
