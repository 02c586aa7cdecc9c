#include "fcm/normalize.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>
#include <utility>

#include "fcm/field.hpp"
#include "fcm/geometry.hpp"
#include "fcm/ode.hpp"

namespace fcm {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Box spatial_part(const Window& w) {
  Box b;
  b.lo.assign(w.lo.begin() + 1, w.lo.end());
  b.hi.assign(w.hi.begin() + 1, w.hi.end());
  return b;
}

std::vector<double> uniform_axis(double lo, double hi, int n) {
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    xs[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return xs;
}

void collect_coeffs(const ParabolicSystem& sys,
                    std::vector<std::pair<std::string, const Expr*>>& out,
                    bool a21_only) {
  out.emplace_back("a21", &sys.a21);
  if (a21_only) return;
  auto vec = [&](const char* name, const std::vector<Expr>& v) {
    for (std::size_t k = 0; k < v.size(); ++k)
      out.emplace_back(std::string(name) + "[" + std::to_string(k) + "]", &v[k]);
  };
  vec("d1", sys.d1);
  vec("d2", sys.d2);
  vec("g11", sys.g11);
  vec("g12", sys.g12);
  vec("g21", sys.g21);
  vec("g22", sys.g22);
  out.emplace_back("a11", &sys.a11);
  out.emplace_back("a12", &sys.a12);
  out.emplace_back("a22", &sys.a22);
}

// Straightening freezes coefficients at one time slice, so reject anything
// that actually moves in t.
void require_time_independent(const ParabolicSystem& sys, const char* who,
                              bool a21_only) {
  std::vector<std::pair<std::string, const Expr*>> coeffs;
  collect_coeffs(sys, coeffs, a21_only);
  double t0 = sys.window.lo[0], t1 = sys.window.hi[0];
  const double ts[3] = {t0, t0 + 0.37 * (t1 - t0), t1};
  auto pts = grid_points(spatial_part(sys.window), 4);
  for (const auto& [name, e] : coeffs) {
    for (const auto& x : pts) {
      Point at(x.size() + 1);
      std::copy(x.begin(), x.end(), at.begin() + 1);
      at[0] = ts[0];
      double ref = evaluate(*e, at);
      for (double t : {ts[1], ts[2]}) {
        at[0] = t;
        double v = evaluate(*e, at);
        if (std::abs(v - ref) > 1e-11 * std::max(1.0, std::abs(ref)))
          throw NormalizeError(std::string(who) + ": coefficient " + name +
                               " depends on t");
      }
    }
  }
}

// Everything tabulated along the characteristics of one attempt. Values
// are stored in FieldTable order: s outer, z inner.
struct FlowTables {
  std::vector<double> s_axis, z_axis;
  std::vector<std::vector<double>> phi;   // N components
  std::vector<std::vector<double>> jac;   // N*N entries, row-major
  std::vector<double> det;
};

struct FlowEscape : std::exception {
  const char* what() const noexcept override { return "flow left the window"; }
};

// Integrates d/ds phi = g21(phi) together with its z-variation from every
// seed node, then checks containment and Jacobian health. Throws
// FlowEscape when the attempt needs a smaller extent.
FlowTables tabulate_flow(const ParabolicSystem& sys, const HypersurfaceSpec& g,
                         double eps, int ns, int nz, double ode_tol,
                         double t_ref) {
  const int N = sys.N;
  FlowTables tab;
  tab.s_axis = uniform_axis(0.0, eps, ns);
  if (N == 2) tab.z_axis = uniform_axis(g.z_lo, g.z_hi, nz);
  const int cols = N == 2 ? nz : 1;
  const std::size_t total = static_cast<std::size_t>(ns) * static_cast<std::size_t>(cols);
  tab.phi.assign(static_cast<std::size_t>(N), std::vector<double>(total));
  tab.jac.assign(static_cast<std::size_t>(N * N), std::vector<double>(total));
  tab.det.assign(total, 0.0);

  std::vector<std::vector<Expr>> dg(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < N; ++j)
      dg[static_cast<std::size_t>(k)].push_back(differentiate(sys.g21[static_cast<std::size_t>(k)], j + 1));

  auto run_column = [&](int col) {
    Point at(static_cast<std::size_t>(N) + 1, 0.0);
    at[0] = t_ref;
    auto drift = [&](const std::vector<double>& y, std::vector<double>& dy) {
      for (int k = 0; k < N; ++k) at[static_cast<std::size_t>(k) + 1] = y[static_cast<std::size_t>(k)];
      for (int k = 0; k < N; ++k)
        dy[static_cast<std::size_t>(k)] = evaluate(sys.g21[static_cast<std::size_t>(k)], at);
      if (N == 2) {
        // variational part dV/ds = Dg V
        for (int k = 0; k < N; ++k) {
          double acc = 0.0;
          for (int j = 0; j < N; ++j)
            acc += evaluate(dg[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)], at) *
                   y[static_cast<std::size_t>(N + j)];
          dy[static_cast<std::size_t>(N + k)] = acc;
        }
      }
    };
    OdeFn f = [&](double, const std::vector<double>& y, std::vector<double>& dy) {
      drift(y, dy);
    };
    std::vector<double> y0;
    if (N == 1) {
      y0 = {g.x1};
    } else {
      double z = tab.z_axis[static_cast<std::size_t>(col)];
      y0 = {g.x1, z, 0.0, 1.0};
    }
    auto states = integrate_ode_at(f, std::move(y0), 0.0, tab.s_axis, ode_tol,
                                   ode_tol * 1e-3);
    Point gat(static_cast<std::size_t>(N) + 1, 0.0);
    gat[0] = t_ref;
    for (int is = 0; is < ns; ++is) {
      const auto& y = states[static_cast<std::size_t>(is)];
      std::size_t node = static_cast<std::size_t>(is) * static_cast<std::size_t>(cols) +
                         static_cast<std::size_t>(col);
      for (int k = 0; k < N; ++k) {
        tab.phi[static_cast<std::size_t>(k)][node] = y[static_cast<std::size_t>(k)];
        gat[static_cast<std::size_t>(k) + 1] = y[static_cast<std::size_t>(k)];
      }
      // J column s is the drift itself, column z the variation
      for (int k = 0; k < N; ++k)
        tab.jac[static_cast<std::size_t>(k * N)][node] =
            evaluate(sys.g21[static_cast<std::size_t>(k)], gat);
      if (N == 2)
        for (int k = 0; k < N; ++k)
          tab.jac[static_cast<std::size_t>(k * N + 1)][node] = y[static_cast<std::size_t>(N + k)];
      tab.det[node] = N == 1 ? tab.jac[0][node]
                             : tab.jac[0][node] * tab.jac[3][node] -
                                   tab.jac[1][node] * tab.jac[2][node];
    }
  };

  if (N == 2 && cols >= 8) {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    int workers = static_cast<int>(std::min<unsigned>(hw, 8));
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          int col = next.fetch_add(1);
          if (col >= cols) return;
          try {
            run_column(col);
          } catch (...) {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!err) err = std::current_exception();
            return;
          }
        }
      });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  } else {
    for (int col = 0; col < cols; ++col) run_column(col);
  }

  Box w = spatial_part(sys.window);
  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  bool pos = false, neg = false;
  for (std::size_t node = 0; node < total; ++node) {
    for (int k = 0; k < N; ++k) {
      double x = tab.phi[static_cast<std::size_t>(k)][node];
      if (!std::isfinite(x) || x <= w.lo[static_cast<std::size_t>(k)] ||
          x >= w.hi[static_cast<std::size_t>(k)])
        throw FlowEscape();
    }
    double d = tab.det[node];
    if (!std::isfinite(d)) throw FlowEscape();
    (d > 0 ? pos : neg) = true;
    dmax = std::max(dmax, std::abs(d));
    dmin = std::min(dmin, std::abs(d));
  }
  if ((pos && neg) || dmin < 1e-3 * dmax) throw FlowEscape();
  return tab;
}

double eig_min_sym(double a, double b, double c) {
  double m = 0.5 * (a + c);
  double r = std::hypot(0.5 * (a - c), b);
  return m - r;
}

}  // namespace

StraightenResult straighten_coupling(const ParabolicSystem& sys,
                                     const HypersurfaceSpec& gamma,
                                     double ode_tol, int table_nodes) {
  if (sys.N != 1 && sys.N != 2)
    throw std::invalid_argument("straighten_coupling: N must be 1 or 2");
  if (!(ode_tol > 0) || table_nodes < 8)
    throw std::invalid_argument("straighten_coupling: bad tolerance or node count");
  validate_system(sys);
  require_time_independent(sys, "straighten_coupling", false);

  const int N = sys.N;
  Box w = spatial_part(sys.window);
  const double t_ref = sys.window.lo[0];

  HypersurfaceSpec g = gamma;
  if (N == 2 && !(g.z_hi > g.z_lo))
    throw std::invalid_argument("straighten_coupling: empty seed segment");
  if (g.x1 <= w.lo[0] || g.x1 >= w.hi[0] ||
      (N == 2 && (g.z_lo < w.lo[1] || g.z_hi > w.hi[1])))
    throw std::invalid_argument("straighten_coupling: seed surface outside the window");

  // The drift may not vanish anywhere in the window, and its x1 component
  // must keep one orientation across the seed surface so the chart leaves
  // gamma through one side.
  double gmax = 0.0;
  for (const auto& x : grid_points(w, N == 1 ? 48 : 12)) {
    Point at(x.size() + 1);
    at[0] = t_ref;
    std::copy(x.begin(), x.end(), at.begin() + 1);
    double norm = 0.0;
    for (int k = 0; k < N; ++k) norm = std::hypot(norm, evaluate(sys.g21[static_cast<std::size_t>(k)], at));
    if (norm < 1e-12)
      throw NormalizeError("straighten_coupling: coupling drift vanishes inside the window");
    gmax = std::max(gmax, norm);
  }
  int sgn = 0;
  {
    auto zs = N == 2 ? uniform_axis(g.z_lo, g.z_hi, 17) : std::vector<double>{0.0};
    for (double z : zs) {
      Point at{t_ref, g.x1};
      if (N == 2) at.push_back(z);
      double v = evaluate(sys.g21[0], at);
      int s = v > 0 ? 1 : (v < 0 ? -1 : 0);
      if (s == 0 || (sgn != 0 && s != sgn))
        throw NormalizeError(
            "straighten_coupling: drift x1 component changes orientation on the seed surface");
      sgn = s;
    }
  }

  double room = sgn < 0 ? g.x1 - w.lo[0] : w.hi[0] - g.x1;
  double eps = g.eps_s > 0 ? g.eps_s : 0.75 * room / gmax;
  const double eps_floor = eps * 0x1p-24;

  FlowTables tab;
  for (;;) {
    try {
      tab = tabulate_flow(sys, g, eps, table_nodes, table_nodes, ode_tol, t_ref);
      break;
    } catch (const FlowEscape&) {
      eps *= 0.5;
      if (eps < eps_floor)
        throw NormalizeError(
            "straighten_coupling: flow extent underflowed while retrying");
    }
  }

  std::vector<int> vars{1};
  std::vector<std::vector<double>> axes{tab.s_axis};
  if (N == 2) {
    vars.push_back(2);
    axes.push_back(tab.z_axis);
  }
  auto field = [&](std::vector<double> vals) {
    return field_expr(FieldTable::create(vars, axes, std::move(vals)),
                      std::vector<int>(vars.size(), 0));
  };

  const std::size_t total = tab.det.size();
  FlowMap flow;
  flow.N = N;
  flow.base = g;
  flow.base.eps_s = eps;
  flow.eps_s = eps;
  flow.t0 = sys.window.lo[0];
  flow.t1 = sys.window.hi[0];
  flow.s_axis = tab.s_axis;
  flow.z_axis = tab.z_axis;
  for (int k = 0; k < N; ++k) flow.chart.push_back(field(tab.phi[static_cast<std::size_t>(k)]));
  for (int e = 0; e < N * N; ++e) flow.jac.push_back(field(tab.jac[static_cast<std::size_t>(e)]));
  flow.det_j = field(tab.det);
  {
    std::vector<double> ld(total);
    for (std::size_t i = 0; i < total; ++i) ld[i] = std::log(std::abs(tab.det[i]));
    flow.log_det = field(std::move(ld));
  }

  // Per-node pullbacks: congruence for the diffusions, inverse-Jacobian
  // push for the drifts, plain composition for the potentials.
  auto eval_at = [&](const Expr& e, std::size_t node) {
    Point at(static_cast<std::size_t>(N) + 1);
    at[0] = t_ref;
    for (int k = 0; k < N; ++k) at[static_cast<std::size_t>(k) + 1] = tab.phi[static_cast<std::size_t>(k)][node];
    return evaluate(e, at);
  };

  const int tri = N * (N + 1) / 2;
  std::vector<std::vector<double>> td1(static_cast<std::size_t>(tri), std::vector<double>(total));
  std::vector<std::vector<double>> td2(static_cast<std::size_t>(tri), std::vector<double>(total));
  std::vector<std::vector<double>> tg11(static_cast<std::size_t>(N), std::vector<double>(total));
  std::vector<std::vector<double>> tg12(static_cast<std::size_t>(N), std::vector<double>(total));
  std::vector<std::vector<double>> tg22(static_cast<std::size_t>(N), std::vector<double>(total));
  std::vector<double> ta11(total), ta12(total), ta21(total), ta22(total);
  double lam_min = std::numeric_limits<double>::infinity();

  for (std::size_t node = 0; node < total; ++node) {
    double G[2][2] = {{0, 0}, {0, 0}};  // inverse Jacobian
    if (N == 1) {
      G[0][0] = 1.0 / tab.jac[0][node];
    } else {
      double det = tab.det[node];
      G[0][0] = tab.jac[3][node] / det;
      G[0][1] = -tab.jac[1][node] / det;
      G[1][0] = -tab.jac[2][node] / det;
      G[1][1] = tab.jac[0][node] / det;
    }
    auto congruence = [&](int which, std::vector<std::vector<double>>& out) {
      std::array<std::array<double, 2>, 2> D{};
      for (int i = 1; i <= N; ++i)
        for (int j = i; j <= N; ++j) {
          double v = eval_at(sys.dmat(which, i, j), node);
          D[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)] = v;
          D[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(i - 1)] = v;
        }
      double GD[2][2] = {{0, 0}, {0, 0}};
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
          for (int k = 0; k < N; ++k)
            GD[i][j] += G[i][k] * D[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
      for (int i = 1; i <= N; ++i)
        for (int j = i; j <= N; ++j) {
          double v = 0.0;
          for (int k = 0; k < N; ++k) v += GD[i - 1][k] * G[j - 1][k];
          out[static_cast<std::size_t>(ParabolicSystem::tri_index(N, i, j))][node] = v;
        }
      double lm = N == 1 ? out[0][node]
                         : eig_min_sym(out[0][node], out[1][node], out[2][node]);
      lam_min = std::min(lam_min, lm);
    };
    congruence(1, td1);
    congruence(2, td2);
    auto push = [&](const std::vector<Expr>& gv, std::vector<std::vector<double>>& out) {
      double raw[2] = {0, 0};
      for (int k = 0; k < N; ++k) raw[k] = eval_at(gv[static_cast<std::size_t>(k)], node);
      for (int i = 0; i < N; ++i) {
        double v = 0.0;
        for (int k = 0; k < N; ++k) v += G[i][k] * raw[k];
        out[static_cast<std::size_t>(i)][node] = v;
      }
    };
    push(sys.g11, tg11);
    push(sys.g12, tg12);
    push(sys.g22, tg22);
    ta11[node] = eval_at(sys.a11, node);
    ta12[node] = eval_at(sys.a12, node);
    ta21[node] = eval_at(sys.a21, node);
    ta22[node] = eval_at(sys.a22, node);
  }

  ParabolicSystem out;
  out.N = N;
  for (int e = 0; e < tri; ++e) {
    out.d1.push_back(field(td1[static_cast<std::size_t>(e)]));
    out.d2.push_back(field(td2[static_cast<std::size_t>(e)]));
  }
  // divergence-form correction: moving |det J| through the outer
  // derivative costs the drift d~ grad ln|det J|
  auto corrected = [&](std::vector<std::vector<double>>& gtab, const std::vector<Expr>& dtilde) {
    std::vector<Expr> gv;
    for (int i = 0; i < N; ++i) {
      std::vector<Expr> terms{field(gtab[static_cast<std::size_t>(i)])};
      for (int l = 0; l < N; ++l)
        terms.push_back(prod({dtilde[static_cast<std::size_t>(ParabolicSystem::tri_index(N, i + 1, l + 1))],
                              differentiate(flow.log_det, l + 1)}));
      gv.push_back(sum(std::move(terms)));
    }
    return gv;
  };
  out.g11 = corrected(tg11, out.d1);
  out.g22 = corrected(tg22, out.d2);
  for (int i = 0; i < N; ++i) out.g12.push_back(field(tg12[static_cast<std::size_t>(i)]));
  out.g21.push_back(constant(1.0));
  if (N == 2) out.g21.push_back(constant(0.0));
  out.a11 = field(std::move(ta11));
  out.a12 = field(std::move(ta12));
  out.a21 = field(std::move(ta21));
  out.a22 = field(std::move(ta22));

  out.domain.lo = {0.0};
  out.domain.hi = {eps};
  if (N == 2) {
    out.domain.lo.push_back(g.z_lo);
    out.domain.hi.push_back(g.z_hi);
  }
  out.window.lo = {sys.window.lo[0], 0.05 * eps};
  out.window.hi = {sys.window.hi[0], 0.95 * eps};
  if (N == 2) {
    double span = g.z_hi - g.z_lo;
    out.window.lo.push_back(g.z_lo + 0.05 * span);
    out.window.hi.push_back(g.z_hi - 0.05 * span);
  }
  out.d0 = 0.9 * lam_min;
  out.normal_form = false;
  validate_system(out);
  return {std::move(out), std::move(flow)};
}

StraightenResult straighten_coupling(const ParabolicSystem& sys, double ode_tol,
                                     int table_nodes) {
  if (sys.N != 1 && sys.N != 2)
    throw std::invalid_argument("straighten_coupling: N must be 1 or 2");
  Box w = spatial_part(sys.window);
  const double t_ref = sys.window.lo[0];
  int sgn = 0;
  for (const auto& x : grid_points(w, sys.N == 1 ? 48 : 12)) {
    Point at(x.size() + 1);
    at[0] = t_ref;
    std::copy(x.begin(), x.end(), at.begin() + 1);
    double v = evaluate(sys.g21[0], at);
    int s = v > 0 ? 1 : (v < 0 ? -1 : 0);
    if (s == 0 || (sgn != 0 && s != sgn))
      throw NormalizeError(
          "straighten_coupling: drift x1 component changes orientation; pass a seed surface");
    sgn = s;
  }
  HypersurfaceSpec g;
  double ext1 = w.hi[0] - w.lo[0];
  g.x1 = sgn < 0 ? w.hi[0] - 0.3 * ext1 : w.lo[0] + 0.3 * ext1;
  if (sys.N == 2) {
    double ext2 = w.hi[1] - w.lo[1];
    g.z_lo = w.lo[1] + 0.2 * ext2;
    g.z_hi = w.hi[1] - 0.2 * ext2;
  }
  return straighten_coupling(sys, g, ode_tol, table_nodes);
}

double coupling_residual(const FlowMap& flow, const ParabolicSystem& original,
                         int samples) {
  const int N = flow.N;
  std::vector<Expr> probes;
  {
    Expr x1 = variable(1);
    std::vector<Expr> arg1{prod({constant(1.3), x1}), constant(0.31)};
    std::vector<Expr> arg2{prod({constant(0.9), x1})};
    if (N == 2) {
      Expr x2 = variable(2);
      arg1.push_back(prod({constant(0.7), x2}));
      arg2.push_back(prod({constant(-1.1), x2}));
    }
    probes.push_back(sin_e(sum(arg1)));
    probes.push_back(cos_e(sum(arg2)));
    probes.push_back(N == 2 ? prod({x1, variable(2)}) : ipow(x1, 2));
  }
  std::vector<std::vector<Expr>> grads;
  for (const auto& p : probes) {
    std::vector<Expr> gr;
    for (int k = 0; k < N; ++k) gr.push_back(differentiate(p, k + 1));
    grads.push_back(std::move(gr));
  }
  std::vector<Expr> dchart;
  for (int k = 0; k < N; ++k) dchart.push_back(differentiate(flow.chart[static_cast<std::size_t>(k)], 1));

  Window box;
  box.lo = {0.0};
  box.hi = {flow.eps_s};
  if (N == 2) {
    box.lo.push_back(flow.base.z_lo);
    box.hi.push_back(flow.base.z_hi);
  }
  double worst = 0.0;
  for (const auto& xi : grid_points(box, samples)) {
    Point at(xi.size() + 1);
    at[0] = flow.t0;
    std::copy(xi.begin(), xi.end(), at.begin() + 1);
    Point mapped(static_cast<std::size_t>(N) + 1);
    mapped[0] = flow.t0;
    for (int k = 0; k < N; ++k)
      mapped[static_cast<std::size_t>(k) + 1] = evaluate(flow.chart[static_cast<std::size_t>(k)], at);
    for (std::size_t p = 0; p < probes.size(); ++p) {
      double lhs = 0.0, rhs = 0.0;
      for (int k = 0; k < N; ++k) {
        double gk = evaluate(grads[p][static_cast<std::size_t>(k)], mapped);
        lhs += evaluate(dchart[static_cast<std::size_t>(k)], at) * gk;
        rhs += evaluate(original.g21[static_cast<std::size_t>(k)], mapped) * gk;
      }
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

std::vector<double> FlowMap::invert(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != N)
    throw std::invalid_argument("FlowMap::invert: dimension mismatch");
  const int cols = N == 2 ? static_cast<int>(z_axis.size()) : 1;
  auto chart_at = [&](const std::vector<double>& xi, int k) {
    Point at{t0, xi[0]};
    if (N == 2) at.push_back(xi[1]);
    return evaluate(chart[static_cast<std::size_t>(k)], at);
  };
  // seed from the closest table node
  std::vector<double> best{s_axis[0]};
  if (N == 2) best.push_back(z_axis[0]);
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t is = 0; is < s_axis.size(); ++is)
    for (int iz = 0; iz < cols; ++iz) {
      std::vector<double> xi{s_axis[is]};
      if (N == 2) xi.push_back(z_axis[static_cast<std::size_t>(iz)]);
      double d = 0.0;
      for (int k = 0; k < N; ++k) d += std::pow(chart_at(xi, k) - x[static_cast<std::size_t>(k)], 2);
      if (d < best_d) {
        best_d = d;
        best = xi;
      }
    }
  double scale = std::max(1.0, eps_s);
  std::vector<double> r(static_cast<std::size_t>(N));
  for (int it = 0; it < 60; ++it) {
    double rn = 0.0;
    for (int k = 0; k < N; ++k) {
      r[static_cast<std::size_t>(k)] = chart_at(best, k) - x[static_cast<std::size_t>(k)];
      rn = std::max(rn, std::abs(r[static_cast<std::size_t>(k)]));
    }
    if (rn < 1e-13 * scale) break;
    Point at{t0, best[0]};
    if (N == 2) at.push_back(best[1]);
    double J[2][2] = {{0, 0}, {0, 0}};
    for (int e = 0; e < N * N; ++e)
      J[e / N][e % N] = evaluate(jac[static_cast<std::size_t>(e)], at);
    if (N == 1) {
      best[0] -= r[0] / J[0][0];
    } else {
      double det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
      best[0] -= (J[1][1] * r[0] - J[0][1] * r[1]) / det;
      best[1] -= (-J[1][0] * r[0] + J[0][0] * r[1]) / det;
    }
    // stay near the tabulated patch; outside it the extrapolation lies
    double pad = 0.1 * eps_s;
    best[0] = std::clamp(best[0], s_axis.front() - pad, s_axis.back() + pad);
    if (N == 2) {
      double zpad = 0.1 * (z_axis.back() - z_axis.front());
      best[1] = std::clamp(best[1], z_axis.front() - zpad, z_axis.back() + zpad);
    }
  }
  double rn = 0.0;
  for (int k = 0; k < N; ++k) rn = std::max(rn, std::abs(chart_at(best, k) - x[static_cast<std::size_t>(k)]));
  if (rn > 1e-9 * scale)
    throw NormalizeError("FlowMap::invert: point is outside the chart range");
  return best;
}

void FlowMap::export_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("FlowMap::export_csv: cannot open " + path);
  if (N == 2) {
    out << "t,s,z,x1,x2,detj\n";
    out << "s,1,1,m,m,1\n";
  } else {
    out << "t,s,x1,detj\n";
    out << "s,1,m,1\n";
  }
  const int cols = N == 2 ? static_cast<int>(z_axis.size()) : 1;
  for (std::size_t is = 0; is < s_axis.size(); ++is)
    for (int iz = 0; iz < cols; ++iz) {
      Point at{t0, s_axis[is]};
      if (N == 2) at.push_back(z_axis[static_cast<std::size_t>(iz)]);
      out << fmt(t0) << "," << fmt(s_axis[is]) << ",";
      if (N == 2) out << fmt(z_axis[static_cast<std::size_t>(iz)]) << ",";
      for (int k = 0; k < N; ++k) out << fmt(evaluate(chart[static_cast<std::size_t>(k)], at)) << ",";
      out << fmt(evaluate(det_j, at)) << "\n";
    }
}

GaugeResult gauge_transform(const ParabolicSystem& sys) {
  if (sys.N != 1 && sys.N != 2)
    throw std::invalid_argument("gauge_transform: N must be 1 or 2");
  if (!identical(sys.g21[0], constant(1.0)) ||
      (sys.N == 2 && !identical(sys.g21[1], constant(0.0))))
    throw std::invalid_argument(
        "gauge_transform: coupling drift must be e1; straighten first");
  require_time_independent(sys, "gauge_transform", true);

  const int N = sys.N;
  const double x0 = std::clamp(0.0, sys.domain.lo[0], sys.domain.hi[0]);
  Expr theta = exp_e(negate(antider(1, sys.a21, x0)));
  Expr inv_theta = quot(constant(1.0), theta);

  std::vector<Expr> dtheta;
  for (int l = 0; l < N; ++l) dtheta.push_back(differentiate(theta, l + 1));

  // flux of theta through a diffusion tensor, per axis
  auto flux = [&](int which) {
    std::vector<Expr> f;
    for (int k = 1; k <= N; ++k) {
      std::vector<Expr> terms;
      for (int l = 1; l <= N; ++l)
        terms.push_back(prod({sys.dmat(which, k, l), dtheta[static_cast<std::size_t>(l - 1)]}));
      f.push_back(sum(std::move(terms)));
    }
    return f;
  };
  auto conj_row = [&](int which, const std::vector<Expr>& g, const Expr& a,
                      std::vector<Expr>& g_out, Expr& a_out) {
    auto fl = flux(which);
    g_out.clear();
    for (int k = 0; k < N; ++k)
      g_out.push_back(sum({g[static_cast<std::size_t>(k)],
                           prod({constant(2.0), inv_theta, fl[static_cast<std::size_t>(k)]})}));
    std::vector<Expr> drift_terms, div_terms;
    for (int k = 0; k < N; ++k) {
      drift_terms.push_back(prod({g[static_cast<std::size_t>(k)], dtheta[static_cast<std::size_t>(k)]}));
      div_terms.push_back(differentiate(fl[static_cast<std::size_t>(k)], k + 1));
    }
    a_out = sum({a, prod({inv_theta, sum(std::move(drift_terms))}),
                 prod({inv_theta, sum(std::move(div_terms))})});
  };

  ParabolicSystem out = sys;
  conj_row(1, sys.g11, sys.a11, out.g11, out.a11);
  conj_row(2, sys.g22, sys.a22, out.g22, out.a22);
  std::vector<Expr> cross_terms;
  for (int k = 0; k < N; ++k)
    cross_terms.push_back(prod({sys.g12[static_cast<std::size_t>(k)], dtheta[static_cast<std::size_t>(k)]}));
  out.a12 = sum({sys.a12, prod({inv_theta, sum(std::move(cross_terms))})});
  // the antiderivative chain rule makes d/dx1 theta + a21 theta collapse
  Expr resid = sum({dtheta[0], prod({sys.a21, theta})});
  out.a21 = resid.is_zero() ? constant(0.0) : quot(resid, theta);
  out.normal_form = out.a21.is_zero();

  double bound = std::numeric_limits<double>::infinity();
  for (const auto& x : grid_points(sys.domain, N == 1 ? 64 : 16)) {
    Point at(x.size() + 1);
    at[0] = sys.window.lo[0];
    std::copy(x.begin(), x.end(), at.begin() + 1);
    bound = std::min(bound, std::abs(evaluate(theta, at)));
  }
  validate_system(out);
  return {std::move(out), GaugeFunction{std::move(theta), bound}};
}

}  // namespace fcm
