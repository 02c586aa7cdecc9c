#include "fcm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcm/field.hpp"
#include "fcm/linalg.hpp"
#include "fcm/quadrature.hpp"

namespace fcm {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double eval1(const Expr& e, double x) { return evaluate(e, {0.0, x}); }

Expr sin3x() { return sin_e(prod({constant(3.0), variable(1)})); }
Expr cos3x() { return cos_e(prod({constant(3.0), variable(1)})); }

// Integral over [lo, hi] in x1 split at the given breakpoints, so features
// narrower than the adaptive panels cannot be skipped.
double split_integral(const Expr& e, double lo, double hi,
                      const std::vector<double>& cuts, double tol) {
  std::vector<double> pts{lo, hi};
  for (double c : cuts)
    if (c > lo + 1e-14 && c < hi - 1e-14) pts.push_back(c);
  std::sort(pts.begin(), pts.end());
  double per = tol / static_cast<double>(pts.size());
  double acc = 0.0, comp = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double piece = integrate_adaptive(e, 1, pts[i], pts[i + 1], per, {0.0, 0.0});
    double y = piece - comp;
    double t = acc + y;
    comp = (t - acc) - y;
    acc = t;
  }
  return acc;
}

// Tabulated x -> int_{lo}^{x} integrand, cumulative over `cells` uniform
// cells with breakpoint-aware quadrature per cell.
Expr cumulative_field(const Expr& integrand, double lo, double hi, int cells,
                      const std::vector<double>& cuts, double tol) {
  std::vector<double> axis(static_cast<std::size_t>(cells) + 1);
  std::vector<double> vals(static_cast<std::size_t>(cells) + 1, 0.0);
  double h = (hi - lo) / cells;
  for (int i = 0; i <= cells; ++i)
    axis[static_cast<std::size_t>(i)] = (i == cells) ? hi : lo + i * h;
  double acc = 0.0, comp = 0.0;
  for (int i = 0; i < cells; ++i) {
    double piece = split_integral(integrand, axis[static_cast<std::size_t>(i)],
                                  axis[static_cast<std::size_t>(i) + 1], cuts,
                                  tol / cells);
    double y = piece - comp;
    double t = acc + y;
    comp = (t - acc) - y;
    acc = t;
    vals[static_cast<std::size_t>(i) + 1] = acc;
  }
  return field_expr(FieldTable::create({1}, {std::move(axis)}, std::move(vals)),
                    {0});
}

void require_box(const Box& b, int N, const char* name) {
  if (b.dim() != N)
    throw std::invalid_argument(std::string("build_blended_potential_nd: ") +
                                name + " has the wrong dimension");
  for (int i = 0; i < N; ++i)
    if (!(b.lo[static_cast<std::size_t>(i)] < b.hi[static_cast<std::size_t>(i)]))
      throw std::invalid_argument(std::string("build_blended_potential_nd: ") +
                                  name + " is degenerate");
}

void require_nested(const Box& inner, const Box& outer, const char* pair) {
  for (int i = 0; i < inner.dim(); ++i) {
    auto k = static_cast<std::size_t>(i);
    if (!(outer.lo[k] < inner.lo[k] && inner.hi[k] < outer.hi[k]))
      throw std::invalid_argument(
          std::string("build_blended_potential_nd: nesting violated, ") + pair);
  }
}

}  // namespace

BlendedPotential build_blended_potential_nd(const Box& domain, const Box& omega,
                                            const Box& omega1, const Box& omega2,
                                            double delta) {
  int N = domain.dim();
  if (N < 1 || N > 2)
    throw std::invalid_argument("build_blended_potential_nd: dimension must be 1 or 2");
  if (!(delta > 0.0))
    throw std::invalid_argument("build_blended_potential_nd: delta must be positive");
  require_box(domain, N, "domain");
  require_box(omega2, N, "omega2");
  require_box(omega1, N, "omega1");
  require_box(omega, N, "omega");
  require_nested(omega2, domain, "omega2 inside the domain");
  require_nested(omega1, omega2, "omega1 inside omega2");
  require_nested(omega, omega1, "omega inside omega1");

  std::vector<Expr> modes, ramps;
  for (int i = 0; i < N; ++i) {
    auto k = static_cast<std::size_t>(i);
    double L = domain.extent(i);
    modes.push_back(sin_e(prod({constant(kPi / L),
                                sub(variable(i + 1), constant(domain.lo[k]))})));
    ramps.push_back(blend(i + 1, omega2.lo[k], omega1.lo[k]));
    ramps.push_back(sub(constant(1.0), blend(i + 1, omega1.hi[k], omega2.hi[k])));
  }
  Expr phi1 = prod(std::move(modes));
  Expr w = prod(std::move(ramps));
  Expr phi = sum({phi1, prod({w, sub(constant(1.0), phi1)})});

  double floor = std::numeric_limits<double>::infinity();
  for (const auto& p : grid_points(omega2, N == 1 ? 65 : 17)) {
    Point at(static_cast<std::size_t>(N) + 1, 0.0);
    for (int i = 0; i < N; ++i) at[static_cast<std::size_t>(i) + 1] = p[static_cast<std::size_t>(i)];
    floor = std::min(floor, evaluate(phi, at));
  }
  if (!(floor >= delta))
    throw std::invalid_argument(
        "build_blended_potential_nd: phi dips to " + fmt(floor) +
        " on omega2, below the declared floor delta = " + fmt(delta));

  std::vector<Expr> lap;
  for (int i = 0; i < N; ++i)
    lap.push_back(differentiate(differentiate(phi, i + 1), i + 1));
  Expr num = sum({negate(sum(std::move(lap))), negate(phi)});

  BlendedPotential out;
  out.phi = phi;
  out.a = quot(std::move(num), phi);
  out.s = 1.0;
  out.domain = domain;
  out.omega = omega;
  out.omega1 = omega1;
  out.omega2 = omega2;
  return out;
}

Expr BumpSpec::to_expr() const {
  if (!(lo < hi))
    throw std::invalid_argument("BumpSpec: support must satisfy lo < hi");
  if (!exp_window) {
    double scale = 2.0 / ((hi - lo) * bump_profile_mass());
    return prod({constant(scale), bump(1, lo, hi)});
  }
  if (!(lo < flat_lo && flat_lo < flat_hi && flat_hi < hi))
    throw std::invalid_argument(
        "BumpSpec: plateau must satisfy lo < flat_lo < flat_hi < hi");
  return prod({exp_e(variable(1)), blend(1, lo, flat_lo),
               sub(constant(1.0), blend(1, flat_hi, hi))});
}

BumpSpec counterexample_bump(int slot, bool exp_window) {
  BumpSpec s;
  switch (slot) {
    case 1: s.lo = kPi / 12.0; s.hi = kPi / 6.0; break;
    case 2: s.lo = 9.0 * kPi / 12.0; s.hi = 5.0 * kPi / 6.0; break;
    case 3: s.lo = 5.0 * kPi / 6.0; s.hi = 11.0 * kPi / 12.0; break;
    default:
      throw std::invalid_argument("counterexample_bump: slot must be 1, 2 or 3");
  }
  if (exp_window) {
    if (slot != 1)
      throw std::invalid_argument("counterexample_bump: exp_window only applies to slot 1");
    double q = (s.hi - s.lo) / 4.0;
    s.exp_window = true;
    s.flat_lo = s.lo + q;
    s.flat_hi = s.hi - q;
  }
  return s;
}

namespace {

void require_support(const BumpSpec& b, double lo, double hi, const char* name) {
  if (!(b.lo < b.hi) || b.lo < lo - 1e-9 || b.hi > hi + 1e-9)
    throw std::invalid_argument(std::string("build_counterexample_1d: ") + name +
                                " must be supported in (" + fmt(lo) + ", " +
                                fmt(hi) + ")");
}

}  // namespace

CounterexampleData build_counterexample_1d(const BumpSpec& t1, const BumpSpec& t2,
                                           const BumpSpec& t3, double eps_blend,
                                           double quad_tol) {
  const double b1 = 7.0 * kPi / 15.0;
  const double b2 = 8.0 * kPi / 15.0;
  const double K = std::sin(7.0 * kPi / 5.0);
  if (!(eps_blend > 0.0) || eps_blend > 0.4)
    throw std::invalid_argument(
        "build_counterexample_1d: eps_blend must lie in (0, 0.4]");
  if (!(quad_tol > 0.0))
    throw std::invalid_argument("build_counterexample_1d: quad_tol must be positive");
  require_support(t1, kPi / 12.0, kPi / 6.0, "theta1");
  require_support(t2, 9.0 * kPi / 12.0, 5.0 * kPi / 6.0, "theta2");
  require_support(t3, 5.0 * kPi / 6.0, 11.0 * kPi / 12.0, "theta3");

  double delta = std::min(2.5 * eps_blend, 0.205);
  Expr th1 = t1.to_expr(), th2 = t2.to_expr(), th3 = t3.to_expr();
  Expr w = prod({blend(1, b1 - delta, b1),
                 sub(constant(1.0), blend(1, b2, b2 + delta))});
  Expr blend_term = prod({w, sub(constant(K), sin3x())});

  std::vector<double> cuts = {b1 - delta, b1, b2, b2 + delta,
                              t1.lo, t1.hi, t2.lo, t2.hi, t3.lo, t3.hi};
  if (t1.exp_window) {
    cuts.push_back(t1.flat_lo);
    cuts.push_back(t1.flat_hi);
  }
  auto integ = [&](const Expr& e, double lo, double hi) {
    return split_integral(e, lo, hi, cuts, quad_tol);
  };

  double i_theta1 = integ(prod({cos3x(), th1}), t1.lo, t1.hi);
  if (!(i_theta1 > 0.0))
    throw SpectralError(
        "build_counterexample_1d: the integral of cos(3y) against theta1 must "
        "be positive, got " + fmt(i_theta1));
  double i_base = integ(prod({cos3x(), sum({sin3x(), blend_term})}), 0.0, b1);
  double c1 = (K * K / 3.0 - i_base) / i_theta1;
  if (!(c1 > 0.0))
    throw SpectralError(
        "build_counterexample_1d: eps_blend too large to preserve sign "
        "conditions (the C1 solve gave " + fmt(c1) + ")");

  Expr psi_head = sum({sin3x(), blend_term, prod({constant(c1), th1})});
  double alpha = std::cos(7.0 * kPi / 5.0) * K / 3.0 +
                 integ(prod({sin3x(), psi_head}), 0.0, b1);

  double q_val = integ(prod({cos3x(), psi_head}), 0.0, 2.0 * kPi / 3.0) / 3.0 +
                 integ(prod({cos3x(), sin3x()}), 2.0 * kPi / 3.0, kPi) / 3.0;
  double p2 = integ(prod({cos3x(), th2}), t2.lo, t2.hi);
  double p3 = integ(prod({cos3x(), th3}), t3.lo, t3.hi);

  bool use2 = q_val < 0.0;
  double c2 = 0.0, c3 = 0.0;
  for (int attempt = 0;; ++attempt) {
    double col = use2 ? p2 : p3;
    if (col == 0.0)
      throw SpectralError(
          "build_counterexample_1d: the dichotomy column integral vanished");
    double cval = -3.0 * q_val / col;
    if (cval >= 0.0) {
      (use2 ? c2 : c3) = cval;
      break;
    }
    if (attempt >= 1)
      throw SpectralError(
          "build_counterexample_1d: the dichotomy solve yields a negative "
          "constant (" + fmt(cval) + ") even after rescaling the bump");
    if (use2) {
      th2 = prod({constant(2.0), th2});
      p2 *= 2.0;
    } else {
      th3 = prod({constant(2.0), th3});
      p3 *= 2.0;
    }
  }

  Expr psi = psi_head;
  if (c2 != 0.0) psi = sum({psi, prod({constant(c2), th2})});
  if (c3 != 0.0) psi = sum({psi, prod({constant(c3), th3})});
  Expr dpsi = differentiate(psi, 1);
  Expr a = quot(sum({negate(differentiate(dpsi, 1)), prod({constant(-9.0), psi})}),
                psi);

  const int cells = 16384;
  Expr cum_cos = cumulative_field(prod({cos3x(), dpsi}), 0.0, kPi, cells, cuts,
                                  quad_tol);
  Expr cum_sin = cumulative_field(prod({sin3x(), dpsi}), 0.0, kPi, cells, cuts,
                                  quad_tol);
  Expr phi = sum({prod({sin3x(), sub(constant(alpha),
                                     prod({constant(1.0 / 3.0), cum_cos}))}),
                  prod({constant(1.0 / 3.0), cos3x(), cum_sin})});

  CounterexampleData out;
  out.psi = psi;
  out.phi = phi;
  out.a = a;
  out.theta1 = th1;
  out.theta2 = th2;
  out.theta3 = th3;
  out.c1 = c1;
  out.c2 = c2;
  out.c3 = c3;
  out.alpha = alpha;
  out.s = 9.0;
  out.omega_lo = b1;
  out.omega_hi = b2;
  out.omega1_lo = t1.exp_window ? t1.flat_lo : t1.lo;
  out.omega1_hi = t1.exp_window ? t1.flat_hi : t1.hi;
  out.eps_blend = eps_blend;
  out.layer = delta;
  out.dichotomy = q_val;
  out.quad_tol = quad_tol;

  // Sampled postconditions: boundary zeros, constancy on the control
  // window, the collar bound, and boundedness of the potential.
  auto near = [&](double v, double ref, double tol, const char* what) {
    if (!(std::abs(v - ref) <= tol))
      throw SpectralError(std::string("build_counterexample_1d: ") + what +
                          " off by " + fmt(v - ref));
  };
  near(eval1(psi, 0.0), 0.0, 1e-12, "psi(0)");
  near(eval1(psi, kPi), 0.0, 1e-12, "psi(pi)");
  near(eval1(phi, 0.0), 0.0, std::max(1e3 * quad_tol, 1e-9), "phi(0)");
  near(eval1(phi, kPi), 0.0, std::max(1e3 * quad_tol, 1e-9), "phi(pi)");
  for (int j = 0; j <= 200; ++j) {
    double x = b1 + (b2 - b1) * j / 200.0;
    near(eval1(psi, x), K, 1e-12, "psi on the control window");
  }
  double worst_collar = 0.0;
  for (int j = 1; j < 400; ++j) {
    double x = 6.0 * kPi / 15.0 + (kPi / 15.0) * j / 400.0;
    worst_collar = std::max(worst_collar,
                            std::abs(eval1(psi, x) - std::sin(3.0 * x)));
    x = b2 + (kPi / 15.0) * j / 400.0;
    worst_collar = std::max(worst_collar,
                            std::abs(eval1(psi, x) - std::sin(3.0 * x)));
  }
  if (!(worst_collar < eps_blend))
    throw SpectralError(
        "build_counterexample_1d: collar bound violated, |psi - sin(3x)| "
        "reaches " + fmt(worst_collar) + " against eps_blend = " + fmt(eps_blend));
  for (int j = 1; j <= 1000; ++j) {
    double x = kPi * j / 1001.0;
    double av = eval1(a, x);
    if (!std::isfinite(av))
      throw SpectralError("build_counterexample_1d: potential not finite at x = " + fmt(x));
  }
  return out;
}

CounterexampleData build_counterexample_1d(double eps_blend, double quad_tol) {
  return build_counterexample_1d(counterexample_bump(1), counterexample_bump(2),
                                 counterexample_bump(3), eps_blend, quad_tol);
}

void CounterexampleData::export_csv(const std::string& path, int points) const {
  if (points < 1)
    throw std::invalid_argument("export_csv: points must be positive");
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("export_csv: cannot open " + path);
  out << "x,psi,phi,a\n";
  out << "m,1,1,1\n";
  for (int j = 1; j <= points; ++j) {
    double x = kPi * j / (points + 1);
    out << fmt(x) << ',' << fmt(eval1(psi, x)) << ',' << fmt(eval1(phi, x))
        << ',' << fmt(eval1(a, x)) << '\n';
  }
  if (!out)
    throw std::runtime_error("export_csv: write failed for " + path);
}

namespace {

struct Grid1 {
  int n = 0;
  double lo = 0.0, h = 0.0;
  double x(int i) const { return lo + (i + 1) * h; }
};

std::vector<double> sample_nodes(const Expr& e, const Grid1& g, const char* what) {
  std::vector<double> v(static_cast<std::size_t>(g.n));
  for (int i = 0; i < g.n; ++i) {
    try {
      v[static_cast<std::size_t>(i)] = eval1(e, g.x(i));
    } catch (const EvalError& err) {
      throw SpectralError(std::string("fattorini_check: ") + what +
                          " evaluation failed at x = " + fmt(g.x(i)) + ": " +
                          err.what());
    }
  }
  return v;
}

// -d2/dx2 - a as a symmetric tridiagonal pair (diag, off).
void assemble_tridiag(const std::vector<double>& a_vals, double h,
                      std::vector<double>& diag, std::vector<double>& off) {
  std::size_t n = a_vals.size();
  diag.assign(n, 0.0);
  off.assign(n > 0 ? n - 1 : 0, -1.0 / (h * h));
  for (std::size_t i = 0; i < n; ++i) diag[i] = 2.0 / (h * h) - a_vals[i];
}

std::vector<double> lowest_eigenvalues(const std::vector<double>& diag,
                                       const std::vector<double>& off, int k) {
  double moff = 0.0;
  for (double v : off) moff = std::max(moff, std::abs(v));
  double glo = *std::min_element(diag.begin(), diag.end()) - 2.0 * moff;
  double ghi = *std::max_element(diag.begin(), diag.end()) + 2.0 * moff;
  double span = std::max(1.0, (ghi - glo) / 1024.0);
  for (;;) {
    double hi = std::min(glo + span, ghi);
    auto ev = tridiag_eigenvalues(diag, off, glo, hi);
    if (static_cast<int>(ev.size()) >= k || hi >= ghi) {
      std::sort(ev.begin(), ev.end());
      if (static_cast<int>(ev.size()) > k) ev.resize(static_cast<std::size_t>(k));
      return ev;
    }
    span *= 2.0;
  }
}

double stencil_residual(const std::vector<double>& v,
                        const std::vector<double>& a_vals, double s, double h,
                        const std::vector<double>* first_order) {
  int n = static_cast<int>(v.size());
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double vm = i > 0 ? v[static_cast<std::size_t>(i) - 1] : 0.0;
    double vp = i + 1 < n ? v[static_cast<std::size_t>(i) + 1] : 0.0;
    double r = (2.0 * v[static_cast<std::size_t>(i)] - vm - vp) / (h * h) -
               a_vals[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)] -
               s * v[static_cast<std::size_t>(i)];
    if (first_order) r -= (*first_order)[static_cast<std::size_t>(i)];
    worst = std::max(worst, std::abs(r));
  }
  return worst;
}

std::vector<double> centered_derivative(const std::vector<double>& v, double h) {
  int n = static_cast<int>(v.size());
  std::vector<double> d(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double vm = i > 0 ? v[static_cast<std::size_t>(i) - 1] : 0.0;
    double vp = i + 1 < n ? v[static_cast<std::size_t>(i) + 1] : 0.0;
    d[static_cast<std::size_t>(i)] = (vp - vm) / (2.0 * h);
  }
  return d;
}

double sine_lambda(int k, int n, double h) {
  return (2.0 - 2.0 * std::cos(kPi * k / (n + 1))) / (h * h);
}

std::vector<double> sine_coefficients(const std::vector<double>& v) {
  int n = static_cast<int>(v.size());
  std::vector<double> c(static_cast<std::size_t>(n), 0.0);
  for (int k = 1; k <= n; ++k) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += v[static_cast<std::size_t>(i)] *
           std::sin(kPi * static_cast<double>((i + 1) * k) / (n + 1));
    c[static_cast<std::size_t>(k) - 1] = s * 2.0 / (n + 1);
  }
  return c;
}

std::vector<double> sine_mode(int k, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    v[static_cast<std::size_t>(i)] =
        std::sin(kPi * static_cast<double>((i + 1) * k) / (n + 1));
  return v;
}

// Solves (-d2/dx2 - s) phi = rhs in the discrete sine basis with the mode
// nearest to s deflated; returns phi and the deflated index through k_star.
std::vector<double> deflated_sine_solve(const std::vector<double>& rhs, double s,
                                        double h, int& k_star) {
  int n = static_cast<int>(rhs.size());
  auto coef = sine_coefficients(rhs);
  k_star = 1;
  for (int k = 2; k <= n; ++k)
    if (std::abs(sine_lambda(k, n, h) - s) < std::abs(sine_lambda(k_star, n, h) - s))
      k_star = k;
  std::vector<double> phi(static_cast<std::size_t>(n), 0.0);
  for (int k = 1; k <= n; ++k) {
    if (k == k_star) continue;
    double c = coef[static_cast<std::size_t>(k) - 1] / (sine_lambda(k, n, h) - s);
    if (c == 0.0) continue;
    for (int i = 0; i < n; ++i)
      phi[static_cast<std::size_t>(i)] +=
          c * std::sin(kPi * static_cast<double>((i + 1) * k) / (n + 1));
  }
  return phi;
}

}  // namespace

std::string FattoriniReport::to_json_string() const {
  auto arr = [](const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ", ";
      s += fmt(v[i]);
    }
    return s + "]";
  };
  std::string s = "{\n";
  s += "  \"mode\": \"" + std::string(mode == FattoriniMode::single ? "single" : "coupled") + "\",\n";
  s += "  \"n\": " + std::to_string(n) + ",\n";
  s += "  \"h\": " + fmt(h) + ",\n";
  s += "  \"tol\": " + fmt(tol) + ",\n";
  s += "  \"eigenvalues\": " + arr(eigenvalues) + ",\n";
  s += "  \"eigen_residuals\": " + arr(eigen_residuals) + ",\n";
  s += "  \"window_values\": " + arr(window_values) + ",\n";
  s += "  \"obstructed_index\": " + std::to_string(obstructed_index) + ",\n";
  s += std::string("  \"obstructed\": ") + (obstructed ? "true" : "false") + "\n";
  return s + "}\n";
}

FattoriniReport fattorini_check(const Expr& a, const EigenSearchSpec& spec,
                                double dom_lo, double dom_hi, double win_lo,
                                double win_hi, int n, FattoriniMode mode,
                                double tol) {
  if (!(dom_lo < win_lo && win_lo < win_hi && win_hi < dom_hi))
    throw std::invalid_argument("fattorini_check: window must sit inside the domain");
  if (n < 8) throw std::invalid_argument("fattorini_check: need at least 8 nodes");
  if (!(tol > 0.0)) throw std::invalid_argument("fattorini_check: tol must be positive");
  if (!spec.inserted && spec.lowest < 1)
    throw std::invalid_argument("fattorini_check: need at least one eigenpair");

  Grid1 g{n, dom_lo, (dom_hi - dom_lo) / (n + 1)};
  std::vector<int> win_nodes;
  for (int i = 0; i < n; ++i)
    if (g.x(i) >= win_lo && g.x(i) <= win_hi) win_nodes.push_back(i);
  if (win_nodes.empty())
    throw std::invalid_argument("fattorini_check: the grid does not resolve the window");

  auto a_vals = sample_nodes(a, g, "potential");

  FattoriniReport rep;
  rep.mode = mode;
  rep.n = n;
  rep.h = g.h;
  rep.tol = tol;

  auto window_max = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (int i : win_nodes) m = std::max(m, std::abs(v[static_cast<std::size_t>(i)]));
    return m;
  };

  auto push_pair = [&](double s, double resid, double wval) {
    rep.eigenvalues.push_back(s);
    rep.eigen_residuals.push_back(resid);
    rep.window_values.push_back(wval);
    if (rep.obstructed_index < 0 && resid <= tol && wval <= tol) {
      rep.obstructed_index = static_cast<int>(rep.eigenvalues.size()) - 1;
      rep.obstructed = true;
    }
  };

  if (mode == FattoriniMode::single) {
    if (spec.inserted) {
      if (!spec.phi.valid())
        throw std::invalid_argument("fattorini_check: inserted witness needs phi");
      auto p = sample_nodes(spec.phi, g, "inserted phi");
      double nrm = std::sqrt(g.h * dot(p, p));
      if (!(nrm > 0.0)) throw std::invalid_argument("fattorini_check: inserted phi vanishes");
      for (double& v : p) v /= nrm;
      Expr dphi = differentiate(spec.phi, 1);
      double wval = 0.0;
      for (int i : win_nodes)
        wval = std::max(wval, std::abs(eval1(dphi, g.x(i))) / nrm);
      push_pair(spec.s, stencil_residual(p, a_vals, spec.s, g.h, nullptr), wval);
    } else {
      std::vector<double> diag, off;
      assemble_tridiag(a_vals, g.h, diag, off);
      auto evs = lowest_eigenvalues(diag, off, spec.lowest);
      for (std::size_t j = 0; j < evs.size(); ++j) {
        auto v = tridiag_eigenvector(diag, off, evs[j], 0x5eed0 + j);
        double nrm = std::sqrt(g.h * dot(v, v));
        for (double& q : v) q /= nrm;
        push_pair(evs[j], stencil_residual(v, a_vals, evs[j], g.h, nullptr),
                  window_max(centered_derivative(v, g.h)));
      }
    }
    return rep;
  }

  // Coupled mode: psi first, then the phi row with the deflated sine solve
  // and the free resonant coefficient minimizing phi on the window.
  auto finish_pair = [&](std::vector<double> phi, std::vector<double> psi,
                         double s) {
    double nrm = std::sqrt(g.h * (dot(phi, phi) + dot(psi, psi)));
    if (!(nrm > 0.0)) throw std::invalid_argument("fattorini_check: trivial pair");
    for (double& v : phi) v /= nrm;
    for (double& v : psi) v /= nrm;
    auto dpsi = centered_derivative(psi, g.h);
    double r2 = stencil_residual(psi, a_vals, s, g.h, nullptr);
    std::vector<double> zero(a_vals.size(), 0.0);
    double r1 = stencil_residual(phi, zero, s, g.h, &dpsi);
    push_pair(s, std::max(r1, r2), window_max(phi));
  };

  if (spec.inserted) {
    if (!spec.phi.valid() || !spec.psi.valid())
      throw std::invalid_argument("fattorini_check: inserted witness needs phi and psi");
    finish_pair(sample_nodes(spec.phi, g, "inserted phi"),
                sample_nodes(spec.psi, g, "inserted psi"), spec.s);
    return rep;
  }

  std::vector<double> diag, off;
  assemble_tridiag(a_vals, g.h, diag, off);
  auto evs = lowest_eigenvalues(diag, off, spec.lowest);
  for (std::size_t j = 0; j < evs.size(); ++j) {
    auto psi = tridiag_eigenvector(diag, off, evs[j], 0xc0de0 + j);
    auto rhs = centered_derivative(psi, g.h);
    int k_star = 0;
    auto phi = deflated_sine_solve(rhs, evs[j], g.h, k_star);
    auto vstar = sine_mode(k_star, n);
    double num = 0.0, den = 0.0;
    for (int i : win_nodes) {
      num += phi[static_cast<std::size_t>(i)] * vstar[static_cast<std::size_t>(i)];
      den += vstar[static_cast<std::size_t>(i)] * vstar[static_cast<std::size_t>(i)];
    }
    double cstar = den > 0.0 ? -num / den : 0.0;
    for (int i = 0; i < n; ++i)
      phi[static_cast<std::size_t>(i)] += cstar * vstar[static_cast<std::size_t>(i)];
    finish_pair(std::move(phi), std::move(psi), evs[j]);
  }
  return rep;
}

DiscreteWitness find_invariant_witness(const DiscreteSystem& ds, const Expr& a,
                                       int lowest, double coupling_tol,
                                       double residual_tol) {
  const Grid& grid = ds.grid();
  if (grid.N != 1)
    throw std::invalid_argument("find_invariant_witness: needs a 1D system");
  if (ds.mode() != ControlMode::one_control)
    throw std::invalid_argument("find_invariant_witness: needs a one-control system");
  if (lowest < 1)
    throw std::invalid_argument("find_invariant_witness: need at least one eigenpair");

  int n = grid.nodes[0];
  double h = grid.h(0);
  Grid1 g{n, grid.domain.lo[0], h};
  auto a_vals = sample_nodes(a, g, "potential");
  std::vector<double> diag, off;
  assemble_tridiag(a_vals, h, diag, off);
  auto evs = lowest_eigenvalues(diag, off, lowest);

  DiscreteWitness best;
  int tried = 0;
  auto consider = [&](std::vector<double> w, double cont_eig) {
    double nrm = std::sqrt(dot(w, w));
    if (!(nrm > 0.0)) return;
    for (double& v : w) v /= nrm;
    auto stw = ds.transpose_state(w);
    double lam = dot(stw, w);
    axpy(-lam, w, stw);
    double resid = norm2(stw);
    auto bu = ds.transpose_control(w);
    double coup = norm2(bu) / grid.dt;
    ++tried;
    bool pass_new = resid <= residual_tol;
    bool pass_old = !best.w.empty() && best.residual <= residual_tol;
    bool better = best.w.empty() || (pass_new && !pass_old) ||
                  (pass_new == pass_old && coup < best.coupling);
    if (better) {
      best.w = std::move(w);
      best.lambda = lam;
      best.eigenvalue = cont_eig;
      best.residual = resid;
      best.coupling = coup;
      best.found = pass_new && coup <= coupling_tol;
    }
  };

  auto interleave = [&](const std::vector<double>& p, const std::vector<double>& q) {
    std::vector<double> w(static_cast<std::size_t>(2 * n), 0.0);
    for (int i = 0; i < n; ++i) {
      if (!p.empty()) w[static_cast<std::size_t>(2 * i)] = p[static_cast<std::size_t>(i)];
      if (!q.empty()) w[static_cast<std::size_t>(2 * i) + 1] = q[static_cast<std::size_t>(i)];
    }
    return w;
  };

  for (int k = 1; k <= lowest; ++k)
    consider(interleave(sine_mode(k, n), {}), sine_lambda(k, n, h));

  for (std::size_t j = 0; j < evs.size(); ++j) {
    double s = evs[j];
    auto q = tridiag_eigenvector(diag, off, s, 0xa17e55 + j);
    auto rhs = centered_derivative(q, h);
    // Transpose field-1 row: (lap - nu) p = d/dx q with nu = -s, so the
    // sine coefficients divide by (s - lambda_k); nearest mode deflated.
    int k_star = 1;
    for (int k = 2; k <= n; ++k)
      if (std::abs(sine_lambda(k, n, h) - s) < std::abs(sine_lambda(k_star, n, h) - s))
        k_star = k;
    auto coef = sine_coefficients(rhs);
    std::vector<double> p(static_cast<std::size_t>(n), 0.0);
    for (int k = 1; k <= n; ++k) {
      if (k == k_star) continue;
      double c = coef[static_cast<std::size_t>(k) - 1] / (s - sine_lambda(k, n, h));
      if (c == 0.0) continue;
      for (int i = 0; i < n; ++i)
        p[static_cast<std::size_t>(i)] +=
            c * std::sin(kPi * static_cast<double>((i + 1) * k) / (n + 1));
    }
    auto wa = interleave(p, q);
    auto wb = interleave(sine_mode(k_star, n), {});
    auto ua = ds.transpose_control(wa);
    auto ub = ds.transpose_control(wb);
    double den = dot(ub, ub);
    double cstar = den > 0.0 ? -dot(ua, ub) / den : 0.0;
    axpy(cstar, wb, wa);
    consider(std::move(wa), s);
  }
  best.candidates = tried;
  return best;
}

double invariant_functional_test(const DiscreteSystem& ds,
                                 const DiscreteWitness& witness, int n_controls,
                                 std::uint64_t seed) {
  if (!witness.found)
    throw std::invalid_argument(
        "invariant_functional_test: the witness search did not qualify");
  if (static_cast<int>(witness.w.size()) != ds.state_size())
    throw std::invalid_argument("invariant_functional_test: state size mismatch");
  if (n_controls < 0)
    throw std::invalid_argument("invariant_functional_test: negative control count");

  int steps = ds.grid().steps();
  int nc = ds.control_size();
  double predicted = std::pow(witness.lambda, steps);
  double worst = 0.0;
  for (int trial = 0; trial <= n_controls; ++trial) {
    std::vector<std::vector<double>> u;
    if (trial > 0) {
      std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(trial));
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      u.assign(static_cast<std::size_t>(steps),
               std::vector<double>(static_cast<std::size_t>(nc)));
      for (auto& uk : u)
        for (double& v : uk) v = dist(rng);
    }
    auto traj = solve_forward(ds, witness.w, u);
    double got = dot(traj.back(), witness.w);
    worst = std::max(worst, std::abs(got - predicted) / std::abs(predicted));
  }
  return worst;
}

}  // namespace fcm
