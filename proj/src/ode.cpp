#include "fcm/ode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fcm {

namespace {

constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187,
                 kA53 = 64448.0 / 6561, kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                 kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192,
                 kB5 = -2187.0 / 6784, kB6 = 11.0 / 84;
constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                 kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;
constexpr double kC2 = 1.0 / 5, kC3 = 3.0 / 10, kC4 = 4.0 / 5, kC5 = 8.0 / 9;

struct Stepper {
  const OdeFn& f;
  size_t n;
  std::vector<double> k1, k2, k3, k4, k5, k6, k7, tmp;

  Stepper(const OdeFn& fn, size_t dim)
      : f(fn), n(dim), k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim),
        k7(dim), tmp(dim) {}

  // One trial step from (s, y) of size h; fills ynew and returns the
  // mixed-tolerance error estimate. k1 must hold f(s, y) on entry and k7
  // holds f(s+h, ynew) on exit.
  double step(double s, const std::vector<double>& y, double h,
              std::vector<double>& ynew, double rel_tol, double abs_tol) {
    for (size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * kA21 * k1[i];
    f(s + kC2 * h, tmp, k2);
    for (size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (kA31 * k1[i] + kA32 * k2[i]);
    f(s + kC3 * h, tmp, k3);
    for (size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + h * (kA41 * k1[i] + kA42 * k2[i] + kA43 * k3[i]);
    f(s + kC4 * h, tmp, k4);
    for (size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + h * (kA51 * k1[i] + kA52 * k2[i] + kA53 * k3[i] + kA54 * k4[i]);
    f(s + kC5 * h, tmp, k5);
    for (size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + h * (kA61 * k1[i] + kA62 * k2[i] + kA63 * k3[i] +
                           kA64 * k4[i] + kA65 * k5[i]);
    f(s + h, tmp, k6);
    for (size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (kB1 * k1[i] + kB3 * k3[i] + kB4 * k4[i] +
                            kB5 * k5[i] + kB6 * k6[i]);
    f(s + h, ynew, k7);

    double err = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double e = h * (kE1 * k1[i] + kE3 * k3[i] + kE4 * k4[i] + kE5 * k5[i] +
                      kE6 * k6[i] + kE7 * k7[i]);
      double sc = abs_tol + rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err = std::max(err, std::abs(e) / sc);
    }
    return err;
  }
};

void advance(Stepper& st, std::vector<double>& y, double& s, double target,
             double rel_tol, double abs_tol) {
  if (s == target) return;
  double dir = target > s ? 1.0 : -1.0;
  double h = dir * std::min(0.1 * std::abs(target - s) + 1e-12, 0.1);
  st.f(s, y, st.k1);
  std::vector<double> ynew(st.n);
  int rejected_in_a_row = 0;
  for (int it = 0; it < 1000000; ++it) {
    if ((s + h - target) * dir > 0.0) h = target - s;
    double err = st.step(s, y, h, ynew, rel_tol, abs_tol);
    if (!std::isfinite(err)) {
      h *= 0.25;
      if (++rejected_in_a_row > 60) throw std::runtime_error("integrate_ode: step collapse");
      continue;
    }
    if (err <= 1.0) {
      s += h;
      y = ynew;
      st.k1 = st.k7;
      rejected_in_a_row = 0;
      if (s == target || std::abs(target - s) <= 1e-14 * std::max(1.0, std::abs(target))) {
        s = target;
        return;
      }
    } else if (++rejected_in_a_row > 60) {
      throw std::runtime_error("integrate_ode: repeated step rejection");
    }
    double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
    h *= std::clamp(fac, 0.2, 5.0);
    if (std::abs(h) < 1e-15 * std::max(1.0, std::abs(s)))
      throw std::runtime_error("integrate_ode: step underflow");
  }
  throw std::runtime_error("integrate_ode: iteration budget exhausted");
}

}  // namespace

std::vector<double> integrate_ode(const OdeFn& f, std::vector<double> y0,
                                  double s0, double s1, double rel_tol,
                                  double abs_tol) {
  if (y0.empty()) throw std::invalid_argument("integrate_ode: empty state");
  Stepper st(f, y0.size());
  double s = s0;
  advance(st, y0, s, s1, rel_tol, abs_tol);
  return y0;
}

std::vector<std::vector<double>> integrate_ode_at(const OdeFn& f,
                                                  std::vector<double> y0,
                                                  double s0,
                                                  const std::vector<double>& nodes,
                                                  double rel_tol, double abs_tol) {
  if (y0.empty()) throw std::invalid_argument("integrate_ode: empty state");
  for (size_t i = 1; i < nodes.size(); ++i) {
    double d0 = nodes[i] - nodes[i - 1];
    double dir = nodes.back() >= s0 ? 1.0 : -1.0;
    if (d0 * dir < 0.0) throw std::invalid_argument("integrate_ode_at: nodes not monotone");
  }
  Stepper st(f, y0.size());
  std::vector<std::vector<double>> out;
  double s = s0;
  for (double target : nodes) {
    advance(st, y0, s, target, rel_tol, abs_tol);
    out.push_back(y0);
  }
  return out;
}

}  // namespace fcm
