#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fcm/system.hpp"

namespace fcm::testing {

struct ConditionCase {
  std::string name;
  ParabolicSystem sys;
  bool member;  // true: coefficient lies in the module (condition fails)
};

inline ParabolicSystem base_system_2d() {
  Box domain({0.0, 0.0}, {2.0, 2.0});
  Window window({0.0, 0.25, 0.5}, {1.0, 1.25, 1.5});
  auto s = ParabolicSystem::laplacian(2, domain, window);
  s.g21[0] = constant(1.0);
  s.normal_form = true;
  return s;
}

inline ParabolicSystem base_system_1d(double xlo, double xhi, double dom_hi) {
  Box domain({0.0}, {dom_hi});
  Window window({0.0, xlo}, {1.0, xhi});
  auto s = ParabolicSystem::laplacian(1, domain, window);
  s.g21[0] = constant(1.0);
  s.normal_form = true;
  return s;
}

// Ten coefficient bundles split between module membership (the condition
// fails, elimination must refuse) and non-membership (the condition holds,
// elimination must succeed on a sub-window).
inline std::vector<ConditionCase> condition_corpus() {
  std::vector<ConditionCase> out;
  Expr t = variable(0), x1 = variable(1), x2 = variable(2);

  {
    auto s = base_system_1d(0.25, 1.25, 2.0);
    s.a22 = constant(-1.0);
    out.push_back({"constant potential (1d)", s, true});
  }
  {
    auto s = base_system_2d();
    s.a22 = negate(add(constant(2.0), sin_e(t)));
    out.push_back({"time-dependent multiple of 1", s, true});
  }
  {
    auto s = base_system_2d();
    Expr d22 = add(constant(1.0), ipow(x1, 2));
    s.d2[ParabolicSystem::tri_index(2, 2, 2)] = d22;
    s.a22 = negate(mul(add(constant(2.0), sin_e(t)), d22));
    out.push_back({"multiple of the d22 generator", s, true});
  }
  {
    auto s = base_system_2d();
    s.g22[1] = sin_e(x1);
    s.a22 = negate(mul(x2, sin_e(x1)));
    out.push_back({"multiple of the drift generator", s, true});
  }
  {
    auto s = base_system_2d();
    Expr d22 = add(constant(1.0), ipow(x1, 2));
    s.d2[ParabolicSystem::tri_index(2, 2, 2)] = d22;
    s.g22[1] = sin_e(x1);
    s.a22 = negate(sum({constant(3.0), mul(x2, sin_e(x1)), mul(constant(0.5), d22)}));
    out.push_back({"full generator combination", s, true});
  }
  {
    auto s = base_system_2d();
    s.a22 = negate(mul(x1, x2));
    out.push_back({"bilinear potential", s, false});
  }
  {
    double c1 = 0.3;
    double pi = 3.14159265358979323846;
    double margin = pi / 150 + pi / 48;
    auto s = base_system_1d(pi / 12 + margin, pi / 6 - margin, pi);
    s.a22 = quot(prod({constant(10.0 * c1), exp_e(x1)}),
                 add(sin_e(mul(constant(3.0), x1)), mul(constant(c1), exp_e(x1))));
    out.push_back({"spectral witness potential (1d)", s, false});
  }
  {
    auto s = base_system_2d();
    s.a22 = negate(mul(exp_e(x1), add(constant(1.0), t)));
    out.push_back({"exponential with time factor", s, false});
  }
  {
    auto s = base_system_2d();
    s.d2[ParabolicSystem::tri_index(2, 2, 2)] =
        add(constant(1.0), mul(constant(0.5), sin_e(x1)));
    s.d0 = 0.4;
    s.a22 = negate(ipow(x1, 3));
    out.push_back({"cubic against trig diffusion", s, false});
  }
  {
    auto s = base_system_2d();
    s.g22[1] = x1;
    s.a22 = negate(ipow(x1, 2));
    out.push_back({"quadratic against linear drift", s, false});
  }
  return out;
}

}  // namespace fcm::testing
