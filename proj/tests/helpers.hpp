#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "fcm/expr.hpp"

namespace fcm::testing {

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

// Random smooth expression in nvars+1 variables (t, x1, .., xN) built from
// polynomials and trig so every derivative stays bounded on [-2,2]^d.
inline Expr random_smooth(std::mt19937_64& rng, int nvars) {
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_int_distribution<int> pick(0, 4);
  auto rnd = [&] { return std::round(coef(rng) * 8.0) / 8.0; };
  std::vector<Expr> terms;
  int nterms = 1 + static_cast<int>(rng() % 3);
  for (int k = 0; k < nterms; ++k) {
    std::vector<Expr> fac;
    fac.push_back(constant(rnd() == 0.0 ? 0.5 : rnd()));
    int nf = 1 + static_cast<int>(rng() % 2);
    for (int j = 0; j < nf; ++j) {
      int v = static_cast<int>(rng() % static_cast<unsigned>(nvars + 1));
      switch (pick(rng)) {
        case 0: fac.push_back(variable(v)); break;
        case 1: fac.push_back(ipow(variable(v), 2)); break;
        case 2: fac.push_back(sin_e(mul(constant(rnd()), variable(v)))); break;
        case 3: fac.push_back(cos_e(mul(constant(rnd()), variable(v)))); break;
        default: fac.push_back(add(constant(1.0), variable(v))); break;
      }
    }
    terms.push_back(prod(fac));
  }
  return sum(terms);
}

inline std::vector<double> random_point(std::mt19937_64& rng, int nvars,
                                        double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> p(static_cast<size_t>(nvars) + 1);
  for (auto& c : p) c = u(rng);
  return p;
}

}  // namespace fcm::testing
