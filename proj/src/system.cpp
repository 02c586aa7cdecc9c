#include "fcm/system.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fcm {

int ParabolicSystem::tri_index(int N, int i, int j) {
  if (i < 1 || j < 1 || i > N || j > N) throw std::out_of_range("tensor index");
  if (i > j) std::swap(i, j);
  // Row-major upper triangle: row i holds N - i + 1 entries.
  int before = (i - 1) * N - (i - 1) * (i - 2) / 2;
  return before + (j - i);
}

const Expr& ParabolicSystem::dmat(int which, int i, int j) const {
  const auto& m = which == 1 ? d1 : d2;
  return m[static_cast<size_t>(tri_index(N, i, j))];
}

ParabolicSystem ParabolicSystem::laplacian(int N, Box domain, Window window) {
  ParabolicSystem s;
  s.N = N;
  int tri = N * (N + 1) / 2;
  for (int k = 0; k < tri; ++k) {
    s.d1.push_back(constant(0.0));
    s.d2.push_back(constant(0.0));
  }
  for (int i = 1; i <= N; ++i) {
    s.d1[static_cast<size_t>(tri_index(N, i, i))] = constant(1.0);
    s.d2[static_cast<size_t>(tri_index(N, i, i))] = constant(1.0);
  }
  for (int i = 0; i < N; ++i) {
    s.g11.push_back(constant(0.0));
    s.g12.push_back(constant(0.0));
    s.g21.push_back(constant(0.0));
    s.g22.push_back(constant(0.0));
  }
  s.a11 = s.a12 = s.a21 = s.a22 = constant(0.0);
  s.domain = std::move(domain);
  s.window = std::move(window);
  s.d0 = 1.0;
  return s;
}

namespace {

double quad_form(const ParabolicSystem& sys, int which,
                 const std::vector<double>& p, const std::vector<double>& xi) {
  double q = 0.0;
  for (int i = 1; i <= sys.N; ++i)
    for (int j = 1; j <= sys.N; ++j)
      q += evaluate(sys.dmat(which, i, j), p) * xi[static_cast<size_t>(i - 1)] *
           xi[static_cast<size_t>(j - 1)];
  return q;
}

}  // namespace

void validate_system(const ParabolicSystem& sys) {
  std::ostringstream bad;
  int tri = sys.N * (sys.N + 1) / 2;
  if (sys.N < 1) bad << "dimension must be >= 1; ";
  if (static_cast<int>(sys.d1.size()) != tri || static_cast<int>(sys.d2.size()) != tri)
    bad << "diffusion triangle size mismatch; ";
  for (const auto* g : {&sys.g11, &sys.g12, &sys.g21, &sys.g22})
    if (static_cast<int>(g->size()) != sys.N) bad << "drift vector size mismatch; ";
  for (const auto* a : {&sys.a11, &sys.a12, &sys.a21, &sys.a22})
    if (!a->valid()) bad << "potential not set; ";
  if (sys.domain.dim() != sys.N) bad << "domain dimension mismatch; ";
  if (sys.window.dim() != sys.N + 1) bad << "window must include the time axis; ";
  if (!(sys.d0 > 0.0)) bad << "ellipticity constant must be positive; ";
  if (!bad.str().empty()) throw std::invalid_argument("ParabolicSystem: " + bad.str());

  Box spatial(std::vector<double>(sys.window.lo.begin() + 1, sys.window.lo.end()),
              std::vector<double>(sys.window.hi.begin() + 1, sys.window.hi.end()));
  if (!sys.domain.contains(spatial))
    throw std::invalid_argument("ParabolicSystem: control window leaves the domain");

  std::mt19937_64 rng(0x5eedu);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  for (int k = 0; k < 16; ++k) {
    std::vector<double> xi(static_cast<size_t>(sys.N));
    double n2 = 0.0;
    for (auto& c : xi) {
      c = gauss(rng);
      n2 += c * c;
    }
    for (auto& c : xi) c /= std::sqrt(n2);
    dirs.push_back(std::move(xi));
  }
  for (const auto& p : grid_points(sys.window, 4)) {
    for (const auto& xi : dirs) {
      for (int which : {1, 2}) {
        double q = quad_form(sys, which, p, xi);
        if (q < sys.d0 - 1e-12) {
          std::ostringstream os;
          os << "ParabolicSystem: ellipticity violated for d" << which
             << " (quadratic form " << q << " < " << sys.d0 << ")";
          throw std::invalid_argument(os.str());
        }
      }
    }
  }
}

LinDiffOp parabolic_row_op(int N, const std::vector<Expr>& d_upper,
                           const std::vector<Expr>& g, const Expr& a) {
  std::vector<LinDiffOp::Term> terms;
  MultiIndex dt(N);
  dt.a[0] = 1;
  terms.push_back({constant(1.0), dt});
  for (int i = 1; i <= N; ++i) {
    for (int j = i; j <= N; ++j) {
      const Expr& dij = d_upper[static_cast<size_t>(ParabolicSystem::tri_index(N, i, j))];
      if (dij.is_zero()) continue;
      MultiIndex m(N);
      ++m.a[static_cast<size_t>(i)];
      ++m.a[static_cast<size_t>(j)];
      terms.push_back({i == j ? negate(dij) : prod({constant(-2.0), dij}), m});
    }
  }
  for (int j = 1; j <= N; ++j) {
    std::vector<Expr> div_parts;
    for (int i = 1; i <= N; ++i) {
      Expr dd = differentiate(d_upper[static_cast<size_t>(ParabolicSystem::tri_index(N, i, j))], i);
      if (!dd.is_zero()) div_parts.push_back(dd);
    }
    Expr first = negate(add(g[static_cast<size_t>(j - 1)],
                            div_parts.empty() ? constant(0.0) : sum(div_parts)));
    if (!first.is_zero()) {
      MultiIndex m(N);
      m.a[static_cast<size_t>(j)] = 1;
      terms.push_back({first, m});
    }
  }
  if (!a.is_zero()) terms.push_back({negate(a), MultiIndex(N)});
  return LinDiffOp(N, terms);
}

SystemOperators build_system_operators(const ParabolicSystem& sys) {
  if (!sys.normal_form)
    throw std::invalid_argument(
        "build_system_operators: system is not in coupling normal form "
        "(run the normalization pipeline first)");
  validate_system(sys);
  int N = sys.N;
  SystemOperators ops(N);

  LinDiffOp V1 = parabolic_row_op(N, sys.d1, sys.g11, sys.a11);
  std::vector<LinDiffOp::Term> v2_terms;
  for (int j = 1; j <= N; ++j) {
    if (sys.g12[static_cast<size_t>(j - 1)].is_zero()) continue;
    MultiIndex m(N);
    m.a[static_cast<size_t>(j)] = 1;
    v2_terms.push_back({negate(sys.g12[static_cast<size_t>(j - 1)]), m});
  }
  if (!sys.a12.is_zero()) v2_terms.push_back({negate(sys.a12), MultiIndex(N)});
  LinDiffOp V2(N, v2_terms);

  LinDiffOp P2 = parabolic_row_op(N, sys.d2, sys.g22, sys.a22);
  LinDiffOp D1 = LinDiffOp::partial(1, N);

  ops.L.at(0, 0) = V1;
  ops.L.at(0, 1) = V2;
  ops.L.at(0, 2) = op_neg(LinDiffOp::identity(N));
  ops.L.at(1, 0) = op_neg(D1);
  ops.L.at(1, 1) = P2;

  ops.L0.at(0, 0) = op_neg(D1);
  ops.L0.at(0, 1) = P2;

  ops.L1 = D1;

  // g~22^i = g22^i - sum_j d(d2^{ij})/dx_j and a~22 = -a22 + Div(g22),
  // shared between L2 and the bracket so the x1-terms cancel structurally.
  std::vector<Expr> gt(static_cast<size_t>(N));
  for (int i = 1; i <= N; ++i) {
    std::vector<Expr> parts{sys.g22[static_cast<size_t>(i - 1)]};
    for (int j = 1; j <= N; ++j) {
      Expr dd = differentiate(sys.dmat(2, i, j), j);
      if (!dd.is_zero()) parts.push_back(negate(dd));
    }
    gt[static_cast<size_t>(i - 1)] = sum(parts);
  }
  std::vector<Expr> at_parts{negate(sys.a22)};
  for (int i = 1; i <= N; ++i) {
    Expr dg = differentiate(sys.g22[static_cast<size_t>(i - 1)], i);
    if (!dg.is_zero()) at_parts.push_back(dg);
  }
  Expr at = sum(at_parts);

  std::vector<LinDiffOp::Term> l2_terms;
  MultiIndex mt(N);
  mt.a[0] = 1;
  l2_terms.push_back({constant(-1.0), mt});
  for (int i = 1; i <= N; ++i)
    for (int j = i; j <= N; ++j) {
      const Expr& dij = sys.dmat(2, i, j);
      if (dij.is_zero()) continue;
      MultiIndex m(N);
      ++m.a[static_cast<size_t>(i)];
      ++m.a[static_cast<size_t>(j)];
      l2_terms.push_back({i == j ? negate(dij) : prod({constant(-2.0), dij}), m});
    }
  for (int i = 1; i <= N; ++i) {
    if (gt[static_cast<size_t>(i - 1)].is_zero()) continue;
    MultiIndex m(N);
    m.a[static_cast<size_t>(i)] = 1;
    l2_terms.push_back({gt[static_cast<size_t>(i - 1)], m});
  }
  if (!at.is_zero()) l2_terms.push_back({at, MultiIndex(N)});
  ops.L2 = LinDiffOp(N, l2_terms);

  std::vector<LinDiffOp::Term> br_terms;
  {
    const Expr& d11 = sys.dmat(2, 1, 1);
    if (!d11.is_zero()) {
      MultiIndex m(N);
      m.a[1] = 1;
      br_terms.push_back({negate(d11), m});
    }
    for (int i = 2; i <= N; ++i) {
      const Expr& di1 = sys.dmat(2, 1, i);
      if (di1.is_zero()) continue;
      MultiIndex m(N);
      m.a[static_cast<size_t>(i)] = 1;
      br_terms.push_back({prod({constant(-2.0), di1}), m});
    }
    if (!gt[0].is_zero()) br_terms.push_back({gt[0], MultiIndex(N)});
  }
  ops.bracket = LinDiffOp(N, br_terms);

  ops.L3 = op_sub(ops.L2, op_compose(ops.bracket, ops.L1));
  for (const auto& t : ops.L3.terms())
    if (t.idx.a[1] != 0)
      throw std::logic_error("build_system_operators: x1-derivative survived in L3");
  return ops;
}

}  // namespace fcm
