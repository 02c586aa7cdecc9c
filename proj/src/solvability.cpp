#include "fcm/solvability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "json.hpp"

namespace fcm {

namespace {

constexpr double kVanishFactor = 1e-12;
constexpr std::int64_t kNodeBudget = 1000000;

std::string window_text(const Window& w) {
  std::ostringstream os;
  os << "[";
  for (int a = 0; a < w.dim(); ++a) {
    if (a) os << " x ";
    os << "(" << w.lo[static_cast<size_t>(a)] << "," << w.hi[static_cast<size_t>(a)] << ")";
  }
  os << "]";
  return os.str();
}

// Values of e on the points; evaluation failures become NaN.
std::vector<double> sample_values(const Expr& e, const std::vector<std::vector<double>>& pts) {
  std::vector<double> v;
  v.reserve(pts.size());
  for (const auto& p : pts) {
    try {
      v.push_back(evaluate(e, p));
    } catch (const EvalError&) {
      v.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return v;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  bool any = false;
  for (double x : v)
    if (std::isfinite(x)) {
      m = std::max(m, std::abs(x));
      any = true;
    }
  if (!any) throw SolvabilityError("coefficient not evaluable anywhere on the window");
  return m;
}

int sampling_density(int dim) { return dim <= 3 ? 32 : 12; }

// First dyadic sub-box (shallowest qualifying depth, then lexicographic cell
// order) on which every contained sample satisfies |value| > delta. Sample
// layout follows grid_points: axis 0 varies fastest.
std::optional<Window> qualifying_box(const Window& w, int per_axis,
                                     const std::vector<double>& values, double delta) {
  int d = w.dim();
  for (int depth = 0; depth <= 4; ++depth) {
    int cells = 1 << depth;
    if (per_axis % cells != 0) break;
    size_t ncells = 1;
    for (int a = 0; a < d; ++a) ncells *= static_cast<size_t>(cells);
    std::vector<double> cell_min(ncells, std::numeric_limits<double>::infinity());
    for (size_t flat = 0; flat < values.size(); ++flat) {
      size_t rest = flat, id = 0;
      for (int a = 0; a < d; ++a) {
        int ia = static_cast<int>(rest % static_cast<size_t>(per_axis));
        rest /= static_cast<size_t>(per_axis);
        id = id * static_cast<size_t>(cells) + static_cast<size_t>(ia * cells / per_axis);
      }
      double v = values[flat];
      double m = std::isfinite(v) ? std::abs(v) : -1.0;
      cell_min[id] = std::min(cell_min[id], m);
    }
    for (size_t id = 0; id < ncells; ++id) {
      if (!(cell_min[id] > delta)) continue;
      std::vector<int> cell(static_cast<size_t>(d));
      size_t rest = id;
      for (int a = d - 1; a >= 0; --a) {
        cell[static_cast<size_t>(a)] = static_cast<int>(rest % static_cast<size_t>(cells));
        rest /= static_cast<size_t>(cells);
      }
      return dyadic_cell(w, depth, cell);
    }
  }
  return std::nullopt;
}

Expr random_test_function(std::mt19937_64& rng, int nvars) {
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  auto rnd = [&] {
    double c = std::round(coef(rng) * 8.0) / 8.0;
    return c == 0.0 ? 0.5 : c;
  };
  std::vector<Expr> terms;
  int nterms = 2 + static_cast<int>(rng() % 2);
  for (int k = 0; k < nterms; ++k) {
    std::vector<Expr> fac{constant(rnd())};
    int v1 = static_cast<int>(rng() % static_cast<unsigned>(nvars + 1));
    int v2 = static_cast<int>(rng() % static_cast<unsigned>(nvars + 1));
    switch (rng() % 4) {
      case 0: fac.push_back(sin_e(add(mul(constant(rnd()), variable(v1)), variable(v2)))); break;
      case 1: fac.push_back(cos_e(mul(constant(rnd()), variable(v1)))); break;
      case 2: fac.push_back(mul(variable(v1), variable(v2))); break;
      default: fac.push_back(add(variable(v1), ipow(variable(v2), 2))); break;
    }
    terms.push_back(prod(fac));
  }
  return sum(terms);
}

void check_node_budget(const LinDiffOp& op, const char* what) {
  for (const auto& t : op.terms())
    if (node_count(t.coeff) > kNodeBudget) {
      std::ostringstream os;
      os << "expression blow-up in " << what << " (node count " << node_count(t.coeff)
         << " exceeds " << kNodeBudget << ")";
      throw SolvabilityError(os.str());
    }
}

}  // namespace

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::fails: return "fails";
    default: return "inconclusive";
  }
}

ConditionReport check_condition(const ParabolicSystem& sys, const Window& window,
                                const SamplingSpec& grid, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("check_condition: tol must be positive");
  if (!sys.window.contains(window))
    throw std::invalid_argument("check_condition: window leaves the control window");
  SystemOperators ops = build_system_operators(sys);

  std::vector<Expr> generators{constant(1.0)};
  Expr a_tilde = constant(0.0);
  for (const auto& t : ops.L3.terms()) {
    if (t.idx.order() == 0)
      a_tilde = t.coeff;
    else
      generators.push_back(t.coeff);
  }

  // Slice grid over (t, x2..xN); x1 sampled along each slice.
  std::vector<int> slice_axes;
  for (int a = 0; a < window.dim(); ++a)
    if (a != 1) slice_axes.push_back(a);
  Window slice_box(std::vector<double>(slice_axes.size()), std::vector<double>(slice_axes.size(), 1.0));
  for (size_t i = 0; i < slice_axes.size(); ++i) {
    slice_box.lo[i] = window.lo[static_cast<size_t>(slice_axes[i])];
    slice_box.hi[i] = window.hi[static_cast<size_t>(slice_axes[i])];
  }
  auto slice_pts = grid_points(slice_box, grid.slice_per_axis);
  double x1_lo = window.lo[1], x1_hi = window.hi[1];

  ConditionReport report;
  report.tol = tol;
  report.witness = window;
  double worst = 0.0;
  std::vector<double> worst_slice;
  bool degenerate = false;

  for (const auto& sp : slice_pts) {
    std::vector<double> p(static_cast<size_t>(window.dim()), 0.0);
    for (size_t i = 0; i < slice_axes.size(); ++i) p[static_cast<size_t>(slice_axes[i])] = sp[i];

    int m = grid.x1_samples;
    std::vector<double> b(static_cast<size_t>(m));
    std::vector<std::vector<double>> cols(generators.size(),
                                          std::vector<double>(static_cast<size_t>(m)));
    for (int k = 0; k < m; ++k) {
      p[1] = x1_lo + (k + 0.5) * (x1_hi - x1_lo) / m;
      b[static_cast<size_t>(k)] = evaluate(a_tilde, p);
      for (size_t g = 0; g < generators.size(); ++g)
        cols[g][static_cast<size_t>(k)] = evaluate(generators[g], p);
    }

    double bmax = 0.0, gmax = 0.0;
    for (double x : b) bmax = std::max(bmax, std::abs(x));
    for (const auto& c : cols)
      for (double x : c) gmax = std::max(gmax, std::abs(x));
    if (bmax <= 1e-13 && gmax <= 1e-13) {
      degenerate = true;
      report.slices.push_back({sp, 0.0});
      continue;
    }

    // Modified Gram-Schmidt with near-dependent columns dropped.
    std::vector<std::vector<double>> q;
    for (auto col : cols) {
      double orig = std::sqrt(std::inner_product(col.begin(), col.end(), col.begin(), 0.0));
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& e : q) {
          double c = std::inner_product(col.begin(), col.end(), e.begin(), 0.0);
          for (size_t i = 0; i < col.size(); ++i) col[i] -= c * e[i];
        }
      double n = std::sqrt(std::inner_product(col.begin(), col.end(), col.begin(), 0.0));
      if (n > 1e-10 * std::max(1.0, orig)) {
        for (auto& x : col) x /= n;
        q.push_back(std::move(col));
      }
    }
    std::vector<double> r = b;
    for (const auto& e : q) {
      double c = std::inner_product(r.begin(), r.end(), e.begin(), 0.0);
      for (size_t i = 0; i < r.size(); ++i) r[i] -= c * e[i];
    }
    double rn = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
    double bn = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    double resid = bn > 0.0 ? rn / bn : 0.0;
    report.slices.push_back({sp, resid});
    if (resid > worst) {
      worst = resid;
      worst_slice = sp;
    }
  }

  if (degenerate) {
    report.verdict = Verdict::inconclusive;
    return report;
  }
  if (worst >= 10.0 * tol) {
    report.verdict = Verdict::holds;
    // Witness: the slice cell around the worst slice, full x1 extent.
    Window wit = window;
    for (size_t i = 0; i < slice_axes.size(); ++i) {
      auto ax = static_cast<size_t>(slice_axes[i]);
      double h = slice_box.extent(static_cast<int>(i)) / grid.slice_per_axis;
      wit.lo[ax] = worst_slice[i] - 0.5 * h;
      wit.hi[ax] = worst_slice[i] + 0.5 * h;
    }
    report.witness = wit;
  } else {
    bool all_below = true;
    for (const auto& s : report.slices) all_below = all_below && s.residual <= tol;
    report.verdict = all_below ? Verdict::fails : Verdict::inconclusive;
  }
  return report;
}

double pair_residual(const LinDiffOp& N, const PairDecomposition& pair,
                     const LinDiffOp& L1, const LinDiffOp& L2,
                     const Window& window, int trials, std::uint64_t seed) {
  LinDiffOp recomposed = op_add(op_compose(pair.A, L1), op_compose(pair.B, L2));
  LinDiffOp diff = op_sub(N, recomposed);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    Expr u = random_test_function(rng, N.nvars());
    Expr r = op_apply(diff, u);
    Expr scale = op_apply(N, u);
    for (const auto& p : random_points(window, 3, rng())) {
      double rv = evaluate(r, p);
      double sv = evaluate(scale, p);
      worst = std::max(worst, std::abs(rv) / std::max(1.0, std::abs(sv)));
    }
  }
  return worst;
}

EliminationResult eliminate(const LinDiffOp& L1, const LinDiffOp& L2,
                            const Window& window, double delta) {
  int nv = L1.nvars();
  {
    MultiIndex e1(nv);
    e1.a[1] = 1;
    bool ok = L1.terms().size() == 1 && L1.terms()[0].idx == e1 && L1.terms()[0].coeff.is_one();
    if (!ok) throw std::invalid_argument("eliminate: L1 must be d/dx1");
  }
  for (const auto& t : L2.terms())
    if (t.idx.a[1] != 0)
      throw std::invalid_argument("eliminate: L2 must not contain x1-derivatives");
  if (window.dim() != nv + 1) throw std::invalid_argument("eliminate: window arity mismatch");

  int per_axis = sampling_density(window.dim());
  Window cur = window;
  double min_volume = 1e-15 * window.volume();

  double vanish_scale = 1.0;
  {
    auto pts = grid_points(cur, per_axis);
    for (const auto& t : L2.terms())
      vanish_scale = std::max(vanish_scale, max_abs(sample_values(t.coeff, pts)));
  }
  double vanish_tol = kVanishFactor * vanish_scale;

  LinDiffOp N = L2;
  PairDecomposition pair{LinDiffOp::zero(nv), LinDiffOp::identity(nv)};
  int steps = 0;
  int step_limit = 0;
  for (const auto& t : L2.terms())
    if (t.idx.order() >= 1) ++step_limit;
  int order_bound = 0;

  for (;;) {
    auto pts = grid_points(cur, per_axis);
    const LinDiffOp::Term* chosen = nullptr;
    std::vector<double> chosen_vals;
    bool gray_zone = false;
    for (const auto& t : N.terms()) {
      if (t.idx.order() == 0) continue;
      auto vals = sample_values(t.coeff, pts);
      if (max_abs(vals) <= vanish_tol) continue;
      chosen = &t;
      chosen_vals = std::move(vals);
      break;
    }

    if (chosen == nullptr) {
      Expr c = N.coeff_of(MultiIndex(nv));
      auto cvals = sample_values(c, pts);
      if (c.is_zero() || max_abs(cvals) <= vanish_tol)
        throw SolvabilityError("non-solvable on window " + window_text(cur) +
                               ": zero-order coefficient vanishes with all derivative terms");
      double eff = delta > 0.0 ? delta : 1e-6 * max_abs(cvals);
      auto box = qualifying_box(cur, per_axis, cvals, eff);
      if (!box)
        throw SolvabilityError("non-solvable on window " + window_text(cur) +
                               ": zero-order coefficient has no selectable sub-box");
      cur = *box;
      EliminationResult res{op_scale_div(pair.A, c), op_scale_div(pair.B, c),
                            cur, steps, c, 0, order_bound};
      res.order = std::max(res.M1.order(), res.M2.order());
      check_node_budget(res.M1, "M1");
      check_node_budget(res.M2, "M2");
      return res;
    }

    double eff = delta > 0.0 ? delta : 1e-6 * max_abs(chosen_vals);
    auto box = qualifying_box(cur, per_axis, chosen_vals, eff);
    if (!box) {
      gray_zone = true;
    } else {
      cur = *box;
      if (cur.volume() < min_volume)
        throw SolvabilityError("window shrank below minimum volume at " + window_text(cur));
    }
    if (gray_zone)
      throw SolvabilityError(
          "non-solvable on window " + window_text(cur) +
          ": coefficient of D" + mi_to_string(chosen->idx) +
          " neither vanishes nor admits a sub-box above threshold");

    order_bound += N.order();
    Expr ak = chosen->coeff;
    MultiIndex killed = chosen->idx;
    LinDiffOp N_next = op_commutator(L1, op_scale_div(N, ak));
    for (const auto& t : N_next.terms()) {
      if (t.idx == killed)
        throw std::logic_error("eliminate: selected term survived the commutator");
      if (N.coeff_of(t.idx).is_zero())
        throw std::logic_error("eliminate: commutator introduced a new multi-index");
    }
    pair.A = op_sub(op_commutator(L1, op_scale_div(pair.A, ak)),
                    op_compose(op_scale_div(pair.B, ak), L2));
    pair.B = op_compose(L1, op_scale_div(pair.B, ak));
    N = N_next;
    ++steps;
    if (steps > step_limit)
      throw std::logic_error("eliminate: step count exceeded the derivative-term bound");
    check_node_budget(N, "the eliminated operator");
    check_node_budget(pair.A, "accumulator A");
    check_node_budget(pair.B, "accumulator B");
    double pr = pair_residual(N, pair, L1, L2, cur, 10, 0xfeedu + static_cast<unsigned>(steps));
    if (pr > 1e-8) {
      std::ostringstream os;
      os << "eliminate: pair decomposition invariant violated (residual " << pr << ")";
      throw std::logic_error(os.str());
    }
  }
}

AssembledSolver assemble_full_solver(const ParabolicSystem& sys,
                                     const EliminationResult& elim) {
  SystemOperators ops = build_system_operators(sys);
  int nv = sys.N;
  LinDiffOp m1t = op_sub(elim.M1, op_compose(elim.M2, ops.bracket));
  LinDiffOp m2t = elim.M2;
  LinDiffOp m1t_adj = op_adjoint(m1t);
  LinDiffOp m2t_adj = op_adjoint(m2t);

  AssembledSolver out{OpMatrix(3, 2, nv), 0, elim.final_window};
  out.M.at(0, 1) = m1t_adj;
  out.M.at(1, 1) = m2t_adj;
  out.M.at(2, 0) = op_neg(LinDiffOp::identity(nv));
  out.M.at(2, 1) = op_add(op_compose(ops.L.at(0, 0), m1t_adj),
                          op_compose(ops.L.at(0, 1), m2t_adj));
  out.order = out.M.order();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) check_node_budget(out.M.at(r, c), "assembled solver");
  return out;
}

double verify_identity(const LinDiffOp& L, const LinDiffOp& M, const Window& window,
                       int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("verify_identity: trials must be >= 1");
  LinDiffOp R = op_sub(op_compose(L, M), LinDiffOp::identity(L.nvars()));
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    Expr u = random_test_function(rng, L.nvars());
    Expr r = op_apply(R, u);
    for (const auto& p : random_points(window, 5, rng())) {
      double uv = evaluate(u, p);
      worst = std::max(worst, std::abs(evaluate(r, p)) / std::max(1.0, std::abs(uv)));
    }
  }
  return worst;
}

double verify_identity(const OpMatrix& L, const OpMatrix& M, const Window& window,
                       int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("verify_identity: trials must be >= 1");
  if (L.cols() != M.rows() || L.rows() != M.cols())
    throw std::invalid_argument("verify_identity: shape mismatch");
  OpMatrix R = op_matrix_compose(L, M);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    std::vector<Expr> f;
    for (int c = 0; c < R.cols(); ++c) f.push_back(random_test_function(rng, L.nvars()));
    auto rf = op_matrix_apply(R, f);
    for (const auto& p : random_points(window, 5, rng())) {
      for (int i = 0; i < R.rows(); ++i) {
        double fi = evaluate(f[static_cast<size_t>(i)], p);
        double ri = evaluate(rf[static_cast<size_t>(i)], p);
        worst = std::max(worst, std::abs(ri - fi) / std::max(1.0, std::abs(fi)));
      }
    }
  }
  return worst;
}

namespace {

nlohmann::json window_json(const Window& w) {
  return {{"lo", w.lo}, {"hi", w.hi}};
}

nlohmann::json op_json(const LinDiffOp& op) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : op.terms())
    terms.push_back({{"coeff", to_string(t.coeff)}, {"multi_index", t.idx.a}});
  return terms;
}

}  // namespace

std::string to_json_string(const ConditionReport& report) {
  nlohmann::json j;
  j["verdict"] = verdict_name(report.verdict);
  j["witness_window"] = window_json(report.witness);
  j["tolerance"] = report.tol;
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : report.slices)
    slices.push_back({{"slice_point", s.slice_point}, {"residual", s.residual}});
  j["slices"] = std::move(slices);
  return j.dump(2);
}

std::string to_json_string(const EliminationResult& result) {
  nlohmann::json j;
  j["m1_terms"] = op_json(result.M1);
  j["m2_terms"] = op_json(result.M2);
  j["final_window"] = window_json(result.final_window);
  j["steps"] = result.steps;
  j["multiplier"] = to_string(result.multiplier);
  j["order"] = result.order;
  j["order_bound"] = result.order_bound;
  return j.dump(2);
}

}  // namespace fcm
