#include "fcm/solvability.hpp"

#include <cmath>
#include <map>
#include <random>

#include "corpus.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"

using namespace fcm;
using fcm::testing::base_system_1d;
using fcm::testing::base_system_2d;
using fcm::testing::condition_corpus;
using fcm::testing::random_point;
using fcm::testing::random_smooth;
using fcm::testing::rel_err;

TEST_CASE("window geometry") {
  Window w({0.0, 0.0}, {1.0, 2.0});
  CHECK(w.volume() == doctest::Approx(2.0));
  CHECK(w.contains({0.5, 1.0}));
  CHECK_FALSE(w.contains({0.5, 2.5}));
  CHECK(w.contains(Window({0.1, 0.1}, {0.9, 1.9})));
  CHECK_FALSE(w.contains(Window({0.1, 0.1}, {0.9, 2.1})));
  CHECK_THROWS(Window({1.0}, {1.0}));
  auto cell = dyadic_cell(w, 1, {1, 0});
  CHECK(cell.lo[0] == doctest::Approx(0.5));
  CHECK(cell.hi[0] == doctest::Approx(1.0));
  CHECK(cell.hi[1] == doctest::Approx(1.0));
  CHECK(grid_points(w, 4).size() == 16);
}

TEST_CASE("system validation") {
  auto s = base_system_2d();
  CHECK_NOTHROW(validate_system(s));

  auto bad = s;
  bad.window = Window({0.0, -1.0, 0.5}, {1.0, 1.25, 1.5});
  CHECK_THROWS_AS(validate_system(bad), std::invalid_argument);

  auto thin = s;
  thin.d2[ParabolicSystem::tri_index(2, 1, 1)] = mul(constant(0.01), variable(1));
  CHECK_THROWS_AS(validate_system(thin), std::invalid_argument);

  auto nonsym = s;
  nonsym.d1.pop_back();
  CHECK_THROWS_AS(validate_system(nonsym), std::invalid_argument);
}

TEST_CASE("operators for the constant-coefficient 1d system") {
  auto s = base_system_1d(0.25, 1.25, 2.0);
  s.a22 = constant(2.0);
  auto ops = build_system_operators(s);

  REQUIRE(ops.L2.terms().size() == 3);
  CHECK(ops.L2.coeff_of(MultiIndex{1, 0}).const_value() == doctest::Approx(-1.0));
  CHECK(ops.L2.coeff_of(MultiIndex{0, 2}).const_value() == doctest::Approx(-1.0));
  CHECK(ops.L2.coeff_of(MultiIndex{0, 0}).const_value() == doctest::Approx(-2.0));

  REQUIRE(ops.L3.terms().size() == 2);
  CHECK(ops.L3.coeff_of(MultiIndex{1, 0}).const_value() == doctest::Approx(-1.0));
  CHECK(ops.L3.coeff_of(MultiIndex{0, 0}).const_value() == doctest::Approx(-2.0));

  REQUIRE(ops.bracket.terms().size() == 1);
  CHECK(ops.bracket.coeff_of(MultiIndex{0, 1}).const_value() == doctest::Approx(-1.0));
}

TEST_CASE("a22 tilde reduces to -a22 without drift") {
  auto s = base_system_2d();
  s.a22 = mul(variable(1), variable(2));
  auto ops = build_system_operators(s);
  Expr at = ops.L3.coeff_of(MultiIndex{0, 0, 0});
  auto p = std::vector<double>{0.3, 0.7, 1.1};
  CHECK(evaluate(at, p) == doctest::Approx(-0.7 * 1.1));
}

TEST_CASE("L3 acting on functions of x1 alone is zero-order") {
  auto s = base_system_2d();
  s.g22[1] = sin_e(variable(1));
  s.a22 = negate(mul(variable(1), variable(2)));
  auto ops = build_system_operators(s);
  Expr u = sin_e(variable(1));
  Expr lhs = op_apply(ops.L3, u);
  Expr at = ops.L3.coeff_of(MultiIndex{0, 0, 0});
  Expr rhs = mul(at, u);
  for (const auto& p : random_points(s.window, 12, 99))
    CHECK(rel_err(evaluate(lhs, p), evaluate(rhs, p)) <= 1e-12);
}

TEST_CASE("L3 never contains x1-derivatives") {
  auto s = base_system_2d();
  s.d2 = {add(constant(1.5), mul(constant(0.25), sin_e(variable(2)))),
          mul(constant(0.3), variable(1)),
          add(constant(2.0), mul(constant(0.5), cos_e(variable(1))))};
  s.d0 = 0.5;
  s.g22 = {mul(variable(2), constant(0.5)), cos_e(variable(1))};
  s.a22 = mul(variable(1), sin_e(variable(2)));
  auto ops = build_system_operators(s);
  for (const auto& t : ops.L3.terms()) CHECK(t.idx.a[1] == 0);
}

TEST_CASE("closed-form L2 agrees with the formal adjoint") {
  auto s = base_system_2d();
  s.d2 = {add(constant(1.5), mul(constant(0.25), sin_e(variable(2)))),
          mul(constant(0.3), variable(1)),
          add(constant(2.0), mul(constant(0.5), cos_e(variable(1))))};
  s.d0 = 0.5;
  s.g22 = {mul(variable(2), constant(0.5)), cos_e(variable(1))};
  s.a22 = mul(variable(1), sin_e(variable(2)));
  auto ops = build_system_operators(s);
  LinDiffOp adj = op_adjoint(ops.L0.at(0, 1));
  std::mt19937_64 rng(515);
  for (int k = 0; k < 8; ++k) {
    Expr u = random_smooth(rng, 2);
    auto p = random_point(rng, 2, 0.2, 0.9);
    CHECK(rel_err(evaluate(op_apply(ops.L2, u), p), evaluate(op_apply(adj, u), p)) <= 1e-10);
  }
}

TEST_CASE("system rows match their hand-written expressions") {
  auto s = base_system_2d();
  s.g11 = {constant(0.5), variable(2)};
  s.g12 = {constant(0.0), sin_e(variable(0))};
  s.a11 = constant(1.5);
  s.a12 = variable(1);
  s.a22 = negate(mul(variable(1), variable(2)));
  auto ops = build_system_operators(s);

  Expr z1 = mul(sin_e(variable(1)), cos_e(variable(2)));
  Expr z2 = mul(variable(0), ipow(variable(1), 2));
  Expr v = cos_e(variable(0));
  auto rows = op_matrix_apply(ops.L, {z1, z2, v});

  auto d = [](const Expr& e, int var) { return differentiate(e, var); };
  Expr lap1 = add(d(d(z1, 1), 1), d(d(z1, 2), 2));
  Expr row0 = sum({d(z1, 0), negate(lap1), negate(mul(constant(0.5), d(z1, 1))),
                   negate(mul(variable(2), d(z1, 2))), negate(mul(constant(1.5), z1)),
                   negate(mul(sin_e(variable(0)), d(z2, 2))),
                   negate(mul(variable(1), z2)), negate(v)});
  Expr lap2 = add(d(d(z2, 1), 1), d(d(z2, 2), 2));
  Expr row1 = sum({d(z2, 0), negate(lap2), mul(mul(variable(1), variable(2)), z2),
                   negate(d(z1, 1))});
  for (const auto& p : random_points(s.window, 10, 7)) {
    CHECK(rel_err(evaluate(rows[0], p), evaluate(row0, p)) <= 1e-12);
    CHECK(rel_err(evaluate(rows[1], p), evaluate(row1, p)) <= 1e-12);
  }
}

TEST_CASE("normal form flag is required") {
  auto s = base_system_2d();
  s.normal_form = false;
  CHECK_THROWS_AS(build_system_operators(s), std::invalid_argument);
}

TEST_CASE("condition check on the spec instances") {
  SamplingSpec grid;

  auto corpus = condition_corpus();
  auto find = [&](const std::string& name) -> const fcm::testing::ConditionCase& {
    for (const auto& c : corpus)
      if (c.name == name) return c;
    throw std::runtime_error("missing corpus case " + name);
  };

  const auto& constant_case = find("constant potential (1d)");
  auto rep = check_condition(constant_case.sys, constant_case.sys.window, grid, 1e-6);
  CHECK(rep.verdict == Verdict::fails);
  for (const auto& sl : rep.slices) CHECK(sl.residual <= 1e-10);

  const auto& witness_case = find("spectral witness potential (1d)");
  auto rep2 = check_condition(witness_case.sys, witness_case.sys.window, grid, 1e-6);
  CHECK(rep2.verdict == Verdict::holds);
  CHECK(witness_case.sys.window.contains(rep2.witness));

  auto exact = base_system_2d();
  exact.g22[1] = sin_e(variable(1));
  exact.a22 = negate(sin_e(variable(1)));
  auto rep3 = check_condition(exact, exact.window, grid, 1e-6);
  CHECK(rep3.verdict == Verdict::fails);
  for (const auto& sl : rep3.slices) CHECK(sl.residual <= 1e-10);

  CHECK_THROWS_AS(check_condition(exact, exact.window, grid, 0.0), std::invalid_argument);
  Window outside({0.0, 0.0, 0.5}, {1.0, 1.25, 1.5});
  CHECK_THROWS_AS(check_condition(exact, outside, grid, 1e-6), std::invalid_argument);
}

TEST_CASE("elimination with no derivative terms inverts directly") {
  int nv = 2;
  Window w({0.0, 0.25, 0.5}, {1.0, 1.25, 1.5});
  LinDiffOp L1 = LinDiffOp::partial(1, nv);
  LinDiffOp L2 = LinDiffOp::scalar(constant(2.0), nv);
  auto res = eliminate(L1, L2, w, 0.0);
  CHECK(res.steps == 0);
  CHECK(res.M1.is_zero());
  REQUIRE(res.M2.terms().size() == 1);
  CHECK(res.M2.terms()[0].coeff.const_value() == doctest::Approx(0.5));
  CHECK(res.M2.terms()[0].idx.order() == 0);
  CHECK(res.multiplier.const_value() == doctest::Approx(2.0));
}

TEST_CASE("elimination of the two-term spec example") {
  int nv = 2;
  Window w({0.0, 0.25, 0.5}, {1.0, 1.25, 1.5});
  LinDiffOp L1 = LinDiffOp::partial(1, nv);
  LinDiffOp L2(nv, {{mul(variable(1), variable(2)), MultiIndex{0, 0, 0}},
                    {variable(2), MultiIndex{0, 0, 1}}});
  auto res = eliminate(L1, L2, w, 0.0);
  CHECK(res.steps == 1);
  CHECK(w.contains(res.final_window));

  LinDiffOp combo = op_add(op_compose(res.M1, L1), op_compose(res.M2, L2));
  double resid = verify_identity(LinDiffOp::identity(nv), combo, res.final_window, 10);
  CHECK(resid <= 1e-8);
}

TEST_CASE("elimination refuses constant zero-order coefficients") {
  int nv = 2;
  Window w({0.0, 0.25, 0.5}, {1.0, 1.25, 1.5});
  LinDiffOp L1 = LinDiffOp::partial(1, nv);
  LinDiffOp L2(nv, {{constant(1.0), MultiIndex{0, 0, 0}},
                    {constant(-1.0), MultiIndex{1, 0, 0}},
                    {constant(-1.0), MultiIndex{0, 0, 2}}});
  CHECK_THROWS_AS(eliminate(L1, L2, w, 0.0), SolvabilityError);
  try {
    eliminate(L1, L2, w, 0.0);
  } catch (const SolvabilityError& e) {
    CHECK(std::string(e.what()).find("non-solvable") != std::string::npos);
  }
}

TEST_CASE("elimination preconditions") {
  int nv = 2;
  Window w({0.0, 0.25, 0.5}, {1.0, 1.25, 1.5});
  LinDiffOp L1 = LinDiffOp::partial(1, nv);
  LinDiffOp with_x1(nv, {{constant(1.0), MultiIndex{0, 1, 0}}});
  CHECK_THROWS_AS(eliminate(L1, with_x1, w, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(eliminate(LinDiffOp::partial(2, nv), with_x1, w, 0.0), std::invalid_argument);
}

TEST_CASE("corpus: condition verdict and elimination agree") {
  SamplingSpec grid;
  std::map<std::string, int> expected_steps = {
      {"bilinear potential", 1},
      {"spectral witness potential (1d)", 1},
      {"exponential with time factor", 1},
      {"cubic against trig diffusion", 2},
      {"quadratic against linear drift", 2},
  };
  for (const auto& c : condition_corpus()) {
    CAPTURE(c.name);
    auto rep = check_condition(c.sys, c.sys.window, grid, 1e-6);
    auto ops = build_system_operators(c.sys);
    Window win = c.sys.window;
    if (c.member) {
      CHECK(rep.verdict == Verdict::fails);
      CHECK_THROWS_AS(eliminate(ops.L1, ops.L3, win, 0.0), SolvabilityError);
    } else {
      CHECK(rep.verdict == Verdict::holds);
      auto res = eliminate(ops.L1, ops.L3, win, 0.0);
      CHECK(win.contains(res.final_window));
      CHECK(res.steps == expected_steps.at(c.name));
      CHECK(res.order <= res.order_bound);
      LinDiffOp combo = op_add(op_compose(res.M1, ops.L1), op_compose(res.M2, ops.L3));
      CHECK(verify_identity(LinDiffOp::identity(c.sys.N), combo, res.final_window, 10) <= 1e-8);
    }
  }
}

TEST_CASE("a strict threshold forces the witness case onto a sub-window") {
  // The terminal coefficient vanishes at x ~ 0.4163 inside the window, so
  // a threshold of 0.01 rules out the cells around the zero while the left
  // half still clears it.
  auto corpus = condition_corpus();
  for (const auto& c : corpus) {
    if (c.name != "spectral witness potential (1d)") continue;
    auto ops = build_system_operators(c.sys);
    auto res = eliminate(ops.L1, ops.L3, c.sys.window, 0.01);
    CHECK(res.final_window.volume() < 0.999 * c.sys.window.volume());
    CHECK(c.sys.window.contains(res.final_window));
    CHECK(res.final_window.hi[1] < 0.4163);
    LinDiffOp combo = op_add(op_compose(res.M1, ops.L1), op_compose(res.M2, ops.L3));
    CHECK(verify_identity(LinDiffOp::identity(1), combo, res.final_window, 10) <= 1e-8);
  }
}

TEST_CASE("full solver for the bilinear-potential system") {
  auto s = base_system_2d();
  s.a22 = negate(mul(variable(1), variable(2)));
  s.a12 = constant(0.5);
  auto ops = build_system_operators(s);
  auto elim = eliminate(ops.L1, ops.L3, s.window, 0.0);
  CHECK(elim.steps == 1);
  auto solver = assemble_full_solver(s, elim);
  CHECK(solver.order <= 4);
  CHECK(solver.M.at(0, 0).is_zero());
  CHECK(solver.M.at(1, 0).is_zero());
  double resid = verify_identity(ops.L, solver.M, solver.window, 20);
  CHECK(resid <= 1e-8);
}

TEST_CASE("full solver for a normal-form 1d system") {
  auto s = base_system_1d(0.25, 1.25, 2.0);
  s.a22 = negate(variable(1));
  s.a12 = constant(0.5);
  auto ops = build_system_operators(s);
  auto elim = eliminate(ops.L1, ops.L3, s.window, 0.0);
  CHECK(elim.order <= elim.order_bound);
  auto solver = assemble_full_solver(s, elim);
  double resid = verify_identity(ops.L, solver.M, solver.window, 20);
  CHECK(resid <= 1e-8);
}

TEST_CASE("verify_identity oracles") {
  int nv = 1;
  Window w({0.0, 0.25}, {1.0, 1.25});
  auto Id = LinDiffOp::identity(nv);
  CHECK(verify_identity(Id, Id, w, 3) == doctest::Approx(0.0));

  auto s = base_system_1d(0.25, 1.25, 2.0);
  s.a22 = negate(variable(1));
  auto ops = build_system_operators(s);
  auto elim = eliminate(ops.L1, ops.L3, s.window, 0.0);
  LinDiffOp combo = op_add(op_compose(elim.M1, ops.L1), op_compose(elim.M2, ops.L3));
  CHECK(verify_identity(LinDiffOp::identity(nv), combo, elim.final_window, 10) <= 1e-8);

  std::vector<LinDiffOp::Term> terms = elim.M2.terms();
  terms.push_back({constant(1e-2), terms.front().idx});
  LinDiffOp corrupted(nv, terms);
  LinDiffOp combo2 = op_add(op_compose(elim.M1, ops.L1), op_compose(corrupted, ops.L3));
  CHECK(verify_identity(LinDiffOp::identity(nv), combo2, elim.final_window, 10) >= 1e-3);
}

TEST_CASE("reports serialize to parseable JSON") {
  auto s = base_system_2d();
  s.a22 = negate(mul(variable(1), variable(2)));
  SamplingSpec grid;
  auto rep = check_condition(s, s.window, grid, 1e-6);
  auto j = nlohmann::json::parse(to_json_string(rep));
  CHECK(j["verdict"] == "holds");
  CHECK(j["slices"].size() == rep.slices.size());
  CHECK(j["witness_window"]["lo"].size() == 3);

  auto ops = build_system_operators(s);
  auto elim = eliminate(ops.L1, ops.L3, s.window, 0.0);
  auto je = nlohmann::json::parse(to_json_string(elim));
  CHECK(je["steps"] == 1);
  CHECK(je["m1_terms"].is_array());
  CHECK(je["m2_terms"][0].contains("multi_index"));
  CHECK(je["order"].get<int>() <= je["order_bound"].get<int>());
}
