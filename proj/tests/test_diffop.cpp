#include "fcm/diffop.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

#include "fcm/quadrature.hpp"
#include "helpers.hpp"

using namespace fcm;
using fcm::testing::random_point;
using fcm::testing::random_smooth;
using fcm::testing::rel_err;

namespace {

LinDiffOp random_op(std::mt19937_64& rng, int nvars, int max_order, int max_terms) {
  std::vector<LinDiffOp::Term> terms;
  int nt = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_terms));
  for (int k = 0; k < nt; ++k) {
    MultiIndex idx(nvars);
    int budget = static_cast<int>(rng() % static_cast<unsigned>(max_order + 1));
    for (int j = 0; j < budget; ++j)
      ++idx.a[rng() % idx.a.size()];
    terms.push_back({random_smooth(rng, nvars), idx});
  }
  return LinDiffOp(nvars, terms);
}

double apply_at(const LinDiffOp& A, const Expr& u, const std::vector<double>& p) {
  return evaluate(op_apply(A, u), p);
}

}  // namespace

TEST_CASE("multi-index ordering and arithmetic") {
  MultiIndex z(2);
  CHECK(z.order() == 0);
  MultiIndex dt{1, 0, 0}, d1{0, 1, 0}, d2{0, 0, 1}, d22{0, 0, 2};
  CHECK(graded_lex_less(z, dt));
  CHECK(graded_lex_less(d2, d1));
  CHECK(graded_lex_less(d1, dt));
  CHECK(graded_lex_less(d2, d22));
  CHECK(graded_lex_less(dt, d22));
  CHECK_FALSE(graded_lex_less(d22, d2));
  CHECK(mi_add(dt, d2) == MultiIndex{1, 0, 1});
  CHECK(mi_sub(d22, d2) == d2);
  CHECK_THROWS(mi_sub(d2, d22));
  CHECK(mi_leq(d2, d22));
  CHECK_FALSE(mi_leq(dt, d22));
  CHECK(mi_binom(MultiIndex{2, 0, 1}, MultiIndex{1, 0, 1}) == doctest::Approx(2.0));
  CHECK(mi_below(MultiIndex{1, 0, 1}).size() == 4);
  CHECK(mi_to_string(d22) == "(0,0,2)");
}

TEST_CASE("basic operator action") {
  int nv = 2;
  Expr x1 = variable(1), x2 = variable(2), t = variable(0);
  auto D1 = LinDiffOp::partial(1, nv);
  auto u = mul(ipow(x1, 2), x2);
  std::vector<double> p{0.3, 0.7, -0.4};
  CHECK(evaluate(op_apply(D1, u), p) == doctest::Approx(2 * 0.7 * -0.4));

  auto Dt = LinDiffOp::partial(0, nv);
  auto w = mul(t, sin_e(x1));
  CHECK(evaluate(op_apply(Dt, w), p) == doctest::Approx(std::sin(0.7)));

  auto Id = LinDiffOp::identity(nv);
  CHECK(evaluate(op_apply(Id, u), p) == doctest::Approx(evaluate(u, p)));
  CHECK(LinDiffOp::zero(nv).is_zero());
  CHECK(LinDiffOp::zero(nv).order() == -1);
  CHECK(Id.order() == 0);
  CHECK(D1.order() == 1);
}

TEST_CASE("canonical term merging drops structural zeros") {
  int nv = 1;
  MultiIndex d1{0, 1};
  Expr c = add(variable(1), sin_e(variable(0)));
  LinDiffOp A(nv, {{c, d1}, {negate(c), d1}});
  CHECK(A.is_zero());

  LinDiffOp B(nv, {{constant(2.0), d1}, {constant(3.0), d1}});
  CHECK(B.terms().size() == 1);
  CHECK(B.terms()[0].coeff.const_value() == doctest::Approx(5.0));
}

TEST_CASE("terms are sorted graded-lex ascending") {
  int nv = 2;
  LinDiffOp A(nv, {{constant(1.0), MultiIndex{0, 0, 2}},
                   {constant(1.0), MultiIndex{1, 0, 0}},
                   {constant(1.0), MultiIndex{0, 0, 0}},
                   {constant(1.0), MultiIndex{0, 0, 1}}});
  REQUIRE(A.terms().size() == 4);
  CHECK(A.terms()[0].idx == MultiIndex{0, 0, 0});
  CHECK(A.terms()[1].idx == MultiIndex{0, 0, 1});
  CHECK(A.terms()[2].idx == MultiIndex{1, 0, 0});
  CHECK(A.terms()[3].idx == MultiIndex{0, 0, 2});
}

TEST_CASE("compose agrees with sequential application") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 60; ++rep) {
    int nv = 2;
    auto A = random_op(rng, nv, 2, 2);
    auto B = random_op(rng, nv, 2, 2);
    auto AB = op_compose(A, B);
    auto u = random_smooth(rng, nv);
    for (int k = 0; k < 3; ++k) {
      auto p = random_point(rng, nv);
      double seq = apply_at(A, op_apply(B, u), p);
      double cmp = apply_at(AB, u, p);
      CHECK(rel_err(cmp, seq) <= 1e-10);
    }
  }
}

TEST_CASE("composition is associative") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 25; ++rep) {
    int nv = 2;
    auto A = random_op(rng, nv, 1, 2);
    auto B = random_op(rng, nv, 1, 2);
    auto C = random_op(rng, nv, 1, 2);
    auto L = op_compose(op_compose(A, B), C);
    auto R = op_compose(A, op_compose(B, C));
    auto u = random_smooth(rng, nv);
    auto p = random_point(rng, nv);
    CHECK(rel_err(apply_at(L, u, p), apply_at(R, u, p)) <= 1e-10);
  }
}

TEST_CASE("commutator of d/dx1 with multiplication by x1 is the identity") {
  int nv = 2;
  auto D1 = LinDiffOp::partial(1, nv);
  auto X1 = LinDiffOp::scalar(variable(1), nv);
  auto C = op_commutator(D1, X1);
  REQUIRE(C.terms().size() == 1);
  CHECK(C.terms()[0].idx == MultiIndex{0, 0, 0});
  CHECK(C.terms()[0].coeff.is_one());
}

TEST_CASE("commutator with x1-independent coefficients vanishes structurally") {
  int nv = 2;
  auto D1 = LinDiffOp::partial(1, nv);
  Expr c = mul(sin_e(variable(2)), variable(0));
  LinDiffOp A(nv, {{c, MultiIndex{0, 0, 1}}, {negate(c), MultiIndex{1, 0, 0}}});
  CHECK(op_commutator(D1, A).is_zero());
}

TEST_CASE("commutator annihilates the scaled term") {
  int nv = 2;
  Expr a = add(constant(2.0), mul(variable(1), variable(2)));
  LinDiffOp A(nv, {{a, MultiIndex{0, 0, 1}}, {variable(0), MultiIndex{1, 0, 0}}});
  auto D1 = LinDiffOp::partial(1, nv);
  auto N = op_commutator(D1, op_scale_div(A, a));
  for (const auto& t : N.terms()) CHECK(t.idx != MultiIndex{0, 0, 1});
}

TEST_CASE("commutator is bilinear and antisymmetric") {
  std::mt19937_64 rng(9001);
  int nv = 2;
  for (int rep = 0; rep < 20; ++rep) {
    auto A = random_op(rng, nv, 2, 2);
    auto B = random_op(rng, nv, 2, 2);
    auto C = random_op(rng, nv, 2, 2);
    auto u = random_smooth(rng, nv);
    auto p = random_point(rng, nv);
    double lhs = apply_at(op_commutator(op_add(A, B), C), u, p);
    double rhs = apply_at(op_add(op_commutator(A, C), op_commutator(B, C)), u, p);
    CHECK(rel_err(lhs, rhs) <= 1e-10);
    double anti = apply_at(op_add(op_commutator(A, B), op_commutator(B, A)), u, p);
    CHECK(std::abs(anti) <= 1e-9 * std::max(1.0, std::abs(apply_at(op_commutator(A, B), u, p))));
  }
}

TEST_CASE("Jacobi identity") {
  std::mt19937_64 rng(5150);
  int nv = 2;
  for (int rep = 0; rep < 10; ++rep) {
    auto A = random_op(rng, nv, 1, 2);
    auto B = random_op(rng, nv, 1, 2);
    auto C = random_op(rng, nv, 1, 2);
    auto J = op_add(op_add(op_commutator(A, op_commutator(B, C)),
                           op_commutator(B, op_commutator(C, A))),
                    op_commutator(C, op_commutator(A, B)));
    auto u = random_smooth(rng, nv);
    auto p = random_point(rng, nv);
    double scale = std::max({1.0, std::abs(apply_at(op_commutator(B, C), u, p)),
                             std::abs(apply_at(op_commutator(A, B), u, p))});
    CHECK(std::abs(apply_at(J, u, p)) <= 1e-9 * scale);
  }
}

TEST_CASE("adjoint matches integration by parts on compact supports") {
  int nv = 1;
  std::mt19937_64 rng(424242);
  for (int rep = 0; rep < 6; ++rep) {
    auto A = random_op(rng, nv, 2, 2);
    Expr bu = mul(bump(0, -0.8, 0.6), bump(1, -0.7, 0.8));
    Expr bv = mul(bump(0, -0.9, 0.8), bump(1, -0.6, 0.9));
    Expr u = mul(bu, random_smooth(rng, nv));
    Expr v = mul(bv, random_smooth(rng, nv));
    Expr f = mul(op_apply(A, u), v);
    Expr g = mul(u, op_apply(op_adjoint(A), v));
    auto dbl = [&](const Expr& e) {
      auto outer = [&](double tv) {
        auto inner = [&](double xv) { return evaluate(e, {tv, xv}); };
        return integrate_adaptive(inner, -1.0, 1.0, 1e-10);
      };
      return integrate_adaptive(outer, -1.0, 1.0, 1e-10);
    };
    double lhs = dbl(f), rhs = dbl(g);
    CHECK(rel_err(lhs, rhs) <= 1e-7);
  }
}

TEST_CASE("adjoint is an involution") {
  std::mt19937_64 rng(31337);
  int nv = 2;
  for (int rep = 0; rep < 25; ++rep) {
    auto A = random_op(rng, nv, 2, 2);
    auto AA = op_adjoint(op_adjoint(A));
    auto u = random_smooth(rng, nv);
    for (int k = 0; k < 2; ++k) {
      auto p = random_point(rng, nv);
      CHECK(rel_err(apply_at(AA, u, p), apply_at(A, u, p)) <= 1e-10);
    }
  }
}

TEST_CASE("adjoint reverses composition") {
  std::mt19937_64 rng(8675309);
  int nv = 2;
  for (int rep = 0; rep < 15; ++rep) {
    auto A = random_op(rng, nv, 1, 2);
    auto B = random_op(rng, nv, 1, 2);
    auto L = op_adjoint(op_compose(A, B));
    auto R = op_compose(op_adjoint(B), op_adjoint(A));
    auto u = random_smooth(rng, nv);
    auto p = random_point(rng, nv);
    CHECK(rel_err(apply_at(L, u, p), apply_at(R, u, p)) <= 1e-10);
  }
}

TEST_CASE("adjoint of first order operator in closed form") {
  int nv = 1;
  Expr c = mul(variable(0), ipow(variable(1), 2));
  LinDiffOp A(nv, {{c, MultiIndex{0, 1}}});
  auto As = op_adjoint(A);
  REQUIRE(As.terms().size() == 2);
  std::vector<double> p{1.3, -0.6};
  CHECK(evaluate(As.coeff_of(MultiIndex{0, 1}), p) == doctest::Approx(-1.3 * 0.36));
  CHECK(evaluate(As.coeff_of(MultiIndex{0, 0}), p) == doctest::Approx(-1.3 * 2 * -0.6));
}

TEST_CASE("scale and scale_div invert each other") {
  std::mt19937_64 rng(1123);
  int nv = 2;
  auto A = random_op(rng, nv, 2, 2);
  Expr c = add(constant(2.0), ipow(sin_e(variable(1)), 2));
  auto back = op_scale(c, op_scale_div(A, c));
  auto u = random_smooth(rng, nv);
  for (int k = 0; k < 4; ++k) {
    auto p = random_point(rng, nv);
    CHECK(rel_err(apply_at(back, u, p), apply_at(A, u, p)) <= 1e-11);
  }
}

TEST_CASE("operator matrices compose and apply consistently") {
  int nv = 1;
  std::mt19937_64 rng(220);
  OpMatrix A(2, 2, nv), B(2, 2, nv);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      A.at(i, j) = random_op(rng, nv, 1, 2);
      B.at(i, j) = random_op(rng, nv, 1, 2);
    }
  auto AB = op_matrix_compose(A, B);
  std::vector<Expr> u{random_smooth(rng, nv), random_smooth(rng, nv)};
  auto seq = op_matrix_apply(A, op_matrix_apply(B, u));
  auto direct = op_matrix_apply(AB, u);
  for (int k = 0; k < 4; ++k) {
    auto p = random_point(rng, nv);
    for (int i = 0; i < 2; ++i)
      CHECK(rel_err(evaluate(direct[static_cast<size_t>(i)], p),
                    evaluate(seq[static_cast<size_t>(i)], p)) <= 1e-10);
  }
  CHECK(AB.order() <= A.order() + B.order());
  CHECK_THROWS(A.at(2, 0));
}

TEST_CASE("arity mismatches are rejected") {
  CHECK_THROWS(op_add(LinDiffOp::identity(1), LinDiffOp::identity(2)));
  CHECK_THROWS(op_compose(LinDiffOp::identity(1), LinDiffOp::identity(2)));
  CHECK_THROWS(LinDiffOp::partial(3, 2));
  CHECK_THROWS(LinDiffOp(1, {{constant(1.0), MultiIndex{0, 0, 1}}}));
}
