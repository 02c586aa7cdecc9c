#pragma once

#include <string>
#include <vector>

#include "fcm/expr.hpp"

namespace fcm {

// Multi-index over (t, x1, .., xN); slot 0 is t.
struct MultiIndex {
  std::vector<int> a;

  MultiIndex() = default;
  explicit MultiIndex(int nvars) : a(static_cast<size_t>(nvars) + 1, 0) {}
  MultiIndex(std::initializer_list<int> v) : a(v) {}

  int order() const;
  int size() const { return static_cast<int>(a.size()); }
  bool is_zero() const { return order() == 0; }

  bool operator==(const MultiIndex& o) const { return a == o.a; }
  bool operator!=(const MultiIndex& o) const { return a != o.a; }
};

// Ascending graded-lexicographic order: compare |alpha| first, then lex.
bool graded_lex_less(const MultiIndex& x, const MultiIndex& y);

MultiIndex mi_add(const MultiIndex& x, const MultiIndex& y);
// Component-wise difference; requires y <= x component-wise.
MultiIndex mi_sub(const MultiIndex& x, const MultiIndex& y);
bool mi_leq(const MultiIndex& x, const MultiIndex& y);
// Product of component binomials C(x_i, y_i).
double mi_binom(const MultiIndex& x, const MultiIndex& y);
// All gamma with gamma <= x component-wise, graded-lex ascending.
std::vector<MultiIndex> mi_below(const MultiIndex& x);
std::string mi_to_string(const MultiIndex& x);

// Linear differential operator sum_k c_k(t,x) D^{alpha_k}.
//
// Terms are kept sorted by ascending graded-lex multi-index with like indices
// merged through the expression factories, so coefficients that cancel
// structurally disappear from the term list.
class LinDiffOp {
 public:
  struct Term {
    Expr coeff;
    MultiIndex idx;
  };

  explicit LinDiffOp(int nvars) : nvars_(nvars) {}
  LinDiffOp(int nvars, std::vector<Term> terms);

  int nvars() const { return nvars_; }
  const std::vector<Term>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  // Max |alpha| over terms; -1 for the zero operator.
  int order() const;
  // Coefficient of D^idx, or the zero expression when absent.
  Expr coeff_of(const MultiIndex& idx) const;
  std::string to_string() const;

  static LinDiffOp zero(int nvars) { return LinDiffOp(nvars); }
  static LinDiffOp identity(int nvars);
  // The first-order operator d/d(var); var 0 is t.
  static LinDiffOp partial(int var, int nvars);
  static LinDiffOp scalar(const Expr& c, int nvars);

 private:
  int nvars_ = 0;
  std::vector<Term> terms_;
};

LinDiffOp op_add(const LinDiffOp& A, const LinDiffOp& B);
LinDiffOp op_sub(const LinDiffOp& A, const LinDiffOp& B);
LinDiffOp op_neg(const LinDiffOp& A);
// c * A (coefficients multiplied on the left).
LinDiffOp op_scale(const Expr& c, const LinDiffOp& A);
// A with every coefficient divided by c.
LinDiffOp op_scale_div(const LinDiffOp& A, const Expr& c);

// A applied to an expression.
Expr op_apply(const LinDiffOp& A, const Expr& u);
// Composition A after B, expanded by the Leibniz rule.
LinDiffOp op_compose(const LinDiffOp& A, const LinDiffOp& B);
// [A, B] = A B - B A.
LinDiffOp op_commutator(const LinDiffOp& A, const LinDiffOp& B);
// Formal adjoint: (c D^alpha)* u = (-1)^{|alpha|} D^alpha (c u), expanded
// into standard form.
LinDiffOp op_adjoint(const LinDiffOp& A);

// D^gamma applied to an expression, axes processed in ascending order.
Expr mi_differentiate(const Expr& e, const MultiIndex& gamma);

// Dense matrix of operators, row-major.
class OpMatrix {
 public:
  OpMatrix(int rows, int cols, int nvars);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nvars() const { return nvars_; }
  LinDiffOp& at(int r, int c);
  const LinDiffOp& at(int r, int c) const;
  // Max entry order; -1 if every entry is zero.
  int order() const;

 private:
  int rows_, cols_, nvars_;
  std::vector<LinDiffOp> entries_;
};

// Matrix-vector action on a column of expressions.
std::vector<Expr> op_matrix_apply(const OpMatrix& M, const std::vector<Expr>& u);
// Matrix product A B with operator composition as scalar multiply.
OpMatrix op_matrix_compose(const OpMatrix& A, const OpMatrix& B);

}  // namespace fcm
