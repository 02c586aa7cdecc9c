#include "fcm/diffop.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fcm {

int MultiIndex::order() const {
  return std::accumulate(a.begin(), a.end(), 0);
}

bool graded_lex_less(const MultiIndex& x, const MultiIndex& y) {
  if (x.a.size() != y.a.size())
    throw std::invalid_argument("multi-index arity mismatch");
  int ox = x.order(), oy = y.order();
  if (ox != oy) return ox < oy;
  return x.a < y.a;
}

MultiIndex mi_add(const MultiIndex& x, const MultiIndex& y) {
  if (x.a.size() != y.a.size())
    throw std::invalid_argument("multi-index arity mismatch");
  MultiIndex r = x;
  for (size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
  return r;
}

MultiIndex mi_sub(const MultiIndex& x, const MultiIndex& y) {
  if (!mi_leq(y, x)) throw std::invalid_argument("multi-index difference would be negative");
  MultiIndex r = x;
  for (size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
  return r;
}

bool mi_leq(const MultiIndex& x, const MultiIndex& y) {
  if (x.a.size() != y.a.size())
    throw std::invalid_argument("multi-index arity mismatch");
  for (size_t i = 0; i < x.a.size(); ++i)
    if (x.a[i] > y.a[i]) return false;
  return true;
}

namespace {

double binom1(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

double mi_binom(const MultiIndex& x, const MultiIndex& y) {
  if (x.a.size() != y.a.size())
    throw std::invalid_argument("multi-index arity mismatch");
  double r = 1.0;
  for (size_t i = 0; i < x.a.size(); ++i) r *= binom1(x.a[i], y.a[i]);
  return r;
}

std::vector<MultiIndex> mi_below(const MultiIndex& x) {
  std::vector<MultiIndex> out;
  MultiIndex g(static_cast<int>(x.a.size()) - 1);
  for (;;) {
    out.push_back(g);
    size_t i = 0;
    while (i < g.a.size()) {
      if (g.a[i] < x.a[i]) {
        ++g.a[i];
        break;
      }
      g.a[i] = 0;
      ++i;
    }
    if (i == g.a.size()) break;
  }
  std::sort(out.begin(), out.end(), graded_lex_less);
  return out;
}

std::string mi_to_string(const MultiIndex& x) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < x.a.size(); ++i) {
    if (i) os << ",";
    os << x.a[i];
  }
  os << ")";
  return os.str();
}

namespace {

struct MiLess {
  bool operator()(const MultiIndex& x, const MultiIndex& y) const {
    return graded_lex_less(x, y);
  }
};

std::vector<LinDiffOp::Term> canonicalize(int nvars,
                                          const std::vector<LinDiffOp::Term>& raw) {
  std::map<MultiIndex, std::vector<Expr>, MiLess> groups;
  for (const auto& t : raw) {
    if (t.idx.size() != nvars + 1)
      throw std::invalid_argument("operator term arity mismatch");
    groups[t.idx].push_back(t.coeff);
  }
  std::vector<LinDiffOp::Term> out;
  for (auto& [idx, parts] : groups) {
    Expr c = parts.size() == 1 ? parts.front() : sum(parts);
    if (!c.is_zero()) out.push_back({c, idx});
  }
  return out;
}

}  // namespace

LinDiffOp::LinDiffOp(int nvars, std::vector<Term> terms)
    : nvars_(nvars), terms_(canonicalize(nvars, terms)) {}

int LinDiffOp::order() const {
  int r = -1;
  for (const auto& t : terms_) r = std::max(r, t.idx.order());
  return r;
}

Expr LinDiffOp::coeff_of(const MultiIndex& idx) const {
  for (const auto& t : terms_)
    if (t.idx == idx) return t.coeff;
  return constant(0.0);
}

std::string LinDiffOp::to_string() const {
  if (terms_.empty()) return "0";
  std::ostringstream os;
  for (size_t i = 0; i < terms_.size(); ++i) {
    if (i) os << " + ";
    os << "[" << fcm::to_string(terms_[i].coeff) << "]*D" << mi_to_string(terms_[i].idx);
  }
  return os.str();
}

LinDiffOp LinDiffOp::identity(int nvars) {
  return LinDiffOp(nvars, {{constant(1.0), MultiIndex(nvars)}});
}

LinDiffOp LinDiffOp::partial(int var, int nvars) {
  if (var < 0 || var > nvars) throw std::invalid_argument("partial: bad variable index");
  MultiIndex m(nvars);
  m.a[static_cast<size_t>(var)] = 1;
  return LinDiffOp(nvars, {{constant(1.0), m}});
}

LinDiffOp LinDiffOp::scalar(const Expr& c, int nvars) {
  return LinDiffOp(nvars, {{c, MultiIndex(nvars)}});
}

LinDiffOp op_add(const LinDiffOp& A, const LinDiffOp& B) {
  if (A.nvars() != B.nvars()) throw std::invalid_argument("operator arity mismatch");
  std::vector<LinDiffOp::Term> all = A.terms();
  all.insert(all.end(), B.terms().begin(), B.terms().end());
  return LinDiffOp(A.nvars(), all);
}

LinDiffOp op_neg(const LinDiffOp& A) {
  std::vector<LinDiffOp::Term> out;
  for (const auto& t : A.terms()) out.push_back({negate(t.coeff), t.idx});
  return LinDiffOp(A.nvars(), out);
}

LinDiffOp op_sub(const LinDiffOp& A, const LinDiffOp& B) {
  return op_add(A, op_neg(B));
}

LinDiffOp op_scale(const Expr& c, const LinDiffOp& A) {
  std::vector<LinDiffOp::Term> out;
  for (const auto& t : A.terms()) out.push_back({mul(c, t.coeff), t.idx});
  return LinDiffOp(A.nvars(), out);
}

LinDiffOp op_scale_div(const LinDiffOp& A, const Expr& c) {
  std::vector<LinDiffOp::Term> out;
  for (const auto& t : A.terms()) out.push_back({quot(t.coeff, c), t.idx});
  return LinDiffOp(A.nvars(), out);
}

Expr mi_differentiate(const Expr& e, const MultiIndex& gamma) {
  Expr r = e;
  for (size_t v = 0; v < gamma.a.size(); ++v)
    for (int k = 0; k < gamma.a[v]; ++k) r = differentiate(r, static_cast<int>(v));
  return r;
}

Expr op_apply(const LinDiffOp& A, const Expr& u) {
  std::vector<Expr> parts;
  for (const auto& t : A.terms()) parts.push_back(mul(t.coeff, mi_differentiate(u, t.idx)));
  return parts.empty() ? constant(0.0) : sum(parts);
}

LinDiffOp op_compose(const LinDiffOp& A, const LinDiffOp& B) {
  if (A.nvars() != B.nvars()) throw std::invalid_argument("operator arity mismatch");
  std::vector<LinDiffOp::Term> out;
  for (const auto& ta : A.terms()) {
    for (const auto& tb : B.terms()) {
      for (const auto& g : mi_below(ta.idx)) {
        Expr dcb = mi_differentiate(tb.coeff, g);
        if (dcb.is_zero()) continue;
        Expr c = prod({ta.coeff, constant(mi_binom(ta.idx, g)), dcb});
        out.push_back({c, mi_add(mi_sub(ta.idx, g), tb.idx)});
      }
    }
  }
  return LinDiffOp(A.nvars(), out);
}

LinDiffOp op_commutator(const LinDiffOp& A, const LinDiffOp& B) {
  return op_sub(op_compose(A, B), op_compose(B, A));
}

LinDiffOp op_adjoint(const LinDiffOp& A) {
  std::vector<LinDiffOp::Term> out;
  for (const auto& t : A.terms()) {
    double sgn = t.idx.order() % 2 == 0 ? 1.0 : -1.0;
    for (const auto& g : mi_below(t.idx)) {
      Expr dc = mi_differentiate(t.coeff, g);
      if (dc.is_zero()) continue;
      out.push_back({prod({constant(sgn * mi_binom(t.idx, g)), dc}), mi_sub(t.idx, g)});
    }
  }
  return LinDiffOp(A.nvars(), out);
}

OpMatrix::OpMatrix(int rows, int cols, int nvars)
    : rows_(rows), cols_(cols), nvars_(nvars),
      entries_(static_cast<size_t>(rows) * cols, LinDiffOp(nvars)) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("OpMatrix: bad shape");
}

LinDiffOp& OpMatrix::at(int r, int c) {
  if (r < 0 || r >= rows_ || c < 0 || c >= cols_)
    throw std::out_of_range("OpMatrix index");
  return entries_[static_cast<size_t>(r) * cols_ + c];
}

const LinDiffOp& OpMatrix::at(int r, int c) const {
  return const_cast<OpMatrix*>(this)->at(r, c);
}

int OpMatrix::order() const {
  int r = -1;
  for (const auto& e : entries_) r = std::max(r, e.order());
  return r;
}

std::vector<Expr> op_matrix_apply(const OpMatrix& M, const std::vector<Expr>& u) {
  if (static_cast<int>(u.size()) != M.cols())
    throw std::invalid_argument("op_matrix_apply: size mismatch");
  std::vector<Expr> out;
  for (int r = 0; r < M.rows(); ++r) {
    std::vector<Expr> parts;
    for (int c = 0; c < M.cols(); ++c) parts.push_back(op_apply(M.at(r, c), u[c]));
    out.push_back(sum(parts));
  }
  return out;
}

OpMatrix op_matrix_compose(const OpMatrix& A, const OpMatrix& B) {
  if (A.cols() != B.rows() || A.nvars() != B.nvars())
    throw std::invalid_argument("op_matrix_compose: shape mismatch");
  OpMatrix R(A.rows(), B.cols(), A.nvars());
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < B.cols(); ++j) {
      LinDiffOp acc(A.nvars());
      for (int k = 0; k < A.cols(); ++k)
        acc = op_add(acc, op_compose(A.at(i, k), B.at(k, j)));
      R.at(i, j) = acc;
    }
  return R;
}

}  // namespace fcm
