#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace fcm {

// Square banded matrix with kl sub- and ku super-diagonals, stored
// column-major in LAPACK band layout with kl extra rows for the LU fill-in:
// entry (i, j) lives at band(kl + ku + i - j, j).
class BandedMatrix {
 public:
  BandedMatrix(int n, int kl, int ku);

  int n() const { return n_; }
  int kl() const { return kl_; }
  int ku() const { return ku_; }

  double& at(int i, int j);
  double at(int i, int j) const;
  bool in_band(int i, int j) const;

  std::vector<double> apply(const std::vector<double>& x) const;
  std::vector<double> apply_transpose(const std::vector<double>& x) const;

 private:
  int n_, kl_, ku_;
  std::vector<double> a_;
  friend class BandedLU;
};

// LU factorization with partial pivoting of a banded matrix. Solves both
// A x = b and A^T x = b from the same factorization.
class BandedLU {
 public:
  explicit BandedLU(const BandedMatrix& m);

  std::vector<double> solve(std::vector<double> b) const;
  std::vector<double> solve_transpose(std::vector<double> b) const;

 private:
  int n_, kl_, ku_;
  std::vector<double> a_;    // band storage after factorization
  std::vector<int> piv_;
  double& lu(int i, int j) { return a_[static_cast<size_t>(j) * stride() + static_cast<size_t>(i)]; }
  double lu(int i, int j) const { return a_[static_cast<size_t>(j) * stride() + static_cast<size_t>(i)]; }
  int stride() const { return 2 * kl_ + ku_ + 1; }
};

// Dense LU solve for small systems.
std::vector<double> dense_solve(std::vector<std::vector<double>> a,
                                std::vector<double> b);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& a);
void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y);

struct CGResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> objectives;  // 1/2 x'Ax - b'x per accepted iterate
};

// Conjugate gradients on a symmetric positive definite operator given as a
// callback. Stops at relative residual `tol` or `max_iter`.
template <typename ApplyFn>
CGResult conjugate_gradient(const ApplyFn& apply, const std::vector<double>& b,
                            double tol, int max_iter);

// Eigenvalues of a symmetric tridiagonal matrix (diag, off) inside
// [lo, hi], found by Sturm-sequence bisection to near machine precision.
std::vector<double> tridiag_eigenvalues(const std::vector<double>& diag,
                                        const std::vector<double>& off,
                                        double lo, double hi);

// Unit eigenvector for an isolated tridiagonal eigenvalue via inverse
// iteration with a seeded random start.
std::vector<double> tridiag_eigenvector(const std::vector<double>& diag,
                                        const std::vector<double>& off,
                                        double lambda, std::uint64_t seed);

template <typename ApplyFn>
CGResult conjugate_gradient(const ApplyFn& apply, const std::vector<double>& b,
                            double tol, int max_iter) {
  size_t n = b.size();
  CGResult out;
  out.x.assign(n, 0.0);
  std::vector<double> r = b, p = b, ap(n);
  double rr = dot(r, r);
  double b0 = norm2(b);
  if (b0 == 0.0) return out;
  double objective = 0.0;
  for (int k = 0; k < max_iter; ++k) {
    ap = apply(p);
    double pap = dot(p, ap);
    if (pap <= 0.0) break;
    double alpha = rr / pap;
    axpy(alpha, p, out.x);
    axpy(-alpha, ap, r);
    objective -= 0.5 * alpha * rr;
    out.objectives.push_back(objective);
    double rr_next = dot(r, r);
    ++out.iterations;
    if (std::sqrt(rr_next) / b0 <= tol) {
      rr = rr_next;
      break;
    }
    double beta = rr_next / rr;
    rr = rr_next;
    for (size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  out.residual = norm2(r) / b0;
  return out;
}

}  // namespace fcm
