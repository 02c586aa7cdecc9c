#include "fcm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace fcm {

BandedMatrix::BandedMatrix(int n, int kl, int ku) : n_(n), kl_(kl), ku_(ku) {
  if (n < 1 || kl < 0 || ku < 0) throw std::invalid_argument("BandedMatrix: bad shape");
  a_.assign(static_cast<size_t>(n) * static_cast<size_t>(2 * kl + ku + 1), 0.0);
}

bool BandedMatrix::in_band(int i, int j) const {
  return i >= 0 && j >= 0 && i < n_ && j < n_ && j - i <= ku_ && i - j <= kl_;
}

double& BandedMatrix::at(int i, int j) {
  if (!in_band(i, j)) throw std::out_of_range("BandedMatrix::at outside band");
  return a_[static_cast<size_t>(j) * static_cast<size_t>(2 * kl_ + ku_ + 1) +
             static_cast<size_t>(kl_ + ku_ + i - j)];
}

double BandedMatrix::at(int i, int j) const {
  if (!in_band(i, j)) return 0.0;
  return a_[static_cast<size_t>(j) * static_cast<size_t>(2 * kl_ + ku_ + 1) +
             static_cast<size_t>(kl_ + ku_ + i - j)];
}

std::vector<double> BandedMatrix::apply(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != n_) throw std::invalid_argument("apply: size mismatch");
  std::vector<double> y(static_cast<size_t>(n_), 0.0);
  for (int j = 0; j < n_; ++j) {
    int ilo = std::max(0, j - ku_), ihi = std::min(n_ - 1, j + kl_);
    for (int i = ilo; i <= ihi; ++i) y[static_cast<size_t>(i)] += at(i, j) * x[static_cast<size_t>(j)];
  }
  return y;
}

std::vector<double> BandedMatrix::apply_transpose(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != n_) throw std::invalid_argument("apply_transpose: size mismatch");
  std::vector<double> y(static_cast<size_t>(n_), 0.0);
  for (int j = 0; j < n_; ++j) {
    int ilo = std::max(0, j - ku_), ihi = std::min(n_ - 1, j + kl_);
    for (int i = ilo; i <= ihi; ++i) y[static_cast<size_t>(j)] += at(i, j) * x[static_cast<size_t>(i)];
  }
  return y;
}

BandedLU::BandedLU(const BandedMatrix& m)
    : n_(m.n()), kl_(m.kl()), ku_(m.ku()),
      piv_(static_cast<size_t>(m.n())) {
  // Work band has kl extra super-diagonals for pivoting fill-in; row i of
  // column j sits at offset kl + ku_work + i - j with ku_work = kl + ku.
  int kuw = kl_ + ku_;
  a_.assign(static_cast<size_t>(n_) * static_cast<size_t>(stride()), 0.0);
  for (int j = 0; j < n_; ++j) {
    int ilo = std::max(0, j - ku_), ihi = std::min(n_ - 1, j + kl_);
    for (int i = ilo; i <= ihi; ++i) lu(kl_ + kuw + i - j, j) = m.at(i, j);
  }

  for (int k = 0; k < n_; ++k) {
    int pmax = std::min(n_ - 1, k + kl_);
    int pivot = k;
    double best = std::abs(lu(kl_ + kuw, k));
    for (int i = k + 1; i <= pmax; ++i) {
      double v = std::abs(lu(kl_ + kuw + i - k, k));
      if (v > best) {
        best = v;
        pivot = i;
      }
    }
    piv_[static_cast<size_t>(k)] = pivot;
    if (best == 0.0) throw std::runtime_error("BandedLU: singular matrix");
    int jmax = std::min(n_ - 1, k + kuw);
    if (pivot != k) {
      for (int j = k; j <= jmax; ++j)
        std::swap(lu(kl_ + kuw + k - j, j), lu(kl_ + kuw + pivot - j, j));
    }
    double diag = lu(kl_ + kuw, k);
    for (int i = k + 1; i <= pmax; ++i) {
      double mult = lu(kl_ + kuw + i - k, k) / diag;
      lu(kl_ + kuw + i - k, k) = mult;
      for (int j = k + 1; j <= jmax; ++j)
        lu(kl_ + kuw + i - j, j) -= mult * lu(kl_ + kuw + k - j, j);
    }
  }
}

std::vector<double> BandedLU::solve(std::vector<double> b) const {
  if (static_cast<int>(b.size()) != n_) throw std::invalid_argument("solve: size mismatch");
  int kuw = kl_ + ku_;
  for (int k = 0; k < n_; ++k) {
    int p = piv_[static_cast<size_t>(k)];
    if (p != k) std::swap(b[static_cast<size_t>(k)], b[static_cast<size_t>(p)]);
    int imax = std::min(n_ - 1, k + kl_);
    for (int i = k + 1; i <= imax; ++i)
      b[static_cast<size_t>(i)] -= lu(kl_ + kuw + i - k, k) * b[static_cast<size_t>(k)];
  }
  for (int k = n_ - 1; k >= 0; --k) {
    b[static_cast<size_t>(k)] /= lu(kl_ + kuw, k);
    int imin = std::max(0, k - kuw);
    for (int i = imin; i < k; ++i)
      b[static_cast<size_t>(i)] -= lu(kl_ + kuw + i - k, k) * b[static_cast<size_t>(k)];
  }
  return b;
}

std::vector<double> BandedLU::solve_transpose(std::vector<double> b) const {
  if (static_cast<int>(b.size()) != n_) throw std::invalid_argument("solve_transpose: size mismatch");
  // A = P^T L U, so A^T x = b is solved as U^T z = b, L^T v = z, x = P^T v.
  int kuw = kl_ + ku_;
  for (int k = 0; k < n_; ++k) {
    int imin = std::max(0, k - kuw);
    double s = b[static_cast<size_t>(k)];
    for (int i = imin; i < k; ++i)
      s -= lu(kl_ + kuw + i - k, k) * b[static_cast<size_t>(i)];
    b[static_cast<size_t>(k)] = s / lu(kl_ + kuw, k);
  }
  for (int k = n_ - 1; k >= 0; --k) {
    int imax = std::min(n_ - 1, k + kl_);
    double s = b[static_cast<size_t>(k)];
    for (int i = k + 1; i <= imax; ++i)
      s -= lu(kl_ + kuw + i - k, k) * b[static_cast<size_t>(i)];
    b[static_cast<size_t>(k)] = s;
    int p = piv_[static_cast<size_t>(k)];
    if (p != k) std::swap(b[static_cast<size_t>(k)], b[static_cast<size_t>(p)]);
  }
  return b;
}

std::vector<double> dense_solve(std::vector<std::vector<double>> a,
                                std::vector<double> b) {
  size_t n = b.size();
  if (a.size() != n) throw std::invalid_argument("dense_solve: size mismatch");
  for (size_t k = 0; k < n; ++k) {
    size_t pivot = k;
    for (size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[pivot][k])) pivot = i;
    if (a[pivot][k] == 0.0) throw std::runtime_error("dense_solve: singular matrix");
    std::swap(a[k], a[pivot]);
    std::swap(b[k], b[pivot]);
    for (size_t i = k + 1; i < n; ++i) {
      double m = a[i][k] / a[k][k];
      for (size_t j = k; j < n; ++j) a[i][j] -= m * a[k][j];
      b[i] -= m * b[k];
    }
  }
  for (size_t k = n; k-- > 0;) {
    double s = b[k];
    for (size_t j = k + 1; j < n; ++j) s -= a[k][j] * b[j];
    b[k] = s / a[k][k];
  }
  return b;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

namespace {

// Number of eigenvalues of the tridiagonal matrix strictly below x.
int sturm_count(const std::vector<double>& diag, const std::vector<double>& off,
                double x) {
  int count = 0;
  double q = 1.0;
  size_t n = diag.size();
  const double tiny = 1e-300;
  for (size_t i = 0; i < n; ++i) {
    double b2 = i == 0 ? 0.0 : off[i - 1] * off[i - 1];
    q = diag[i] - x - b2 / q;
    if (q == 0.0) q = tiny;
    if (q < 0.0) ++count;
  }
  return count;
}

}  // namespace

std::vector<double> tridiag_eigenvalues(const std::vector<double>& diag,
                                        const std::vector<double>& off,
                                        double lo, double hi) {
  if (off.size() + 1 != diag.size()) throw std::invalid_argument("tridiag: size mismatch");
  if (!(lo < hi)) throw std::invalid_argument("tridiag: empty interval");
  int below_lo = sturm_count(diag, off, lo);
  int below_hi = sturm_count(diag, off, hi);
  std::vector<double> out;
  for (int k = below_lo; k < below_hi; ++k) {
    double a = lo, b = hi;
    // Bisect until the k-th eigenvalue (0-based global index) is pinned.
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a) + std::abs(b)); ++it) {
      double mid = 0.5 * (a + b);
      if (sturm_count(diag, off, mid) <= k)
        a = mid;
      else
        b = mid;
    }
    out.push_back(0.5 * (a + b));
  }
  return out;
}

std::vector<double> tridiag_eigenvector(const std::vector<double>& diag,
                                        const std::vector<double>& off,
                                        double lambda, std::uint64_t seed) {
  size_t n = diag.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  double nv = norm2(v);
  for (auto& x : v) x /= nv;

  BandedMatrix m(static_cast<int>(n), 1, 1);
  double scale = 0.0;
  for (double d : diag) scale = std::max(scale, std::abs(d));
  double shift = lambda + 1e-12 * std::max(1.0, scale);
  for (size_t i = 0; i < n; ++i) {
    m.at(static_cast<int>(i), static_cast<int>(i)) = diag[i] - shift;
    if (i + 1 < n) {
      m.at(static_cast<int>(i), static_cast<int>(i + 1)) = off[i];
      m.at(static_cast<int>(i + 1), static_cast<int>(i)) = off[i];
    }
  }
  BandedLU lu(m);
  for (int it = 0; it < 50; ++it) {
    auto w = lu.solve(v);
    double nw = norm2(w);
    for (auto& x : w) x /= nw;
    double diff = 0.0;
    for (size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(std::abs(w[i]) - std::abs(v[i])));
    v = std::move(w);
    if (diff < 1e-14) break;
  }
  // Fix the sign so the first sizable entry is positive.
  for (double x : v) {
    if (std::abs(x) > 1e-8) {
      if (x < 0.0)
        for (auto& y : v) y = -y;
      break;
    }
  }
  return v;
}

}  // namespace fcm
