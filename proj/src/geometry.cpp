#include "fcm/geometry.hpp"

#include <random>
#include <stdexcept>

namespace fcm {

Window::Window(std::vector<double> l, std::vector<double> h)
    : lo(std::move(l)), hi(std::move(h)) {
  if (lo.size() != hi.size() || lo.empty())
    throw std::invalid_argument("Window: bad shape");
  for (size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw std::invalid_argument("Window: empty extent");
}

double Window::volume() const {
  double v = 1.0;
  for (int a = 0; a < dim(); ++a) v *= extent(a);
  return v;
}

std::vector<double> Window::center() const {
  std::vector<double> c(lo.size());
  for (size_t i = 0; i < lo.size(); ++i) c[i] = 0.5 * (lo[i] + hi[i]);
  return c;
}

bool Window::contains(const std::vector<double>& p) const {
  if (p.size() != lo.size()) return false;
  for (size_t i = 0; i < lo.size(); ++i)
    if (p[i] <= lo[i] || p[i] >= hi[i]) return false;
  return true;
}

bool Window::contains(const Window& other) const {
  if (other.dim() != dim()) return false;
  for (size_t i = 0; i < lo.size(); ++i)
    if (other.lo[i] < lo[i] - 1e-14 || other.hi[i] > hi[i] + 1e-14) return false;
  return true;
}

std::vector<std::vector<double>> grid_points(const Window& w, int per_axis) {
  if (per_axis < 1) throw std::invalid_argument("grid_points: per_axis < 1");
  int d = w.dim();
  std::vector<std::vector<double>> pts;
  std::vector<int> idx(static_cast<size_t>(d), 0);
  for (;;) {
    std::vector<double> p(static_cast<size_t>(d));
    for (int a = 0; a < d; ++a)
      p[static_cast<size_t>(a)] =
          w.lo[static_cast<size_t>(a)] + (idx[static_cast<size_t>(a)] + 0.5) * w.extent(a) / per_axis;
    pts.push_back(std::move(p));
    int a = 0;
    while (a < d && ++idx[static_cast<size_t>(a)] == per_axis) {
      idx[static_cast<size_t>(a)] = 0;
      ++a;
    }
    if (a == d) break;
  }
  return pts;
}

std::vector<std::vector<double>> random_points(const Window& w, int count,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<std::vector<double>> pts;
  for (int k = 0; k < count; ++k) {
    std::vector<double> p(static_cast<size_t>(w.dim()));
    for (int a = 0; a < w.dim(); ++a)
      p[static_cast<size_t>(a)] = w.lo[static_cast<size_t>(a)] + u(rng) * w.extent(a);
    pts.push_back(std::move(p));
  }
  return pts;
}

Window dyadic_cell(const Window& w, int depth, const std::vector<int>& cell) {
  if (depth < 0 || static_cast<int>(cell.size()) != w.dim())
    throw std::invalid_argument("dyadic_cell: bad arguments");
  int parts = 1 << depth;
  Window r = w;
  for (int a = 0; a < w.dim(); ++a) {
    auto i = static_cast<size_t>(a);
    if (cell[i] < 0 || cell[i] >= parts) throw std::invalid_argument("dyadic_cell: index");
    double h = w.extent(a) / parts;
    r.lo[i] = w.lo[i] + cell[i] * h;
    r.hi[i] = r.lo[i] + h;
  }
  return r;
}

}  // namespace fcm
