#pragma once

#include <cstdint>
#include <vector>

namespace fcm {

// Axis-aligned open box. Used both for spatial domains (x1..xN) and for
// space-time windows (t, x1..xN).
struct Window {
  std::vector<double> lo, hi;

  Window() = default;
  Window(std::vector<double> l, std::vector<double> h);

  int dim() const { return static_cast<int>(lo.size()); }
  double extent(int axis) const { return hi[static_cast<size_t>(axis)] - lo[static_cast<size_t>(axis)]; }
  double volume() const;
  std::vector<double> center() const;
  bool contains(const std::vector<double>& p) const;
  bool contains(const Window& other) const;
};

using Box = Window;

// Tensor grid of cell centers, per_axis points per axis.
std::vector<std::vector<double>> grid_points(const Window& w, int per_axis);

// Deterministic uniform sample points inside the box.
std::vector<std::vector<double>> random_points(const Window& w, int count,
                                               std::uint64_t seed);

// The dyadic sub-box of w with per-axis cell index `cell` at refinement
// `depth` (each axis split into 2^depth equal parts).
Window dyadic_cell(const Window& w, int depth, const std::vector<int>& cell);

}  // namespace fcm
