#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fcm/expr.hpp"

namespace fcm {

/* Tabulated scalar field on a tensor grid, wrapped as an Expression
 * primitive through field_expr().  Evaluation uses tensor-product cubic
 * (Catmull-Rom) interpolation with one-sided stencils at the edges; the
 * in-cell polynomial is differentiated analytically, so symbolic
 * derivatives of Field expressions agree with the interpolant.  Per-axis
 * derivative orders up to 3 are meaningful; the fourth derivative of a
 * cubic vanishes and differentiate() folds it to zero.
 */
struct FieldTable {
    std::vector<int> vars;                  // expression variables, one per axis
    std::vector<std::vector<double>> axes;  // strictly increasing, uniform spacing
    std::vector<double> values;             // row-major, last axis fastest
    std::uint64_t serial = 0;               // creation order; gives a stable sort key

    static std::shared_ptr<FieldTable> create(std::vector<int> vars,
                                              std::vector<std::vector<double>> axes,
                                              std::vector<double> values);

    std::size_t index(const std::vector<std::size_t>& idx) const;
    // Interpolated value of the (dord) partial derivative at `at`.
    double eval(const std::vector<int>& dord, const Point& at) const;
};

}  // namespace fcm
