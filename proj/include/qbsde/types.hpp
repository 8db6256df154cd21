#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qbsde {

/// Axis-aligned box in R^d, used for test domains, regression supports and
/// mollifier search grids.
struct Box {
    std::vector<double> lower;
    std::vector<double> upper;

    Box() = default;
    Box(std::vector<double> lo, std::vector<double> hi);

    static Box cube(std::size_t dim, double lo, double hi);
    static Box interval(double lo, double hi) { return cube(1, lo, hi); }

    std::size_t dim() const { return lower.size(); }
    bool empty() const;
    double width(std::size_t axis) const { return upper[axis] - lower[axis]; }
    bool contains(std::span<const double> x) const;
};

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double c : v) s += c * c;
    return s;
}

}  // namespace qbsde
