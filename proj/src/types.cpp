#include "qbsde/types.hpp"

#include <utility>

namespace qbsde {

Box::Box(std::vector<double> lo, std::vector<double> hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) {
        throw std::invalid_argument("Box: lower and upper bounds differ in dimension");
    }
}

Box Box::cube(std::size_t dim, double lo, double hi) {
    return Box(std::vector<double>(dim, lo), std::vector<double>(dim, hi));
}

bool Box::empty() const {
    if (lower.empty()) return true;
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (!(upper[i] > lower[i])) return true;
    }
    return false;
}

bool Box::contains(std::span<const double> x) const {
    if (x.size() != dim()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < lower[i] || x[i] > upper[i]) return false;
    }
    return true;
}

}  // namespace qbsde
