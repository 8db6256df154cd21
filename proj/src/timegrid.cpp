#include "qbsde/timegrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace qbsde {
namespace {

void check_common(double T, double eps, std::size_t n) {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("TimeGrid: horizon T must be positive and finite");
    if (!(eps > 0.0)) throw std::invalid_argument("TimeGrid: eps must be positive");
    if (!(eps < T)) throw std::invalid_argument("TimeGrid: eps must be smaller than T");
    if (n == 0) throw std::invalid_argument("TimeGrid: n must be at least 1");
}

std::vector<double> geometric_part(double T, double eps, std::size_t n) {
    std::vector<double> times(n + 1);
    const double ratio = eps / T;
    const double dn = static_cast<double>(n);
    for (std::size_t k = 0; k <= n; ++k) {
        times[k] = T * (1.0 - std::pow(ratio, static_cast<double>(k) / dn));
    }
    times[0] = 0.0;
    times[n] = T - eps;
    return times;
}

}  // namespace

TimeGrid TimeGrid::build_with_tail(double T, double eps, std::size_t n, std::size_t tail_steps) {
    check_common(T, eps, n);
    if (tail_steps == 0) throw std::invalid_argument("TimeGrid: the tail needs at least one step");
    TimeGrid grid;
    grid.horizon_ = T;
    grid.eps_ = eps;
    grid.n_ = n;
    grid.switch_index_ = n;
    grid.times_ = geometric_part(T, eps, n);
    const double m = static_cast<double>(tail_steps);
    for (std::size_t j = 1; j <= tail_steps; ++j) {
        grid.times_.push_back(T - (static_cast<double>(tail_steps - j) / m) * eps);
    }
    grid.times_.back() = T;
    grid.steps_.resize(grid.times_.size() - 1);
    for (std::size_t k = 0; k + 1 < grid.times_.size(); ++k) {
        grid.steps_[k] = grid.times_[k + 1] - grid.times_[k];
        if (!(grid.steps_[k] > 0.0)) {
            throw std::invalid_argument("TimeGrid: parameters produce non-increasing times (n too large for eps/T)");
        }
    }
    grid.variant_ = tail_steps == n ? GridVariant::full : GridVariant::reduced;
    return grid;
}

TimeGrid TimeGrid::build(double T, double eps, std::size_t n) { return build_with_tail(T, eps, n, n); }

TimeGrid TimeGrid::build_reduced(double T, double eps, std::size_t n, double c) {
    if (!(c > 0.0) || c > 1.0) throw std::invalid_argument("TimeGrid: reduced exponent c must lie in (0, 1]");
    check_common(T, eps, n);
    const auto tail = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), c) - 1e-12));
    TimeGrid grid = build_with_tail(T, eps, n, std::max<std::size_t>(tail, 1));
    grid.variant_ = GridVariant::reduced;
    grid.tail_exponent_ = c;
    return grid;
}

TimeGrid TimeGrid::uniform(double T, std::size_t n) {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("TimeGrid: horizon T must be positive and finite");
    if (n == 0) throw std::invalid_argument("TimeGrid: n must be at least 1");
    TimeGrid grid;
    grid.horizon_ = T;
    grid.n_ = n;
    grid.variant_ = GridVariant::uniform;
    grid.eps_ = T / static_cast<double>(n);
    grid.switch_index_ = n - 1;
    grid.times_.resize(n + 1);
    for (std::size_t k = 0; k <= n; ++k) grid.times_[k] = T * static_cast<double>(k) / static_cast<double>(n);
    grid.times_.back() = T;
    grid.steps_.resize(n);
    for (std::size_t k = 0; k < n; ++k) grid.steps_[k] = grid.times_[k + 1] - grid.times_[k];
    return grid;
}

TimeGrid TimeGrid::with_decay_exponent(double a) const {
    TimeGrid copy = *this;
    copy.decay_exponent_ = a;
    return copy;
}

void TimeGrid::dump(std::ostream& out) const {
    char buffer[64];
    for (double t : times_) {
        std::snprintf(buffer, sizeof(buffer), "%.17g\n", t);
        out << buffer;
    }
}

double max_step(const TimeGrid& grid) {
    const auto steps = grid.steps();
    return *std::max_element(steps.begin(), steps.end());
}

double lemma_product_uniform(const TimeGrid& grid, double M) {
    if (M < 0.0) throw std::invalid_argument("lemma_product_uniform: M must be nonnegative");
    double log_sum = 0.0;
    for (double h : grid.steps()) log_sum += std::log1p(M * h);
    return std::exp(log_sum);
}

double lemma_product_singular(const TimeGrid& grid, double M1, double M2) {
    if (M1 < 0.0 || M2 < 0.0) throw std::invalid_argument("lemma_product_singular: constants must be nonnegative");
    if (grid.variant() == GridVariant::uniform) {
        throw std::invalid_argument("lemma_product_singular: needs a grid with a geometric part");
    }
    const double T = grid.horizon();
    double log_sum = 0.0;
    for (std::size_t i = 0; i < grid.switch_index(); ++i) {
        const double h = grid.step(i);
        log_sum += std::log1p(M1 * h + M2 * h / (T - grid.time(i + 1)));
    }
    return std::exp(log_sum);
}

}  // namespace qbsde
