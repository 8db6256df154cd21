#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace qbsde {

enum class GridVariant { full, reduced, uniform };

/**
 * Non-uniform time net on [0, T].
 *
 * The first n steps are geometric in the distance to T, t_k = T(1 - (eps/T)^{k/n}),
 * so that they cover [0, T - eps] with steps shrinking towards the terminal
 * time. The remaining interval [T - eps, T] is split into equal steps: n of them
 * for the full variant, a user-chosen count for the reduced one.
 *
 * Immutable after construction. The switch time T - eps and the horizon T are
 * stored exactly (not as the result of the closed forms).
 */
class TimeGrid {
public:
    /// Full net with 2n + 1 times.
    static TimeGrid build(double T, double eps, std::size_t n);

    /// Geometric part as `build`, then ceil(n^c) equal steps on [T - eps, T].
    static TimeGrid build_reduced(double T, double eps, std::size_t n, double c);

    /// Geometric part as `build`, then exactly `tail_steps` equal steps.
    static TimeGrid build_with_tail(double T, double eps, std::size_t n, std::size_t tail_steps);

    /// Plain equidistant net with n steps (used by regularity studies).
    static TimeGrid uniform(double T, std::size_t n);

    double horizon() const { return horizon_; }
    double switch_eps() const { return eps_; }
    std::size_t n() const { return n_; }
    GridVariant variant() const { return variant_; }
    std::optional<double> tail_exponent() const { return tail_exponent_; }

    /// Exponent a with eps = T n^{-a}, when known.
    std::optional<double> decay_exponent() const { return decay_exponent_; }
    TimeGrid with_decay_exponent(double a) const;

    std::span<const double> times() const { return times_; }
    std::span<const double> steps() const { return steps_; }
    double time(std::size_t k) const { return times_[k]; }
    double step(std::size_t k) const { return steps_[k]; }
    std::size_t num_steps() const { return steps_.size(); }

    /// Index of the time T - eps (== n for the non-uniform variants).
    std::size_t switch_index() const { return switch_index_; }
    std::size_t tail_steps() const { return num_steps() - switch_index_; }

    /// One time per line, 17 significant digits.
    void dump(std::ostream& out) const;

private:
    TimeGrid() = default;

    double horizon_ = 0.0;
    double eps_ = 0.0;
    std::size_t n_ = 0;
    GridVariant variant_ = GridVariant::full;
    std::optional<double> tail_exponent_;
    std::optional<double> decay_exponent_;
    std::size_t switch_index_ = 0;
    std::vector<double> times_;
    std::vector<double> steps_;
};

/// Largest step of the net.
double max_step(const TimeGrid& grid);

/// prod_i (1 + M h_i) over every step of the net.
double lemma_product_uniform(const TimeGrid& grid, double M);

/// prod_{i < n} (1 + M1 h_i + M2 h_i / (T - t_{i+1})) over the geometric steps.
double lemma_product_singular(const TimeGrid& grid, double M1, double M2);

}  // namespace qbsde
