#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace qbsde {

/// Nodes and weights of a one-dimensional rule.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const { return nodes.size(); }
};

/// Gauss-Hermite rule for the standard normal law: sum_j w_j f(x_j) ~ E[f(xi)],
/// xi ~ N(0,1). Weights sum to one. Computed by Golub-Welsch.
QuadratureRule gauss_hermite(std::size_t order);

/// Gauss-Legendre rule on [-1, 1].
QuadratureRule gauss_legendre(std::size_t order);

/// Three-point Gauss-Legendre rule mapped to [0, 1] (weights sum to one).
/// Used for the time integrals of the error functionals.
const QuadratureRule& unit_gauss_legendre3();

struct GradedOptions {
    std::size_t order = 10;     // Gauss-Legendre points per panel
    double ratio = 0.3;         // geometric panel ratio towards a breakpoint
    std::size_t levels = 20;    // graded panels per side of a breakpoint
    double max_panel = 1.0;     // widest panel allowed away from breakpoints
};

/// Composite Gauss-Legendre nodes on [a, b], geometrically refined towards each
/// breakpoint inside (a, b). Suited to integrands that are smooth except for
/// algebraic singularities at known points. Nodes are appended to `nodes` and
/// `weights`.
void append_graded_nodes(double a, double b, std::span<const double> breakpoints, const GradedOptions& options,
                         std::vector<double>& nodes, std::vector<double>& weights);

/// Adaptive Gauss-Kronrod (7/15) quadrature on [a, b].
double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double abs_tol = 1e-13,
                          double rel_tol = 1e-12, std::size_t max_intervals = 4096);

}  // namespace qbsde
