#pragma once

#include "qbsde/problem.hpp"
#include "qbsde/types.hpp"

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qbsde {

/// Reference pair (Y(t, x), Z(t, x)) of a BSDE in Markovian form.
struct ReferenceSolution {
    using YFn = std::function<double(double, std::span<const double>)>;
    using ZFn = std::function<void(double, std::span<const double>, std::span<double>)>;

    YFn y;
    ZFn z;  // empty when no reference Z is available
    std::size_t dim = 1;
    double T = 1.0;
    std::optional<Box> validity;
    std::string method;  // "closed-form" or "quadrature"

    bool has_z() const { return static_cast<bool>(z); }
};

/// Quadrature controls for Gaussian smoothing of a terminal condition.
struct SmoothingOptions {
    std::size_t quad_order = 48;   // Gauss-Hermite order for smooth g
    double reach = 9.0;            // graded rule: integrate over x +- reach * sd
    std::size_t panel_order = 8;   // graded rule: Gauss-Legendre points per panel
    std::size_t levels = 14;       // graded rule: panels per side of a breakpoint
};

/**
 * Exact solution of Y_t = g(X_T) + int_t^T (gamma/2)|Z_s|^2 ds - int_t^T Z_s dW_s
 * with X = x + sigma W in dimension one:
 *   Y(t, x) = (1/gamma) log E[exp(gamma g(x + sigma W_{T-t}))],
 *   Z(t, x) = sigma d/dx Y(t, x).
 * The expectation is a Gauss-Hermite sum when g declares no breakpoints and a
 * composite rule graded towards the breakpoints otherwise; sums are formed in
 * log-sum-exp form. Z uses the Gaussian score identity
 *   d/dx E[F(x + s xi)] = E[F(x + s xi) xi] / s
 * on the same nodes, so it is as accurate as Y.
 */
ReferenceSolution cole_hopf_reference(double gamma, const TerminalCondition& g, double sigma, double T,
                                      std::size_t quad_order = 48);
ReferenceSolution cole_hopf_reference(double gamma, const TerminalCondition& g, double sigma, double T,
                                      const SmoothingOptions& options);

/// f = 0 heat-kernel case: Y = E[g(x + sigma W_{T-t})], Z = sigma d/dx Y.
ReferenceSolution linear_reference(const TerminalCondition& g, double sigma, double T, std::size_t quad_order = 48);
ReferenceSolution linear_reference(const TerminalCondition& g, double sigma, double T,
                                   const SmoothingOptions& options);

// ---------------------------------------------------------------------------
// Blow-up example: T = 2, b = 0, sigma(t) = (1 - t) 1_{t < 1}, f = 0,
// g(x) = arctan(x / |x|^{3/4}) (odd extension, g(0) = 0).
// ---------------------------------------------------------------------------

double zhang_terminal(double x);
/// sigma_t^2 = int_t^1 (1 - s)^2 ds = (1 - t)^3 / 3.
double zhang_variance(double t);
/// u(t, x) = E[g(x + sigma_t xi)] for t < 1 and g(x) afterwards.
double zhang_value(double t, double x);
/// Z-component d/dx u(t, 0) sigma(t) for t < 1.
double zhang_gradient(double t);

// ---------------------------------------------------------------------------
// Two-dimensional example with bounded Z:
// b(t, x) = (0, h(t) x^1), sigma = diag(1, 0), f = 0, g(x) = g~(x^2), T = 2.
// ---------------------------------------------------------------------------

struct BoundedZ2d {
    std::function<double(double)> h;        // continuous, >= 0, zero on [1, 2]
    std::function<double(double)> g_tilde;  // bounded
    std::vector<double> g_breakpoints;      // non-smooth points of g~
    double g_sup = 1.0;                     // sup |g~|
    /// Optional closed forms of a_t = H(1) - H(t) and int_t^1 a_s^2 ds;
    /// adaptive quadrature of h is used otherwise.
    std::function<double(double)> a;
    std::function<double(double)> a_square_integral;
};

/// The example of the note: h(s) = (1 - s) 1_{s < 1}, g~(x) = arctan(x / |x|^{1/2}).
BoundedZ2d bounded_z_2d_default();

/// a_t = H(1) - H(t).
double bounded_z_2d_a(const BoundedZ2d& ex, double t);
/// Variance of the Gaussian representation, a_t^2 t + int_t^1 a_s^2 ds.
double bounded_z_2d_variance(const BoundedZ2d& ex, double t);
/// (du/dx^1, du/dx^2) at (t, x), t < 1.
std::array<double, 2> bounded_z_2d(double t, std::span<const double> x, const BoundedZ2d& ex);

/// SDE of the two-dimensional example.
SdeModel bounded_z_2d_model(const BoundedZ2d& ex, std::vector<double> x0 = {0.0, 0.0});

/// Writes "t,<value_name>" rows with 17 significant digits.
void write_curve_csv(std::ostream& out, const std::string& value_name, std::span<const double> t,
                     std::span<const double> values);

}  // namespace qbsde
