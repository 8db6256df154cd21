#pragma once

#include "qbsde/types.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qbsde {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Forward SDE  dX = b(t, X) dt + sigma(t) dW
// ---------------------------------------------------------------------------

/// drift(t, x, out): writes b(t, x) into `out` (size d).
using DriftFn = std::function<void(double, std::span<const double>, std::span<double>)>;
/// State-independent diffusion matrix sigma(t), d x d.
using DiffusionFn = std::function<Eigen::MatrixXd(double)>;

struct SdeConstants {
    double M_b = 0.0;      // |b(t,x)| <= M_b (1 + |x|)
    double K_b = 0.0;      // Lipschitz constant of b
    double M_sigma = 0.0;  // |sigma(t)| <= M_sigma (operator norm)
    double K_sigma = 0.0;  // Lipschitz constant of sigma in t
    std::optional<double> M_sigma_inv;  // |sigma(t)^{-1}| bound when sigma is invertible
    bool b_bounded = false;             // b bounded by M_b
};

struct SdeModel {
    std::size_t dim = 1;
    DriftFn drift;
    DiffusionFn diffusion;
    std::vector<double> x0;
    SdeConstants constants;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Driver f(t, x, y, z), quadratic in z
// ---------------------------------------------------------------------------

using DriverFn = std::function<double(double, std::span<const double>, double, std::span<const double>)>;

struct DriverConstants {
    double M_f = 0.0;   // |f| <= M_f (1 + |y| + |z|^2)
    double K_fx = 0.0;
    double K_fy = 0.0;
    double K_fz = 0.0;
    double L_fz = 0.0;  // local Lipschitz in z: K_fz + L_fz (|z| + |z'|)
    std::optional<double> K_ft;
    std::optional<double> beta;  // sub-quadratic growth exponent in (0, 1)
};

struct QuadraticDriver {
    DriverFn f;
    DriverConstants constants;
    bool depends_on_z = true;

    double operator()(double t, std::span<const double> x, double y, std::span<const double> z) const {
        return f(t, x, y, z);
    }
};

// ---------------------------------------------------------------------------
// Terminal condition g(x)
// ---------------------------------------------------------------------------

using TerminalFn = std::function<double(std::span<const double>)>;

enum class Regularity { lipschitz, holder, semicontinuous };

struct TerminalCondition {
    TerminalFn g;
    double M_g = 0.0;
    Regularity regularity = Regularity::lipschitz;
    double K_g = 0.0;     // Lipschitz (or Hölder) constant
    double alpha = 1.0;   // Hölder exponent when regularity == holder
    /// Points where a one-dimensional g fails to be smooth (kinks, jumps).
    /// Quadrature-based references refine towards them.
    std::vector<double> breakpoints;

    double operator()(std::span<const double> x) const { return g(x); }
};

// ---------------------------------------------------------------------------
// Scheme-level constants
// ---------------------------------------------------------------------------

/// Constants of |Z_s| <= (M_z1 + M_z2 / sqrt(T - s)) ^ (M_z3 (N + 1)).
struct ZBoundParams {
    double M_z1 = kInfinity;
    double M_z2 = 0.0;
    double M_z3 = kInfinity;

    void validate() const;
};

/// Exponents and rate produced by the global error balance.
struct ParameterSelection {
    double a = 0.0;
    double b = 0.0;
    double K = 0.0;
    double rate = 0.0;  // theoretical exponent of n in the global error bound
};

struct SchemeParams {
    std::size_t n = 0;
    double a = 0.0;
    double b = 0.0;
    double N = 1.0;    // Lipschitz constant of the mollified terminal condition, n^b
    double eps = 0.0;  // length of the terminal interval, T n^{-a}
    double K = 0.0;
    double eta = 0.0;
    double rate = 0.0;

    static SchemeParams from_selection(double T, std::size_t n, const ParameterSelection& selection, double eta = 0.0);
    void validate(double T) const;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// f^eps(s, x, y, z) = f(s, x, y, z) for s <= T - eps, f(s, x, y, 0) afterwards.
/// The result keeps the declared constants of `driver`.
QuadraticDriver truncate_driver(const QuadraticDriver& driver, double T, double eps);

/// Radius of the Z-projection ball at time s; +inf at s = T.
double projection_radius(double s, double T, const ZBoundParams& zp);

/// Euclidean projection onto the closed ball of the given radius.
std::vector<double> project_z(std::span<const double> z, double radius);
/// In-place variant; returns true when the projection moved z.
bool project_z_inplace(std::span<double> z, double radius);

/**
 * Inf-convolution g_N(x) = inf_u { g(u) + N |x - u| } with u restricted to a
 * dense grid of the search box. The envelope is exact for the gridded u: in one
 * dimension it is evaluated in O(1) per point from forward/backward distance
 * sweeps; in higher dimension by direct minimization.
 *
 * When g is declared K_g-Lipschitz with K_g <= N the envelope equals g and the
 * object simply forwards to g.
 */
class MollifiedTerminal {
public:
    struct Evaluation {
        double value = 0.0;
        bool minimizer_on_boundary = false;
    };

    MollifiedTerminal(const TerminalCondition& term, double N, const Box& domain, std::size_t resolution);

    double operator()(std::span<const double> x) const { return evaluate(x).value; }
    Evaluation evaluate(std::span<const double> x) const;

    double lipschitz_constant() const { return N_; }
    bool is_identity() const { return identity_; }
    const Box& domain() const { return domain_; }
    std::size_t resolution() const { return resolution_; }

    /// Lower-envelope values at the search grid nodes (1-D only; empty otherwise).
    std::span<const double> node_values() const { return envelope_; }
    std::span<const double> node_positions() const { return nodes_; }

private:
    Evaluation evaluate_1d(double x) const;
    Evaluation evaluate_nd(std::span<const double> x) const;

    TerminalFn g_;
    double N_;
    Box domain_;
    std::size_t resolution_;
    bool identity_ = false;
    std::vector<double> nodes_;        // 1-D grid positions
    std::vector<double> g_values_;     // g at grid nodes (all dimensions, row-major)
    std::vector<double> forward_;      // min_{i<=j} g_i + N (u_j - u_i)
    std::vector<double> backward_;     // min_{i>=j} g_i + N (u_i - u_j)
    std::vector<double> envelope_;     // min of both
    std::vector<std::size_t> forward_arg_, backward_arg_;
};

MollifiedTerminal mollify_terminal(const TerminalCondition& term, double N, const Box& domain, std::size_t resolution);

/// Search-grid resolution such that the gridding of u contributes less than
/// `fraction` of the sup-error C N^{-alpha/(1-alpha)} of a Hölder g.
std::size_t suggested_mollifier_resolution(const TerminalCondition& term, double N, const Box& domain,
                                           double fraction = 0.1, std::size_t max_resolution = 400001);

/// e^{(2 K_b + K_fy) T} M_sigma (K_g + T K_fx).
double uniform_z_bound(const SdeModel& model, const QuadraticDriver& driver, double K_g, double T);

/// K = 4 (1 + eta) L_fz^2 M_z2^2, then the exponents of the global error balance.
ParameterSelection select_scheme_parameters(double alpha, double L_fz, double M_z2, double eta);
/// Same with K given directly (K = 0 is the sub-quadratic / bounded-drift limit).
ParameterSelection select_scheme_parameters_for_K(double alpha, double K);

/// Tail exponent c = 1 - a - 2b of the reduced net; may be <= 0 (no tail needed).
double reduced_tail_exponent(const ParameterSelection& selection);

/// A priori bound e^{K_fy T}(M_g + T M_f) on |Y|.
double a_priori_y_bound(const QuadraticDriver& driver, const TerminalCondition& term, double T);

// ---------------------------------------------------------------------------
// Sampled checks of the declared constants
// ---------------------------------------------------------------------------

struct ConstantCheck {
    std::string name;
    bool holds = true;
    std::size_t samples = 0;
    std::size_t violations = 0;
    double worst_ratio = 0.0;  // max observed lhs / rhs
};

std::vector<ConstantCheck> check_sde_constants(const SdeModel& model, double T, const Box& box, std::size_t samples,
                                               std::uint64_t seed);

std::vector<ConstantCheck> check_driver_constants(const QuadraticDriver& driver, double T, const Box& x_box,
                                                  double y_max, double z_max, std::size_t z_dim,
                                                  std::size_t samples, std::uint64_t seed);

ConstantCheck check_terminal_bound(const TerminalCondition& term, const Box& box, std::size_t samples,
                                   std::uint64_t seed);

}  // namespace qbsde
