#pragma once

#include "qbsde/condexp.hpp"
#include "qbsde/oracles.hpp"
#include "qbsde/problem.hpp"
#include "qbsde/rng.hpp"
#include "qbsde/timegrid.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qbsde {

// ---------------------------------------------------------------------------
// Forward simulation
// ---------------------------------------------------------------------------

/// Euler paths and their Brownian increments, stored step-major so that the
/// sample of X_{t_k} is a contiguous paths x d block.
class PathEnsemble {
public:
    PathEnsemble(TimeGrid grid, std::size_t paths, std::size_t dim, std::uint64_t seed);

    const TimeGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t dim() const { return dim_; }
    std::size_t num_steps() const { return grid_.num_steps(); }
    std::uint64_t seed() const { return seed_; }

    std::span<double> state(std::size_t k, std::size_t path);
    std::span<const double> state(std::size_t k, std::size_t path) const;
    std::span<double> increment(std::size_t k, std::size_t path);
    std::span<const double> increment(std::size_t k, std::size_t path) const;

    /// X_{t_k} for every path (paths x d).
    Eigen::Map<const SampleMatrix> states_at(std::size_t k) const;
    /// W_{t_{k+1}} - W_{t_k} for every path (paths x d).
    Eigen::Map<const SampleMatrix> increments_at(std::size_t k) const;

private:
    TimeGrid grid_;
    std::size_t paths_;
    std::size_t dim_;
    std::uint64_t seed_;
    std::vector<double> states_;
    std::vector<double> increments_;
};

/// X_{k+1} = X_k + h_k b(t_k, X_k) + sigma(t_k) dW_k with increments drawn
/// from the counter-based stream (seed, path, step).
PathEnsemble simulate_euler(const SdeModel& model, const TimeGrid& grid, std::size_t paths, std::uint64_t seed);

/// Single Euler path with the same increments `simulate_euler` would draw
/// for `path`; states and increments are written step-major.
void simulate_euler_path(const SdeModel& model, const TimeGrid& grid, const CounterRng& rng, std::size_t path,
                         std::span<double> states, std::span<double> increments);

/**
 * sup_k mean |X^euler_{t_k} - X_{t_k}|^2 for dX = -theta X dt + sigma dW, X_0 = x0,
 * where X is the exact Ornstein-Uhlenbeck chain driven by the same increments:
 * the stochastic integral over a step is its regression on dW_k plus an
 * independent Gaussian residual drawn from Stream::exact_transition.
 */
double ou_strong_error(double theta, double sigma, double x0, const TimeGrid& grid, std::size_t paths,
                       std::uint64_t seed);

/**
 * States at t_k + theta_j h_k for the three Gauss-Legendre nodes theta_j of
 * [0, 1], sampled from the Brownian bridge of dW_k (sequentially, stream
 * Stream::bridge, step index 3k + j):
 *   X = x_k + theta h b(t_k, x_k) + sigma(t_k) W_theta.
 * `out` is 3 x d, row-major.
 */
void bridge_states(const SdeModel& model, const Eigen::MatrixXd& sigma_k, double t_k, double h,
                   std::span<const double> x_k, std::span<const double> dw_k, const CounterRng& rng,
                   std::size_t path, std::size_t k, std::span<double> out);

// ---------------------------------------------------------------------------
// Discrete solution
// ---------------------------------------------------------------------------

/// Fitted (Y, Z~) at one time step; Z~ is the raw, unprojected estimate.
class StepField {
public:
    virtual ~StepField() = default;
    virtual double y(std::span<const double> x) const = 0;
    virtual void z(std::span<const double> x, std::span<double> out) const = 0;
    virtual nlohmann::json to_json() const = 0;
};

class RegressionField final : public StepField {
public:
    /// `fit` has outputs [Y, Z~_1, ..., Z~_d].
    explicit RegressionField(RegressionFit fit) : fit_(std::move(fit)) {}

    double y(std::span<const double> x) const override { return fit_(x, 0); }
    void z(std::span<const double> x, std::span<double> out) const override;
    nlohmann::json to_json() const override;
    const RegressionFit& fit() const { return fit_; }

private:
    RegressionFit fit_;
};

class GridField final : public StepField {
public:
    GridField(std::shared_ptr<const QuadratureChain> chain, std::vector<double> y_values,
              std::vector<std::vector<double>> z_values);

    double y(std::span<const double> x) const override;
    void z(std::span<const double> x, std::span<double> out) const override;
    nlohmann::json to_json() const override;

private:
    std::shared_ptr<const QuadratureChain> chain_;
    std::vector<double> y_values_;
    std::vector<std::vector<double>> z_values_;  // per component, per node
};

struct StepDiagnostics {
    double time = 0.0;
    double radius = kInfinity;            // projection radius at t_{k+1}
    double projection_active_fraction = 0.0;
    std::size_t cap_hits = 0;             // samples capped at M_z3 (N + 1)
    std::size_t y_clip_hits = 0;          // samples clipped to the a priori Y bound
    double z_raw_p99 = 0.0;               // 99th percentile of |Z~| over samples
    double z_raw_max = 0.0;
};

/// Knobs shared by both backward sweeps.
struct SweepOptions {
    ZBoundParams projection;              // radius M_z1 + M_z2 / sqrt(T - t)
    bool projection_enabled = true;
    double z_cap = kInfinity;             // surrogate of M_z3 (N + 1)
    double y_bound = kInfinity;           // a priori |Y| bound used for clipping
    RegressionBasis basis;
};

/**
 * Per-step Y and Z evaluators of the projected dynamic programming scheme.
 * y(k, x) is clipped to the a priori bound; z(k, x) is the raw estimate
 * projected on the ball of radius rho_{t_{k+1}} and then capped.
 */
class DiscreteSolution {
public:
    DiscreteSolution(TimeGrid grid, std::size_t dim, TerminalFn terminal, SweepOptions options);

    const TimeGrid& grid() const { return grid_; }
    std::size_t dim() const { return dim_; }
    const SweepOptions& options() const { return options_; }

    double y(std::size_t k, std::span<const double> x) const;
    void z(std::size_t k, std::span<const double> x, std::span<double> out, bool projected = true) const;
    /// Projection radius applied to Z at step k (taken at t_{k+1}).
    double radius(std::size_t k) const;

    const StepDiagnostics& diagnostics(std::size_t k) const { return diagnostics_[k]; }
    std::span<const StepDiagnostics> diagnostics() const { return diagnostics_; }

    double y0() const { return y0_; }
    double y0_standard_error() const { return y0_se_; }

    void set_step(std::size_t k, std::shared_ptr<const StepField> field, StepDiagnostics diag);
    void set_y0(double value, double standard_error) {
        y0_ = value;
        y0_se_ = standard_error;
    }

    /// Per-step blocks with coefficients (or node values) and diagnostics.
    nlohmann::json to_json() const;

    /// Metadata of the run that produced the solution.
    SchemeParams params;

private:
    TimeGrid grid_;
    std::size_t dim_;
    TerminalFn terminal_;
    SweepOptions options_;
    std::vector<std::shared_ptr<const StepField>> fields_;
    std::vector<StepDiagnostics> diagnostics_;
    double y0_ = 0.0;
    double y0_se_ = 0.0;
};

/// Regression sweep on a simulated ensemble. For every step the projector is
/// augmented with the normalized increments, which yields E[Y_{k+1} | X_k]
/// and E[Y_{k+1} dW_k | X_k] / h_k from one least-squares problem.
DiscreteSolution backward_sweep(const PathEnsemble& ensemble, const QuadraticDriver& f_eps,
                                const TerminalFn& g_N, const SweepOptions& options);

/// Same recursion with exact Gauss-Hermite conditional expectations on the chain.
DiscreteSolution backward_sweep_quadrature(std::shared_ptr<const QuadratureChain> chain, const QuadraticDriver& f_eps,
                                           const TerminalFn& g_N, const SweepOptions& options);

// ---------------------------------------------------------------------------
// Problem and configuration
// ---------------------------------------------------------------------------

struct ProblemSpec {
    std::string name;
    double T = 1.0;
    SdeModel model;
    QuadraticDriver driver;
    TerminalCondition terminal;
    std::optional<ReferenceSolution> reference;
    Box test_box;             // box for constant checks and default mollifier domain
    ZBoundParams z_bounds;    // default projection constants

    void validate() const;
};

enum class EngineKind { regression, quadrature };

struct EngineSpec {
    EngineKind kind = EngineKind::regression;
    RegressionBasis basis;
    std::size_t nodes_per_axis = 401;
    std::size_t gh_order = 32;
    std::optional<Box> space_box;
};

struct SchemeConfig {
    std::size_t n = 8;
    double a = 0.75;
    double b = 0.25;
    double K = 0.0;
    double eta = 0.0;
    std::optional<double> eps;   // overrides T n^{-a}
    std::optional<double> N;     // overrides n^b
    GridVariant variant = GridVariant::full;
    std::optional<double> tail_exponent;   // reduced variant: ceil(n^c) tail steps
    std::optional<std::size_t> tail_steps; // reduced variant: explicit count
    std::optional<ZBoundParams> projection;  // defaults to the problem's z_bounds
    bool projection_enabled = true;
    bool cap_enabled = true;
    bool clip_y = true;
    std::size_t paths = 10000;
    EngineSpec engine;
    std::uint64_t seed = 1;
    std::size_t mollifier_resolution = 0;  // 0: suggested_mollifier_resolution
    std::optional<Box> mollifier_box;
};

struct SolveResult {
    TimeGrid grid;
    SchemeParams params;
    DiscreteSolution solution;
    std::optional<PathEnsemble> ensemble;  // absent for the quadrature engine
    std::shared_ptr<const MollifiedTerminal> terminal;
    std::size_t mollifier_boundary_hits = 0;
    double runtime_s = 0.0;
};

/// Grid for the configuration: full, reduced or uniform variant.
TimeGrid build_scheme_grid(const ProblemSpec& problem, const SchemeConfig& cfg, const SchemeParams& params);
SchemeParams scheme_params(const ProblemSpec& problem, const SchemeConfig& cfg);
/// Default mollifier box: x0 +- 8 accumulated standard deviations plus drift
/// and cone margins.
Box default_mollifier_box(const ProblemSpec& problem, double N);

SolveResult solve(const ProblemSpec& problem, const SchemeConfig& cfg);

struct ProjectionCalibration {
    ZBoundParams params;       // fitted constants times the safety factor
    double C = 0.0;            // raw fit
    double C_prime = 0.0;
    std::vector<double> times;     // t_{k+1}
    std::vector<double> p99;       // observed 99th percentiles of |Z~|
};

/// Nonnegative least squares of p ~ C + C' (T - t)^{-1/2}.
std::pair<double, double> fit_time_dependent_shape(std::span<const double> t, std::span<const double> values,
                                                   double T);

/// Pilot solve without projection, fit of the per-step 99th percentile of |Z~|
/// against 1 and (T - t_{k+1})^{-1/2}, constants multiplied by `safety`.
ProjectionCalibration calibrate_projection(const ProblemSpec& problem, const SchemeConfig& cfg,
                                           std::size_t pilot_paths = 20000, double safety = 2.0);

// ---------------------------------------------------------------------------
// Error functional
// ---------------------------------------------------------------------------

struct ErrorReport {
    double e_total = 0.0;
    double e_Y = 0.0;
    double e_Z = 0.0;
    double e3 = 0.0;
    double e1_q1 = 0.0, e1_q2 = 0.0;
    double e2_q1 = 0.0, e2_q2 = 0.0;
    double se_Y = 0.0, se_Z = 0.0;
    double half_width = 0.0;        // 1.96 (se_Y + se_Z)
    bool z_available = true;
    std::size_t argmax_step = 0;    // step attaining e_Y
    std::size_t eval_paths = 0;
    // metadata
    std::size_t n = 0;
    double N = 0.0, eps = 0.0, a = 0.0, b = 0.0, K = 0.0;
    std::uint64_t seed = 0;
    double runtime_s = 0.0;

    nlohmann::json to_json() const;
};

/// Seed of the evaluation paths derived from a training seed.
std::uint64_t evaluation_seed(std::uint64_t seed);

/**
 * e(N, eps, n) against a reference on fresh Euler paths:
 *   e_Y = max_k mean |Y_k(X_k) - Y(t_k, X_k)|^2,
 *   e_Z = sum_k mean int_{t_k}^{t_{k+1}} |Z_k(X_k) - Z(t, X_t)|^2 dt,
 * the inner integral by three-point Gauss-Legendre with X_t sampled from the
 * Brownian bridge between the Euler states. e1 and e2 are reported for q = 1
 * and q = 2; e2 uses the scheme's own (Y, Z) on [T - eps, T].
 */
ErrorReport discretization_error(const DiscreteSolution& solution, const ProblemSpec& problem,
                                 const ReferenceSolution& reference, std::size_t eval_paths, std::uint64_t seed);

}  // namespace qbsde
