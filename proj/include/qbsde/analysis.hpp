#pragma once

#include "qbsde/condexp.hpp"
#include "qbsde/problem.hpp"
#include "qbsde/scheme.hpp"
#include "qbsde/timegrid.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qbsde {

// ---------------------------------------------------------------------------
// Time-dependent Z bound
// ---------------------------------------------------------------------------

struct ZSample {
    double t = 0.0;
    double z_norm = 0.0;
};

struct BoundViolation {
    double t = 0.0;
    double z_norm = 0.0;
    double bound = 0.0;
};

struct BoundReport {
    bool holds = true;
    std::size_t samples = 0;
    double C = 0.0;
    double C_prime = 0.0;
    std::vector<BoundViolation> violations;

    nlohmann::json to_json() const;
    void write_csv(std::ostream& out) const;
};

/// Lists the samples with |Z| > C + C' (T - t)^{-1/2}. Every t must be < T.
BoundReport check_time_dependent_bound(std::span<const ZSample> samples, double T, double C, double C_prime);

/// Constants (C, C') of the smallest multiple of the least-squares shape
/// C + C' (T - t)^{-1/2} that dominates every pilot sample.
std::pair<double, double> fit_time_dependent_envelope(std::span<const ZSample> samples, double T);

// ---------------------------------------------------------------------------
// Empirical BMO norm
// ---------------------------------------------------------------------------

/// Z evaluator by grid step: z(k, x, out).
using StepZFn = std::function<void(std::size_t, std::span<const double>, std::span<double>)>;

struct BmoEstimate {
    double value = 0.0;               // sqrt of the largest per-step percentile
    std::size_t argmax_step = 0;
    std::vector<double> step_p99;     // 99th percentile of E[sum_{j>=k} |Z_j|^2 h_j | X_k]
};

/**
 * max_k of the sample 99th percentile of the regression estimate of
 * E[sum_{j >= k} |Z_{t_j}|^2 h_j | X_{t_k}], square-rooted. The supremum over
 * stopping times is replaced by one over grid times.
 */
BmoEstimate estimate_bmo_norm(const StepZFn& z, const PathEnsemble& ensemble, const RegressionBasis& basis);
/// Same with the projected Z of a discrete solution sharing the ensemble's grid.
BmoEstimate estimate_bmo_norm(const DiscreteSolution& solution, const PathEnsemble& ensemble,
                              const RegressionBasis& basis);

// ---------------------------------------------------------------------------
// Path regularity of Z
// ---------------------------------------------------------------------------

/// Z evaluator of a reference: z(t, x, out).
using ZFn = std::function<void(double, std::span<const double>, std::span<double>)>;

struct RegularityStat {
    double value = 0.0;                   // S = sum_i E int_{t_i}^{t_{i+1}} |Z_t - Zbar_i|^2 dt
    double delta_n = 0.0;                 // mesh of the grid
    std::vector<double> contributions;    // per interval

    nlohmann::json to_json() const;
};

/**
 * Zbar_i is the regression of the per-path time average of Z over
 * [t_i, t_{i+1}] on the basis of X_{t_i}; the time integrals use three-point
 * Gauss-Legendre with states sampled from the Brownian bridge.
 */
RegularityStat path_regularity_statistic(const ZFn& z_ref, const TimeGrid& grid, const SdeModel& model,
                                         std::size_t paths, std::uint64_t seed,
                                         const RegressionBasis& basis = RegressionBasis::polynomial(5));

// ---------------------------------------------------------------------------
// Structural assumptions on (b, sigma)
// ---------------------------------------------------------------------------

struct SamplePoint {
    double t = 0.0;
    std::vector<double> x;
};

struct FailingPoint {
    double t = 0.0;
    std::vector<double> x;
    double residual = 0.0;
};

struct AssumptionReport {
    bool holds = true;
    std::vector<FailingPoint> failing;
    std::optional<double> lambda;
    std::string criterion;    // "invertible", "(ii)+(v)" or "(HX1'')"
    std::size_t samples = 0;

    nlohmann::json to_json() const;
    void write_csv(std::ostream& out) const;
};

/// Jacobian evaluator of the drift: nabla_b(t, x) is d x d with entries db_i/dx_j.
using JacobianFn = std::function<Eigen::MatrixXd(double, std::span<const double>)>;

/// Central-difference Jacobian of the model's drift.
JacobianFn numerical_drift_jacobian(const SdeModel& model, double step = 1e-6);

struct Hx1Options {
    double tol = 1e-9;                 // relative singular-value and residual threshold
    std::size_t eta_samples = 2000;    // random directions per point for the ratio criterion
    std::uint64_t seed = 7;
};

/**
 * With a declared bound on sigma^{-1}: holds with
 * lambda = M_{sigma^{-1}} (M_sigma K_b + K_sigma). Otherwise at every sample
 * each null vector v of sigma^T (singular values below tol times the largest)
 * must satisfy |sigma^T nabla_b^T v| < tol max(1, |sigma| |nabla_b|); lambda
 * is then the largest observed ratio |eta^T sigma sigma^T nabla_b^T eta| / |eta^T sigma|^2
 * over random unit eta with |eta^T sigma| > tol.
 */
AssumptionReport check_hx1(const SdeModel& model, const JacobianFn& nabla_b, std::span<const SamplePoint> points,
                           const Hx1Options& options = {});

/// A(s, x) and B(s), both R^d-valued.
using FactorAFn = std::function<void(double, std::span<const double>, std::span<double>)>;
using FactorBFn = std::function<void(double, std::span<double>)>;

/**
 * Factorization check b(s, sigma x) = sigma A(s, x) + B(s) for a
 * time-independent sigma: residual |b(s, sigma x) - sigma A(s, x) - B(s)| < tol
 * at every sample.
 */
AssumptionReport check_hx1_doubleprime(const SdeModel& model, const FactorAFn& A, const FactorBFn& B,
                                       std::span<const SamplePoint> points, double tol = 1e-9);

/// Uniform sample of (t, x) in [0, T] x box.
std::vector<SamplePoint> sample_points(double T, const Box& box, std::size_t count, std::uint64_t seed);

}  // namespace qbsde
