#pragma once

#include "qbsde/problem.hpp"
#include "qbsde/quadrature.hpp"
#include "qbsde/timegrid.hpp"
#include "qbsde/types.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qbsde {

/// Row-major sample matrix: one sample per row.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SampleRef = Eigen::Ref<const SampleMatrix>;

/// Raised when a least-squares fit cannot be carried out.
class RegressionError : public std::runtime_error {
public:
    RegressionError(const std::string& what, std::optional<std::size_t> step)
        : std::runtime_error(step ? "regression failed at step " + std::to_string(*step) + ": " + what
                                  : "regression failed: " + what),
          step_(step) {}

    std::optional<std::size_t> step() const { return step_; }

private:
    std::optional<std::size_t> step_;
};

enum class BasisFamily { polynomial, local };

/// User-facing description of a regression basis.
///
/// polynomial: Legendre polynomials of total degree <= `degree` in the
///   coordinates rescaled to [-1, 1] over the normalization box.
/// local: hypercube partition of the box with `cells_per_axis` cells along
///   each axis (0 selects ceil(paths^{1/(d+2)})), and per cell either a
///   constant (degree 0) or an affine function (degree 1).
///
/// Without an explicit box the bounding box of the sample is used.
struct RegressionBasis {
    BasisFamily family = BasisFamily::local;
    std::size_t degree = 0;
    std::size_t cells_per_axis = 0;
    std::optional<Box> box;

    static RegressionBasis polynomial(std::size_t degree, std::optional<Box> box = std::nullopt);
    static RegressionBasis local(std::size_t cells_per_axis = 0, std::size_t degree = 0,
                                 std::optional<Box> box = std::nullopt);

    std::string describe() const;
};

void to_json(nlohmann::json& j, const RegressionBasis& basis);
void from_json(const nlohmann::json& j, RegressionBasis& basis);

/**
 * A basis bound to a concrete box. Every basis is organized in cells; each
 * cell carries the same number of local functions, the first of which is the
 * constant 1. The polynomial family has a single cell.
 *
 * Axes on which the box is degenerate (zero width) are inactive: no function
 * varies along them.
 */
class ResolvedBasis {
public:
    static ResolvedBasis resolve(const RegressionBasis& spec, const SampleRef& samples);
    static ResolvedBasis from_json(const nlohmann::json& j);

    std::size_t dim() const { return box_.dim(); }
    std::size_t num_cells() const { return num_cells_; }
    std::size_t functions_per_cell() const { return per_cell_; }
    std::size_t size() const { return num_cells_ * per_cell_; }
    const Box& box() const { return box_; }
    BasisFamily family() const { return family_; }

    /// Cell containing x (points outside the box go to the nearest cell).
    std::size_t cell(std::span<const double> x) const;
    /// Values of the local functions of `cell` at x; `out` has functions_per_cell() entries.
    void features(std::span<const double> x, std::size_t cell, std::span<double> out) const;

    nlohmann::json to_json() const;

private:
    void finalize();

    BasisFamily family_ = BasisFamily::local;
    std::size_t degree_ = 0;
    Box box_;
    std::vector<bool> active_;
    std::vector<std::size_t> cells_;  // per axis
    std::size_t num_cells_ = 1;
    std::size_t per_cell_ = 1;
    std::vector<std::vector<std::size_t>> exponents_;  // polynomial multi-indices
};

/// Fitted evaluator x -> (E[V_1 | X = x], ..., E[V_m | X = x]).
class RegressionFit {
public:
    RegressionFit(ResolvedBasis basis, Eigen::MatrixXd coefficients);

    std::size_t dim() const { return basis_.dim(); }
    std::size_t num_outputs() const { return static_cast<std::size_t>(coefficients_.cols()); }
    const ResolvedBasis& basis() const { return basis_; }
    const Eigen::MatrixXd& coefficients() const { return coefficients_; }

    double operator()(std::span<const double> x, std::size_t output = 0) const;
    void evaluate(std::span<const double> x, std::span<double> out) const;

    nlohmann::json to_json() const;
    static RegressionFit from_json(const nlohmann::json& j);

private:
    ResolvedBasis basis_;
    Eigen::MatrixXd coefficients_;  // size() x outputs, cell-major rows
};

/**
 * Least-squares projection onto span{phi_j(X)} for a fixed sample of X.
 *
 * Optionally the basis is augmented with phi_j(X) xi_l, where xi is a sample
 * of centred unit-variance noise independent of X (normalized Brownian
 * increments). Projecting V onto the augmented span returns, for each target,
 * 1 + q coefficient blocks: the conditional mean of V and the q conditional
 * covariances E[V xi_l | X]. The normal equations are assembled and solved
 * cell by cell with a ridge floor of 1e-10 times the trace, followed by two
 * steps of iterative refinement against the unregularized system.
 *
 * Local cells holding fewer than four samples per unknown fall back to the cell
 * mean of the target; empty cells return the global sample mean.
 */
class LeastSquaresProjector {
public:
    LeastSquaresProjector(ResolvedBasis basis, const SampleRef& samples,
                          const SampleMatrix* noise = nullptr, std::optional<std::size_t> step = std::nullopt);

    const ResolvedBasis& basis() const { return basis_; }
    std::size_t num_samples() const { return cell_of_.size(); }
    std::size_t noise_dim() const { return noise_dim_; }

    /// Coefficients for every target: (basis size) x (targets * (1 + noise_dim)),
    /// block b of target t in column t * (1 + noise_dim) + b.
    Eigen::MatrixXd project(const Eigen::MatrixXd& targets) const;
    RegressionFit fit(const Eigen::MatrixXd& targets) const;

    /// Values of column `column` of `coefficients` (only the phi part) at sample i.
    double fitted_value(const Eigen::MatrixXd& coefficients, std::size_t column, std::size_t i) const;

private:
    ResolvedBasis basis_;
    std::size_t noise_dim_ = 0;
    std::optional<std::size_t> step_;
    std::vector<std::size_t> cell_of_;
    SampleMatrix features_;     // samples x per_cell (phi part)
    SampleMatrix noise_;        // samples x noise_dim
    struct CellSystem {
        std::size_t count = 0;
        bool solvable = false;
        Eigen::MatrixXd gram;
        Eigen::LDLT<Eigen::MatrixXd> ldlt;
    };
    std::vector<CellSystem> cells_;
};

/// Ê[V | X = x] by least squares on the given basis.
RegressionFit fit_conditional_expectation(const SampleRef& x_samples, const Eigen::VectorXd& v_samples,
                                          const RegressionBasis& basis,
                                          std::optional<std::size_t> step = std::nullopt);

// ---------------------------------------------------------------------------
// Gauss-Hermite Markov chain (small-dimensional oracle engine)
// ---------------------------------------------------------------------------

/// One quadrature node of the Euler transition out of a grid point.
struct TransitionNode {
    std::vector<double> point;   // x + h b(t, x) + sigma(t) sqrt(h) xi
    std::vector<double> xi;      // standard normal node
    double weight = 0.0;
};

/**
 * Tensor grid of `nodes_per_axis` points per axis on a fixed box, shared by
 * every time step, together with the Gauss-Hermite discretization of the
 * Euler transitions between consecutive times. Off-grid values are obtained
 * by multilinear interpolation (constant extension outside the box).
 */
class QuadratureChain {
public:
    QuadratureChain(SdeModel model, TimeGrid grid, Box space_box, std::size_t nodes_per_axis, std::size_t gh_order);

    std::size_t dim() const { return box_.dim(); }
    std::size_t num_nodes() const { return num_nodes_; }
    std::size_t nodes_per_axis() const { return per_axis_; }
    const Box& space_box() const { return box_; }
    const TimeGrid& grid() const { return grid_; }
    std::size_t gh_order() const { return gh_.size(); }

    /// Coordinates of grid node `index` (row-major, axis 0 fastest).
    std::vector<double> node(std::size_t index) const;

    /// Transition nodes out of `x` over step k.
    std::vector<TransitionNode> transition(std::size_t k, std::span<const double> x) const;

    /// Multilinear interpolation of node values at x.
    double interpolate(std::span<const double> values, std::span<const double> x) const;

    /// E[phi(X_{k+1}) | X_k = x] for phi given by node values at step k + 1.
    double expectation(std::size_t k, std::span<const double> x, std::span<const double> next_values) const;

private:
    SdeModel model_;
    TimeGrid grid_;
    Box box_;
    std::size_t per_axis_;
    std::size_t num_nodes_;
    QuadratureRule gh_;
};

/// Builds the chain after checking that the box covers the mean path plus or
/// minus six standard deviations of the accumulated noise along every axis.
QuadratureChain build_quadrature_chain(const SdeModel& model, const TimeGrid& grid, const Box& space_box,
                                       std::size_t nodes_per_axis, std::size_t gh_order);

}  // namespace qbsde
