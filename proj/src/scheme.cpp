#include "qbsde/scheme.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace qbsde {
namespace {

double percentile(std::vector<double>& values, double q) {
    if (values.empty()) return 0.0;
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
    return values[idx];
}

void check_finite_vector(std::span<const double> v, const char* what, std::size_t k, std::size_t path) {
    for (double c : v) {
        if (!std::isfinite(c)) {
            std::ostringstream msg;
            msg << "simulate_euler: non-finite " << what << " at step " << k << ", path " << path;
            throw std::runtime_error(msg.str());
        }
    }
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Applies projection and cap to z in place; reports which of them acted.
std::pair<bool, bool> constrain_z(std::span<double> z, double radius, bool projection_enabled, double cap) {
    bool projected = false;
    if (projection_enabled) projected = project_z_inplace(z, radius);
    bool capped = false;
    if (std::isfinite(cap)) capped = project_z_inplace(z, cap);
    return {projected, capped};
}

}  // namespace

// ---------------------------------------------------------------------------
// PathEnsemble
// ---------------------------------------------------------------------------

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t paths, std::size_t dim, std::uint64_t seed)
    : grid_(std::move(grid)), paths_(paths), dim_(dim), seed_(seed) {
    if (paths == 0) throw std::invalid_argument("PathEnsemble: paths must be at least 1");
    if (dim == 0) throw std::invalid_argument("PathEnsemble: dimension must be positive");
    states_.assign((grid_.num_steps() + 1) * paths_ * dim_, 0.0);
    increments_.assign(grid_.num_steps() * paths_ * dim_, 0.0);
}

std::span<double> PathEnsemble::state(std::size_t k, std::size_t path) {
    return {states_.data() + (k * paths_ + path) * dim_, dim_};
}
std::span<const double> PathEnsemble::state(std::size_t k, std::size_t path) const {
    return {states_.data() + (k * paths_ + path) * dim_, dim_};
}
std::span<double> PathEnsemble::increment(std::size_t k, std::size_t path) {
    return {increments_.data() + (k * paths_ + path) * dim_, dim_};
}
std::span<const double> PathEnsemble::increment(std::size_t k, std::size_t path) const {
    return {increments_.data() + (k * paths_ + path) * dim_, dim_};
}

Eigen::Map<const SampleMatrix> PathEnsemble::states_at(std::size_t k) const {
    return {states_.data() + k * paths_ * dim_, static_cast<Eigen::Index>(paths_), static_cast<Eigen::Index>(dim_)};
}

Eigen::Map<const SampleMatrix> PathEnsemble::increments_at(std::size_t k) const {
    return {increments_.data() + k * paths_ * dim_, static_cast<Eigen::Index>(paths_),
            static_cast<Eigen::Index>(dim_)};
}

void simulate_euler_path(const SdeModel& model, const TimeGrid& grid, const CounterRng& rng, std::size_t path,
                         std::span<double> states, std::span<double> increments) {
    const std::size_t d = model.dim;
    const std::size_t steps = grid.num_steps();
    std::copy(model.x0.begin(), model.x0.end(), states.begin());
    std::vector<double> drift(d), xi(d);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = grid.time(k);
        const double h = grid.step(k);
        const double sqrt_h = std::sqrt(h);
        const Eigen::MatrixXd sigma = model.diffusion(t);
        const std::span<const double> x(states.data() + k * d, d);
        model.drift(t, x, drift);
        check_finite_vector(drift, "drift", k, path);
        rng.normals(Stream::increments, path, k, xi);
        double* dw = increments.data() + k * d;
        for (std::size_t i = 0; i < d; ++i) dw[i] = sqrt_h * xi[i];
        double* next = states.data() + (k + 1) * d;
        for (std::size_t i = 0; i < d; ++i) {
            double noise = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                noise += sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) * dw[l];
            }
            next[i] = x[i] + h * drift[i] + noise;
        }
        check_finite_vector(std::span<const double>(next, d), "state", k + 1, path);
    }
}

double ou_strong_error(double theta, double sigma, double x0, const TimeGrid& grid, std::size_t paths,
                       std::uint64_t seed) {
    if (!(theta > 0.0)) throw std::invalid_argument("ou_strong_error: theta must be positive");
    if (paths == 0) throw std::invalid_argument("ou_strong_error: paths must be at least 1");
    const std::size_t steps = grid.num_steps();
    const CounterRng rng(seed);
    struct StepCoefficients {
        double decay, slope, residual_sd;
    };
    std::vector<StepCoefficients> coef(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double h = grid.step(k);
        const double cov = sigma * -std::expm1(-theta * h) / theta;
        const double var = sigma * sigma * -std::expm1(-2.0 * theta * h) / (2.0 * theta);
        coef[k] = {std::exp(-theta * h), cov / h, std::sqrt(std::max(0.0, var - cov * cov / h))};
    }
    std::vector<double> sum(steps + 1, 0.0);
    for (std::size_t p = 0; p < paths; ++p) {
        double euler = x0, exact = x0;
        for (std::size_t k = 0; k < steps; ++k) {
            const double h = grid.step(k);
            const double dw = std::sqrt(h) * rng.normal(Stream::increments, p, k);
            const double extra = rng.normal(Stream::exact_transition, p, k);
            euler += -theta * euler * h + sigma * dw;
            exact = coef[k].decay * exact + coef[k].slope * dw + coef[k].residual_sd * extra;
            sum[k + 1] += (euler - exact) * (euler - exact);
        }
    }
    return *std::max_element(sum.begin(), sum.end()) / static_cast<double>(paths);
}

void bridge_states(const SdeModel& model, const Eigen::MatrixXd& sigma_k, double t_k, double h,
                   std::span<const double> x_k, std::span<const double> dw_k, const CounterRng& rng,
                   std::size_t path, std::size_t k, std::span<double> out) {
    const std::size_t d = model.dim;
    const QuadratureRule& gl = unit_gauss_legendre3();
    std::vector<double> drift(d), prev(d, 0.0), bridge(d), noise(d);
    model.drift(t_k, x_k, drift);
    double theta_prev = 0.0;
    for (std::size_t j = 0; j < gl.size(); ++j) {
        const double theta = gl.nodes[j];
        const double frac = (theta - theta_prev) / (1.0 - theta_prev);
        const double var = (theta - theta_prev) * (1.0 - theta) / (1.0 - theta_prev) * h;
        rng.normals(Stream::bridge, path, k * gl.size() + j, noise);
        for (std::size_t i = 0; i < d; ++i) {
            bridge[i] = prev[i] + frac * (dw_k[i] - prev[i]) + std::sqrt(var) * noise[i];
        }
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                s += sigma_k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) * bridge[l];
            }
            out[j * d + i] = x_k[i] + theta * h * drift[i] + s;
        }
        prev = bridge;
        theta_prev = theta;
    }
}

PathEnsemble simulate_euler(const SdeModel& model, const TimeGrid& grid, std::size_t paths, std::uint64_t seed) {
    model.validate();
    PathEnsemble ensemble(grid, paths, model.dim, seed);
    const CounterRng rng(seed);
    const std::size_t d = model.dim;
    const std::size_t steps = grid.num_steps();
    std::vector<Eigen::MatrixXd> sigmas(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        sigmas[k] = model.diffusion(grid.time(k));
        if (!sigmas[k].allFinite()) {
            throw std::runtime_error("simulate_euler: non-finite diffusion at step " + std::to_string(k) +
                                     " (all paths)");
        }
        if (static_cast<std::size_t>(sigmas[k].rows()) != d || static_cast<std::size_t>(sigmas[k].cols()) != d) {
            throw std::invalid_argument("simulate_euler: diffusion matrix has the wrong shape");
        }
    }
    std::vector<double> drift(d), xi(d);
    for (std::size_t p = 0; p < paths; ++p) {
        std::copy(model.x0.begin(), model.x0.end(), ensemble.state(0, p).begin());
        for (std::size_t k = 0; k < steps; ++k) {
            const double t = grid.time(k);
            const double h = grid.step(k);
            const double sqrt_h = std::sqrt(h);
            const auto x = ensemble.state(k, p);
            model.drift(t, x, drift);
            check_finite_vector(drift, "drift", k, p);
            rng.normals(Stream::increments, p, k, xi);
            auto dw = ensemble.increment(k, p);
            for (std::size_t i = 0; i < d; ++i) dw[i] = sqrt_h * xi[i];
            auto next = ensemble.state(k + 1, p);
            const auto& sigma = sigmas[k];
            for (std::size_t i = 0; i < d; ++i) {
                double noise = 0.0;
                for (std::size_t l = 0; l < d; ++l) {
                    noise += sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) * dw[l];
                }
                next[i] = x[i] + h * drift[i] + noise;
            }
            check_finite_vector(next, "state", k + 1, p);
        }
    }
    return ensemble;
}

// ---------------------------------------------------------------------------
// Fields and solution
// ---------------------------------------------------------------------------

void RegressionField::z(std::span<const double> x, std::span<double> out) const {
    std::vector<double> all(fit_.num_outputs());
    fit_.evaluate(x, all);
    std::copy(all.begin() + 1, all.end(), out.begin());
}

nlohmann::json RegressionField::to_json() const {
    nlohmann::json j = fit_.to_json();
    j["engine"] = "regression";
    j["outputs"] = "Y, raw Z components";
    return j;
}

GridField::GridField(std::shared_ptr<const QuadratureChain> chain, std::vector<double> y_values,
                     std::vector<std::vector<double>> z_values)
    : chain_(std::move(chain)), y_values_(std::move(y_values)), z_values_(std::move(z_values)) {}

double GridField::y(std::span<const double> x) const { return chain_->interpolate(y_values_, x); }

void GridField::z(std::span<const double> x, std::span<double> out) const {
    for (std::size_t l = 0; l < z_values_.size(); ++l) out[l] = chain_->interpolate(z_values_[l], x);
}

nlohmann::json GridField::to_json() const {
    return {{"engine", "quadrature"},
            {"lower", chain_->space_box().lower},
            {"upper", chain_->space_box().upper},
            {"nodes_per_axis", chain_->nodes_per_axis()},
            {"y", y_values_},
            {"z", z_values_}};
}

DiscreteSolution::DiscreteSolution(TimeGrid grid, std::size_t dim, TerminalFn terminal, SweepOptions options)
    : grid_(std::move(grid)), dim_(dim), terminal_(std::move(terminal)), options_(std::move(options)) {
    fields_.resize(grid_.num_steps());
    diagnostics_.resize(grid_.num_steps());
}

void DiscreteSolution::set_step(std::size_t k, std::shared_ptr<const StepField> field, StepDiagnostics diag) {
    fields_.at(k) = std::move(field);
    diagnostics_.at(k) = diag;
}

double DiscreteSolution::radius(std::size_t k) const {
    return projection_radius(grid_.time(k + 1), grid_.horizon(), options_.projection);
}

double DiscreteSolution::y(std::size_t k, std::span<const double> x) const {
    if (k == grid_.num_steps()) return terminal_(x);
    const auto& field = fields_.at(k);
    if (!field) throw std::logic_error("DiscreteSolution: step " + std::to_string(k) + " not computed");
    const double v = field->y(x);
    return std::clamp(v, -options_.y_bound, options_.y_bound);
}

void DiscreteSolution::z(std::size_t k, std::span<const double> x, std::span<double> out, bool projected) const {
    const auto& field = fields_.at(k);
    if (!field) throw std::logic_error("DiscreteSolution: step " + std::to_string(k) + " not computed");
    field->z(x, out);
    if (projected) constrain_z(out, radius(k), options_.projection_enabled, options_.z_cap);
}

nlohmann::json DiscreteSolution::to_json() const {
    nlohmann::json steps = nlohmann::json::array();
    for (std::size_t k = 0; k < fields_.size(); ++k) {
        const auto& d = diagnostics_[k];
        nlohmann::json block = fields_[k] ? fields_[k]->to_json() : nlohmann::json();
        block["k"] = k;
        block["t"] = grid_.time(k);
        block["h"] = grid_.step(k);
        block["radius"] = std::isfinite(d.radius) ? nlohmann::json(d.radius) : nlohmann::json("inf");
        block["projection_active_fraction"] = d.projection_active_fraction;
        block["cap_hits"] = d.cap_hits;
        block["y_clip_hits"] = d.y_clip_hits;
        block["z_raw_p99"] = d.z_raw_p99;
        block["z_raw_max"] = d.z_raw_max;
        steps.push_back(std::move(block));
    }
    auto finite_or_inf = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf"); };
    return {{"dim", dim_},
            {"times", std::vector<double>(grid_.times().begin(), grid_.times().end())},
            {"y0", y0_},
            {"y0_standard_error", y0_se_},
            {"z_cap", finite_or_inf(options_.z_cap)},
            {"y_bound", finite_or_inf(options_.y_bound)},
            {"projection",
             {{"enabled", options_.projection_enabled},
              {"M_z1", finite_or_inf(options_.projection.M_z1)},
              {"M_z2", options_.projection.M_z2}}},
            {"basis", options_.basis},
            {"steps", steps}};
}

// ---------------------------------------------------------------------------
// Backward sweeps
// ---------------------------------------------------------------------------

DiscreteSolution backward_sweep(const PathEnsemble& ensemble, const QuadraticDriver& f_eps, const TerminalFn& g_N,
                                const SweepOptions& options) {
    options.projection.validate();
    const TimeGrid& grid = ensemble.grid();
    const std::size_t P = ensemble.paths();
    const std::size_t d = ensemble.dim();
    const std::size_t steps = grid.num_steps();
    DiscreteSolution solution(grid, d, g_N, options);

    Eigen::VectorXd y_next(static_cast<Eigen::Index>(P));
    {
        const auto xT = ensemble.states_at(steps);
        for (std::size_t p = 0; p < P; ++p) {
            y_next(static_cast<Eigen::Index>(p)) = g_N(std::span<const double>(xT.row(static_cast<Eigen::Index>(p)).data(), d));
        }
    }
    Eigen::VectorXd f_values(static_cast<Eigen::Index>(P));
    Eigen::VectorXd y_now(static_cast<Eigen::Index>(P));
    std::vector<double> z_samples(P * d);
    std::vector<double> z_norms(P);
    SampleMatrix xi(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(d));

    for (std::size_t k = steps; k-- > 0;) {
        const double t = grid.time(k);
        const double h = grid.step(k);
        const double sqrt_h = std::sqrt(h);
        const auto X = ensemble.states_at(k);
        xi = ensemble.increments_at(k) / sqrt_h;
        ResolvedBasis basis = ResolvedBasis::resolve(options.basis, X);
        const LeastSquaresProjector projector(std::move(basis), X, &xi, k);
        const std::size_t blocks = 1 + d;

        const Eigen::MatrixXd cy = projector.project(y_next);
        StepDiagnostics diag;
        diag.time = t;
        diag.radius = solution.radius(k);
        std::size_t active = 0;
        for (std::size_t p = 0; p < P; ++p) {
            std::span<double> z(z_samples.data() + p * d, d);
            for (std::size_t l = 0; l < d; ++l) z[l] = projector.fitted_value(cy, 1 + l, p) / sqrt_h;
            z_norms[p] = std::sqrt(squared_norm(z));
            const auto [projected, capped] = constrain_z(z, diag.radius, options.projection_enabled, options.z_cap);
            active += projected ? 1 : 0;
            diag.cap_hits += capped ? 1 : 0;
            const auto pi = static_cast<Eigen::Index>(p);
            f_values(pi) = f_eps(t, std::span<const double>(X.row(pi).data(), d), y_next(pi), z);
            if (!std::isfinite(f_values(pi))) {
                throw std::runtime_error("backward_sweep: non-finite driver value at step " + std::to_string(k) +
                                         ", path " + std::to_string(p));
            }
        }
        diag.projection_active_fraction = static_cast<double>(active) / static_cast<double>(P);
        diag.z_raw_max = *std::max_element(z_norms.begin(), z_norms.end());
        diag.z_raw_p99 = percentile(z_norms, 0.99);

        const Eigen::MatrixXd cf = projector.project(f_values);
        Eigen::MatrixXd coefficients(cy.rows(), static_cast<Eigen::Index>(blocks));
        coefficients.col(0) = cy.col(0) + h * cf.col(0);
        for (std::size_t l = 0; l < d; ++l) {
            coefficients.col(static_cast<Eigen::Index>(1 + l)) = cy.col(static_cast<Eigen::Index>(1 + l)) / sqrt_h;
        }

        for (std::size_t p = 0; p < P; ++p) {
            double v = projector.fitted_value(coefficients, 0, p);
            if (!std::isfinite(v)) {
                throw std::runtime_error("backward_sweep: non-finite Y at step " + std::to_string(k) + ", path " +
                                         std::to_string(p));
            }
            if (std::abs(v) > options.y_bound) {
                v = std::clamp(v, -options.y_bound, options.y_bound);
                ++diag.y_clip_hits;
            }
            y_now(static_cast<Eigen::Index>(p)) = v;
        }

        if (k == 0) {
            // Residual of the one-step regression gives the Monte Carlo error of Y_0.
            double mean_f = f_values.mean();
            Eigen::VectorXd resid(static_cast<Eigen::Index>(P));
            for (std::size_t p = 0; p < P; ++p) {
                const auto pi = static_cast<Eigen::Index>(p);
                double fitted = projector.fitted_value(cy, 0, p);
                for (std::size_t l = 0; l < d; ++l) fitted += projector.fitted_value(cy, 1 + l, p) * xi(pi, static_cast<Eigen::Index>(l));
                resid(pi) = y_next(pi) - fitted + h * (f_values(pi) - mean_f);
            }
            const double centered = (resid.array() - resid.mean()).square().sum();
            const double sd = P > 1 ? std::sqrt(centered / static_cast<double>(P - 1)) : 0.0;
            solution.set_y0(y_now.mean(), sd / std::sqrt(static_cast<double>(P)));
        }

        solution.set_step(k, std::make_shared<RegressionField>(RegressionFit(projector.basis(), coefficients)), diag);
        y_next.swap(y_now);
    }
    return solution;
}

DiscreteSolution backward_sweep_quadrature(std::shared_ptr<const QuadratureChain> chain, const QuadraticDriver& f_eps,
                                           const TerminalFn& g_N, const SweepOptions& options) {
    options.projection.validate();
    const TimeGrid& grid = chain->grid();
    const std::size_t d = chain->dim();
    const std::size_t M = chain->num_nodes();
    const std::size_t steps = grid.num_steps();
    DiscreteSolution solution(grid, d, g_N, options);

    std::vector<double> y_next(M), y_now(M);
    for (std::size_t i = 0; i < M; ++i) y_next[i] = g_N(chain->node(i));
    std::vector<double> z(d), next_vals;
    std::vector<double> z_norms(M);

    for (std::size_t k = steps; k-- > 0;) {
        const double t = grid.time(k);
        const double h = grid.step(k);
        const double sqrt_h = std::sqrt(h);
        StepDiagnostics diag;
        diag.time = t;
        diag.radius = solution.radius(k);
        std::vector<std::vector<double>> z_raw(d, std::vector<double>(M));
        std::size_t active = 0;
        for (std::size_t i = 0; i < M; ++i) {
            const std::vector<double> x = chain->node(i);
            const auto nodes = chain->transition(k, x);
            next_vals.resize(nodes.size());
            double mean = 0.0;
            for (std::size_t j = 0; j < nodes.size(); ++j) {
                next_vals[j] = chain->interpolate(y_next, nodes[j].point);
                mean += nodes[j].weight * next_vals[j];
            }
            std::fill(z.begin(), z.end(), 0.0);
            for (std::size_t j = 0; j < nodes.size(); ++j) {
                for (std::size_t l = 0; l < d; ++l) z[l] += nodes[j].weight * (next_vals[j] - mean) * nodes[j].xi[l];
            }
            for (std::size_t l = 0; l < d; ++l) {
                z[l] /= sqrt_h;
                z_raw[l][i] = z[l];
            }
            z_norms[i] = std::sqrt(squared_norm(z));
            const auto [projected, capped] = constrain_z(z, diag.radius, options.projection_enabled, options.z_cap);
            active += projected ? 1 : 0;
            diag.cap_hits += capped ? 1 : 0;
            double ef = 0.0;
            for (std::size_t j = 0; j < nodes.size(); ++j) ef += nodes[j].weight * f_eps(t, x, next_vals[j], z);
            double v = mean + h * ef;
            if (!std::isfinite(v)) {
                throw std::runtime_error("backward_sweep_quadrature: non-finite Y at step " + std::to_string(k) +
                                         ", node " + std::to_string(i));
            }
            if (std::abs(v) > options.y_bound) {
                v = std::clamp(v, -options.y_bound, options.y_bound);
                ++diag.y_clip_hits;
            }
            y_now[i] = v;
        }
        diag.projection_active_fraction = static_cast<double>(active) / static_cast<double>(M);
        diag.z_raw_max = *std::max_element(z_norms.begin(), z_norms.end());
        diag.z_raw_p99 = percentile(z_norms, 0.99);
        solution.set_step(k, std::make_shared<GridField>(chain, y_now, std::move(z_raw)), diag);
        y_next.swap(y_now);
    }
    return solution;
}

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

void ProblemSpec::validate() const {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("problem '" + name + "': T must be positive");
    model.validate();
    if (!driver.f) throw std::invalid_argument("problem '" + name + "': missing driver");
    if (!terminal.g) throw std::invalid_argument("problem '" + name + "': missing terminal condition");
    if (test_box.dim() != model.dim) throw std::invalid_argument("problem '" + name + "': test box dimension mismatch");
    z_bounds.validate();
}

SchemeParams scheme_params(const ProblemSpec& problem, const SchemeConfig& cfg) {
    if (cfg.n == 0) throw std::invalid_argument("SchemeConfig: n must be at least 1");
    SchemeParams p;
    p.n = cfg.n;
    p.a = cfg.a;
    p.b = cfg.b;
    p.K = cfg.K;
    p.eta = cfg.eta;
    const double dn = static_cast<double>(cfg.n);
    p.eps = cfg.eps ? *cfg.eps : problem.T * std::pow(dn, -cfg.a);
    p.N = cfg.N ? *cfg.N : std::pow(dn, cfg.b);
    const auto& term = problem.terminal;
    if (term.regularity == Regularity::holder && term.alpha > 0.0 && term.alpha < 1.0) {
        p.rate = select_scheme_parameters_for_K(term.alpha, cfg.K).rate;
    }
    if (cfg.variant != GridVariant::uniform) p.validate(problem.T);
    return p;
}

TimeGrid build_scheme_grid(const ProblemSpec& problem, const SchemeConfig& cfg, const SchemeParams& params) {
    switch (cfg.variant) {
        case GridVariant::uniform:
            return TimeGrid::uniform(problem.T, cfg.n);
        case GridVariant::reduced: {
            TimeGrid grid = [&] {
                if (cfg.tail_steps) return TimeGrid::build_with_tail(problem.T, params.eps, cfg.n, *cfg.tail_steps);
                if (!cfg.tail_exponent) throw std::invalid_argument("reduced grid needs tail_exponent or tail_steps");
                if (*cfg.tail_exponent <= 0.0) return TimeGrid::build_with_tail(problem.T, params.eps, cfg.n, 1);
                return TimeGrid::build_reduced(problem.T, params.eps, cfg.n, *cfg.tail_exponent);
            }();
            return cfg.eps ? grid : grid.with_decay_exponent(cfg.a);
        }
        case GridVariant::full:
        default: {
            TimeGrid grid = TimeGrid::build(problem.T, params.eps, cfg.n);
            return cfg.eps ? grid : grid.with_decay_exponent(cfg.a);
        }
    }
}

Box default_mollifier_box(const ProblemSpec& problem, double N) {
    const auto& model = problem.model;
    const std::size_t d = model.dim;
    const double sd = model.constants.M_sigma * std::sqrt(problem.T);
    std::vector<double> lo(d), hi(d);
    const double m_g = std::isfinite(problem.terminal.M_g) ? problem.terminal.M_g : 1.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double x0 = model.x0[i];
        const double drift = model.constants.M_b * problem.T * (1.0 + std::abs(x0)) *
                             std::exp(model.constants.M_b * problem.T);
        const double half = 8.0 * sd + drift + 2.0 * m_g / N + 1e-6;
        lo[i] = std::min(x0 - half, problem.test_box.lower[i]);
        hi[i] = std::max(x0 + half, problem.test_box.upper[i]);
    }
    return Box(lo, hi);
}

SolveResult solve(const ProblemSpec& problem, const SchemeConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    problem.validate();
    const SchemeParams params = scheme_params(problem, cfg);
    TimeGrid grid = build_scheme_grid(problem, cfg, params);

    const Box mbox = cfg.mollifier_box ? *cfg.mollifier_box : default_mollifier_box(problem, params.N);
    const std::size_t resolution = cfg.mollifier_resolution > 0
                                       ? cfg.mollifier_resolution
                                       : suggested_mollifier_resolution(problem.terminal, params.N, mbox);
    auto terminal = std::make_shared<const MollifiedTerminal>(problem.terminal, params.N, mbox, resolution);
    const TerminalFn g_N = [terminal](std::span<const double> x) { return (*terminal)(x); };

    const double eps_trunc = cfg.variant == GridVariant::uniform ? std::min(params.eps, 0.5 * problem.T) : params.eps;
    const QuadraticDriver f_eps = truncate_driver(problem.driver, problem.T, eps_trunc);

    SweepOptions options;
    options.projection = cfg.projection ? *cfg.projection : problem.z_bounds;
    options.projection_enabled = cfg.projection_enabled;
    options.z_cap = cfg.cap_enabled ? uniform_z_bound(problem.model, problem.driver, params.N, problem.T) : kInfinity;
    options.y_bound = cfg.clip_y ? a_priori_y_bound(problem.driver, problem.terminal, problem.T) : kInfinity;
    options.basis = cfg.engine.basis;

    std::optional<PathEnsemble> ensemble;
    std::size_t boundary_hits = 0;
    std::optional<DiscreteSolution> solution;
    if (cfg.engine.kind == EngineKind::regression) {
        ensemble.emplace(simulate_euler(problem.model, grid, cfg.paths, cfg.seed));
        const auto xT = ensemble->states_at(grid.num_steps());
        if (!terminal->is_identity()) {
            for (std::size_t p = 0; p < ensemble->paths(); ++p) {
                const auto row = xT.row(static_cast<Eigen::Index>(p));
                boundary_hits += terminal->evaluate(std::span<const double>(row.data(), problem.model.dim))
                                         .minimizer_on_boundary
                                     ? 1
                                     : 0;
            }
        }
        solution.emplace(backward_sweep(*ensemble, f_eps, g_N, options));
    } else {
        const Box space = cfg.engine.space_box ? *cfg.engine.space_box : default_mollifier_box(problem, params.N);
        auto chain = std::make_shared<const QuadratureChain>(
            build_quadrature_chain(problem.model, grid, space, cfg.engine.nodes_per_axis, cfg.engine.gh_order));
        solution.emplace(backward_sweep_quadrature(chain, f_eps, g_N, options));
        solution->set_y0(solution->y(0, problem.model.x0), 0.0);
    }
    solution->params = params;
    const double runtime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return SolveResult{std::move(grid), params, std::move(*solution), std::move(ensemble), terminal, boundary_hits,
                       runtime};
}

std::pair<double, double> fit_time_dependent_shape(std::span<const double> t, std::span<const double> values,
                                                   double T) {
    if (t.size() != values.size()) throw std::invalid_argument("fit_time_dependent_shape: length mismatch");
    double s11 = 0.0, s1r = 0.0, srr = 0.0, s1v = 0.0, srv = 0.0, svv = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(t[i] < T)) continue;
        const double r = 1.0 / std::sqrt(T - t[i]);
        s11 += 1.0;
        s1r += r;
        srr += r * r;
        s1v += values[i];
        srv += r * values[i];
        svv += values[i] * values[i];
        ++count;
    }
    if (count == 0) return {0.0, 0.0};
    auto residual = [&](double c, double cp) {
        return svv - 2.0 * (c * s1v + cp * srv) + c * c * s11 + 2.0 * c * cp * s1r + cp * cp * srr;
    };
    const double det = s11 * srr - s1r * s1r;
    if (det > 1e-14 * s11 * srr) {
        const double c = (srr * s1v - s1r * srv) / det;
        const double cp = (s11 * srv - s1r * s1v) / det;
        if (c >= 0.0 && cp >= 0.0) return {c, cp};
    }
    const double c_only = std::max(0.0, s1v / s11);
    const double cp_only = std::max(0.0, srv / srr);
    return residual(c_only, 0.0) <= residual(0.0, cp_only) ? std::pair{c_only, 0.0} : std::pair{0.0, cp_only};
}

ProjectionCalibration calibrate_projection(const ProblemSpec& problem, const SchemeConfig& cfg,
                                           std::size_t pilot_paths, double safety) {
    SchemeConfig pilot = cfg;
    pilot.projection_enabled = false;
    pilot.paths = std::min(cfg.paths, pilot_paths);
    const SolveResult run = solve(problem, pilot);
    ProjectionCalibration out;
    const auto& grid = run.grid;
    for (std::size_t k = 0; k + 1 < grid.num_steps(); ++k) {
        out.times.push_back(grid.time(k + 1));
        out.p99.push_back(run.solution.diagnostics(k).z_raw_p99);
    }
    const auto [c, cp] = fit_time_dependent_shape(out.times, out.p99, problem.T);
    out.C = c;
    out.C_prime = cp;
    out.params.M_z1 = safety * c;
    out.params.M_z2 = safety * cp;
    out.params.M_z3 = kInfinity;
    return out;
}

// ---------------------------------------------------------------------------
// Error functional
// ---------------------------------------------------------------------------

std::uint64_t evaluation_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x5EEDE7A1F00DULL); }

nlohmann::json ErrorReport::to_json() const {
    return {{"e_total", e_total}, {"e_Y", e_Y},     {"e_Z", z_available ? nlohmann::json(e_Z) : nlohmann::json()},
            {"e3", e3},           {"e1_q1", e1_q1}, {"e1_q2", e1_q2},
            {"e2_q1", e2_q1},     {"e2_q2", e2_q2}, {"se_Y", se_Y},
            {"se_Z", se_Z},       {"half_width", half_width},
            {"z_available", z_available},           {"argmax_step", argmax_step},
            {"eval_paths", eval_paths},             {"n", n},
            {"N", N},             {"eps", eps},     {"a", a},
            {"b", b},             {"K", K},         {"seed", seed},
            {"runtime_s", runtime_s}};
}

ErrorReport discretization_error(const DiscreteSolution& solution, const ProblemSpec& problem,
                                 const ReferenceSolution& reference, std::size_t eval_paths, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    if (eval_paths < 2) throw std::invalid_argument("discretization_error: need at least 2 evaluation paths");
    if (!reference.y) throw std::invalid_argument("discretization_error: reference has no Y evaluator");
    const TimeGrid& grid = solution.grid();
    const SdeModel& model = problem.model;
    const std::size_t d = model.dim;
    const std::size_t steps = grid.num_steps();
    const double T = grid.horizon();
    const double eps = solution.params.eps > 0.0 ? solution.params.eps : grid.switch_eps();
    const CounterRng rng(evaluation_seed(seed));
    const QuadratureRule& gl = unit_gauss_legendre3();
    const bool with_z = reference.has_z();

    std::vector<Eigen::MatrixXd> sigmas(steps);
    for (std::size_t k = 0; k < steps; ++k) sigmas[k] = model.diffusion(grid.time(k));

    std::vector<double> sum_y(steps + 1, 0.0), sum_y2(steps + 1, 0.0);
    double sum_z = 0.0, sum_z2 = 0.0, e1_1 = 0.0, e1_2 = 0.0, e2_1 = 0.0, e2_2 = 0.0;
    std::vector<double> states((steps + 1) * d), incs(steps * d);
    std::vector<double> zs(d), zr(d), zero(d, 0.0), bridged(3 * d);

    for (std::size_t p = 0; p < eval_paths; ++p) {
        simulate_euler_path(model, grid, rng, p, states, incs);
        double z_path = 0.0;
        double tail = 0.0;
        for (std::size_t k = 0; k <= steps; ++k) {
            const std::span<const double> x(states.data() + k * d, d);
            const double t = grid.time(k);
            const double ys = solution.y(k, x);
            const double diff = ys - reference.y(t, x);
            sum_y[k] += diff * diff;
            sum_y2[k] += diff * diff * diff * diff;
            if (k == steps) break;
            const double h = grid.step(k);
            solution.z(k, x, zs);
            if (t >= T - eps - 1e-14 * T) {
                tail += h * std::abs(problem.driver(t, x, ys, zs) - problem.driver(t, x, ys, zero));
            }
            if (!with_z) continue;
            bridge_states(model, sigmas[k], t, h, x, std::span<const double>(incs.data() + k * d, d), rng, p, k,
                          bridged);
            for (std::size_t j = 0; j < gl.size(); ++j) {
                reference.z(t + gl.nodes[j] * h, std::span<const double>(bridged.data() + j * d, d), zr);
                double dz = 0.0;
                for (std::size_t i = 0; i < d; ++i) dz += (zs[i] - zr[i]) * (zs[i] - zr[i]);
                z_path += gl.weights[j] * h * dz;
            }
        }
        sum_z += z_path;
        sum_z2 += z_path * z_path;
        const std::span<const double> xT(states.data() + steps * d, d);
        const double gd = solution.y(steps, xT) - problem.terminal(xT);
        e1_1 += gd * gd;
        e1_2 += gd * gd * gd * gd;
        e2_1 += tail * tail;
        e2_2 += tail * tail * tail * tail;
    }

    const double P = static_cast<double>(eval_paths);
    ErrorReport r;
    r.eval_paths = eval_paths;
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t k = 0; k <= steps; ++k) {
        const double m = sum_y[k] / P;
        if (m > best) {
            best = m;
            arg = k;
        }
    }
    r.e_Y = best;
    r.argmax_step = arg;
    const double var_y = std::max(0.0, sum_y2[arg] / P - best * best);
    r.se_Y = std::sqrt(var_y * P / (P - 1.0) / P);
    r.z_available = with_z;
    if (with_z) {
        r.e_Z = sum_z / P;
        const double var_z = std::max(0.0, sum_z2 / P - r.e_Z * r.e_Z);
        r.se_Z = std::sqrt(var_z * P / (P - 1.0) / P);
    } else {
        r.e_Z = std::numeric_limits<double>::quiet_NaN();
        r.se_Z = 0.0;
    }
    r.e3 = r.e_Y + (with_z ? r.e_Z : 0.0);
    r.e_total = r.e3;
    r.half_width = 1.96 * (r.se_Y + r.se_Z);
    r.e1_q1 = e1_1 / P;
    r.e1_q2 = std::sqrt(e1_2 / P);
    r.e2_q1 = e2_1 / P;
    r.e2_q2 = std::sqrt(e2_2 / P);
    const auto& sp = solution.params;
    r.n = sp.n;
    r.N = sp.N;
    r.eps = sp.eps;
    r.a = sp.a;
    r.b = sp.b;
    r.K = sp.K;
    r.seed = seed;
    r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace qbsde
