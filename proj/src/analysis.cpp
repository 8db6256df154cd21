#include "qbsde/analysis.hpp"

#include "qbsde/quadrature.hpp"
#include "qbsde/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace qbsde {
namespace {

double percentile99(std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const auto idx = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
    return values[idx];
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

// ---------------------------------------------------------------------------

nlohmann::json BoundReport::to_json() const {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& item : violations) v.push_back({{"t", item.t}, {"z_norm", item.z_norm}, {"bound", item.bound}});
    return {{"holds", holds}, {"samples", samples}, {"C", C}, {"C_prime", C_prime}, {"violations", v}};
}

void BoundReport::write_csv(std::ostream& out) const {
    out << "t,z_norm,bound\n";
    for (const auto& v : violations) out << fmt(v.t) << ',' << fmt(v.z_norm) << ',' << fmt(v.bound) << '\n';
}

BoundReport check_time_dependent_bound(std::span<const ZSample> samples, double T, double C, double C_prime) {
    BoundReport report;
    report.C = C;
    report.C_prime = C_prime;
    report.samples = samples.size();
    for (const auto& s : samples) {
        if (!(s.t < T)) throw std::invalid_argument("check_time_dependent_bound: sample times must be < T");
        const double bound = C + C_prime / std::sqrt(T - s.t);
        if (s.z_norm > bound) report.violations.push_back({s.t, s.z_norm, bound});
    }
    report.holds = report.violations.empty();
    return report;
}

std::pair<double, double> fit_time_dependent_envelope(std::span<const ZSample> samples, double T) {
    if (samples.empty()) throw std::invalid_argument("fit_time_dependent_envelope: no samples");
    std::vector<double> t, v;
    t.reserve(samples.size());
    v.reserve(samples.size());
    for (const auto& s : samples) {
        if (!(s.t < T)) throw std::invalid_argument("fit_time_dependent_envelope: sample times must be < T");
        t.push_back(s.t);
        v.push_back(s.z_norm);
    }
    auto [C, C_prime] = fit_time_dependent_shape(t, v, T);
    if (C <= 0.0 && C_prime <= 0.0) C = 1.0;
    double scale = 0.0;
    for (const auto& s : samples) scale = std::max(scale, s.z_norm / (C + C_prime / std::sqrt(T - s.t)));
    return {scale * C, scale * C_prime};
}

// ---------------------------------------------------------------------------

BmoEstimate estimate_bmo_norm(const StepZFn& z, const PathEnsemble& ensemble, const RegressionBasis& basis) {
    const TimeGrid& grid = ensemble.grid();
    const std::size_t P = ensemble.paths();
    const std::size_t d = ensemble.dim();
    const std::size_t steps = grid.num_steps();
    BmoEstimate est;
    est.step_p99.assign(steps, 0.0);
    Eigen::VectorXd tail = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
    std::vector<double> zk(d), fitted(P);
    for (std::size_t k = steps; k-- > 0;) {
        const auto X = ensemble.states_at(k);
        const double h = grid.step(k);
        for (std::size_t p = 0; p < P; ++p) {
            const auto row = X.row(static_cast<Eigen::Index>(p));
            z(k, std::span<const double>(row.data(), d), zk);
            tail(static_cast<Eigen::Index>(p)) += h * squared_norm(zk);
        }
        const RegressionFit fit = fit_conditional_expectation(X, tail, basis, k);
        for (std::size_t p = 0; p < P; ++p) {
            const auto row = X.row(static_cast<Eigen::Index>(p));
            fitted[p] = std::max(0.0, fit(std::span<const double>(row.data(), d)));
        }
        est.step_p99[k] = percentile99(fitted);
    }
    const auto it = std::max_element(est.step_p99.begin(), est.step_p99.end());
    if (it != est.step_p99.end()) {
        est.argmax_step = static_cast<std::size_t>(it - est.step_p99.begin());
        est.value = std::sqrt(*it);
    }
    return est;
}

BmoEstimate estimate_bmo_norm(const DiscreteSolution& solution, const PathEnsemble& ensemble,
                              const RegressionBasis& basis) {
    if (solution.grid().num_steps() != ensemble.grid().num_steps()) {
        throw std::invalid_argument("estimate_bmo_norm: solution and ensemble grids differ");
    }
    return estimate_bmo_norm(
        [&solution](std::size_t k, std::span<const double> x, std::span<double> out) { solution.z(k, x, out); },
        ensemble, basis);
}

// ---------------------------------------------------------------------------

nlohmann::json RegularityStat::to_json() const {
    return {{"value", value}, {"delta_n", delta_n}, {"contributions", contributions}};
}

RegularityStat path_regularity_statistic(const ZFn& z_ref, const TimeGrid& grid, const SdeModel& model,
                                         std::size_t paths, std::uint64_t seed, const RegressionBasis& basis) {
    const PathEnsemble ensemble = simulate_euler(model, grid, paths, seed);
    const CounterRng rng(seed);
    const QuadratureRule& gl = unit_gauss_legendre3();
    const std::size_t d = model.dim;
    const std::size_t steps = grid.num_steps();
    const std::size_t q = gl.size();

    RegularityStat stat;
    stat.delta_n = max_step(grid);
    stat.contributions.assign(steps, 0.0);
    std::vector<double> bridged(q * d), z_nodes(paths * q * d);
    Eigen::MatrixXd averages(static_cast<Eigen::Index>(paths), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = grid.time(k);
        const double h = grid.step(k);
        const Eigen::MatrixXd sigma = model.diffusion(t);
        for (std::size_t p = 0; p < paths; ++p) {
            bridge_states(model, sigma, t, h, ensemble.state(k, p), ensemble.increment(k, p), rng, p, k, bridged);
            double* zp = z_nodes.data() + p * q * d;
            for (std::size_t j = 0; j < q; ++j) {
                z_ref(t + gl.nodes[j] * h, std::span<const double>(bridged.data() + j * d, d),
                      std::span<double>(zp + j * d, d));
            }
            for (std::size_t l = 0; l < d; ++l) {
                double avg = 0.0;
                for (std::size_t j = 0; j < q; ++j) avg += gl.weights[j] * zp[j * d + l];
                averages(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(l)) = avg;
            }
        }
        const auto X = ensemble.states_at(k);
        const LeastSquaresProjector projector(ResolvedBasis::resolve(basis, X), X, nullptr, k);
        const Eigen::MatrixXd coefs = projector.project(averages);
        double sum = 0.0;
        for (std::size_t p = 0; p < paths; ++p) {
            const double* zp = z_nodes.data() + p * q * d;
            double local = 0.0;
            for (std::size_t j = 0; j < q; ++j) {
                double dz = 0.0;
                for (std::size_t l = 0; l < d; ++l) {
                    const double diff = zp[j * d + l] - projector.fitted_value(coefs, l, p);
                    dz += diff * diff;
                }
                local += gl.weights[j] * dz;
            }
            sum += h * local;
        }
        stat.contributions[k] = sum / static_cast<double>(paths);
        stat.value += stat.contributions[k];
    }
    return stat;
}

// ---------------------------------------------------------------------------

nlohmann::json AssumptionReport::to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& p : failing) f.push_back({{"t", p.t}, {"x", p.x}, {"residual", finite_or_null(p.residual)}});
    return {{"holds", holds},
            {"criterion", criterion},
            {"lambda", lambda ? finite_or_null(*lambda) : nlohmann::json()},
            {"samples", samples},
            {"failing", f}};
}

void AssumptionReport::write_csv(std::ostream& out) const {
    std::size_t d = 0;
    for (const auto& p : failing) d = std::max(d, p.x.size());
    out << "t";
    for (std::size_t i = 0; i < d; ++i) out << ",x" << (i + 1);
    out << ",residual\n";
    for (const auto& p : failing) {
        out << fmt(p.t);
        for (std::size_t i = 0; i < d; ++i) out << ',' << (i < p.x.size() ? fmt(p.x[i]) : std::string());
        out << ',' << fmt(p.residual) << '\n';
    }
}

JacobianFn numerical_drift_jacobian(const SdeModel& model, double step) {
    return [model, step](double t, std::span<const double> x) {
        const std::size_t d = model.dim;
        Eigen::MatrixXd jac(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end()), bp(d), bm(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double hj = step * std::max(1.0, std::abs(x[j]));
            xp[j] = x[j] + hj;
            xm[j] = x[j] - hj;
            model.drift(t, xp, bp);
            model.drift(t, xm, bm);
            for (std::size_t i = 0; i < d; ++i) {
                jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (bp[i] - bm[i]) / (2.0 * hj);
            }
            xp[j] = xm[j] = x[j];
        }
        return jac;
    };
}

AssumptionReport check_hx1(const SdeModel& model, const JacobianFn& nabla_b, std::span<const SamplePoint> points,
                           const Hx1Options& options) {
    AssumptionReport report;
    report.samples = points.size();
    const auto& c = model.constants;
    if (c.M_sigma_inv) {
        report.criterion = "invertible";
        report.holds = true;
        report.lambda = *c.M_sigma_inv * (c.M_sigma * c.K_b + c.K_sigma);
        return report;
    }
    report.criterion = "(ii)+(v)";
    const std::size_t d = model.dim;
    const CounterRng rng(options.seed);
    std::vector<double> eta(d);
    double lambda = 0.0;
    for (std::size_t idx = 0; idx < points.size(); ++idx) {
        const auto& pt = points[idx];
        const Eigen::MatrixXd sigma = model.diffusion(pt.t);
        const Eigen::MatrixXd jac = nabla_b(pt.t, pt.x);
        const Eigen::MatrixXd st = sigma.transpose();
        const Eigen::MatrixXd map = st * jac.transpose();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(st, Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        const double smax = sv.size() > 0 ? sv.maxCoeff() : 0.0;
        const double scale = std::max(1.0, smax * jac.norm());
        double worst = 0.0;
        for (Eigen::Index i = 0; i < svd.matrixV().cols(); ++i) {
            const bool null = i >= sv.size() || !(sv(i) > options.tol * smax);
            if (!null) continue;
            worst = std::max(worst, (map * svd.matrixV().col(i)).norm());
        }
        if (!(worst < options.tol * scale)) report.failing.push_back({pt.t, pt.x, worst});

        for (std::size_t j = 0; j < options.eta_samples; ++j) {
            rng.normals(Stream::sampling, idx, j, eta);
            const Eigen::Map<const Eigen::VectorXd> e(eta.data(), static_cast<Eigen::Index>(d));
            const Eigen::VectorXd unit = e / e.norm();
            const Eigen::VectorXd u = st * unit;
            const double un = u.norm();
            if (!(un > options.tol)) continue;
            lambda = std::max(lambda, std::abs(u.dot(map * unit)) / (un * un));
        }
    }
    report.holds = report.failing.empty();
    if (report.holds) report.lambda = lambda;
    return report;
}

AssumptionReport check_hx1_doubleprime(const SdeModel& model, const FactorAFn& A, const FactorBFn& B,
                                       std::span<const SamplePoint> points, double tol) {
    AssumptionReport report;
    report.criterion = "(HX1'')";
    report.samples = points.size();
    const std::size_t d = model.dim;
    const Eigen::MatrixXd sigma = model.diffusion(0.0);
    std::vector<double> y(d), b(d), a(d), bb(d);
    for (const auto& pt : points) {
        if (!model.diffusion(pt.t).isApprox(sigma, 1e-14) && !(model.diffusion(pt.t) - sigma).isZero(1e-14)) {
            throw std::invalid_argument("check_hx1_doubleprime: sigma must be time-independent");
        }
        const Eigen::Map<const Eigen::VectorXd> x(pt.x.data(), static_cast<Eigen::Index>(d));
        Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(d)) = sigma * x;
        model.drift(pt.t, y, b);
        A(pt.t, pt.x, a);
        B(pt.t, bb);
        const Eigen::VectorXd sa = sigma * Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(d));
        double r2 = 0.0, b2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double r = b[i] - sa(static_cast<Eigen::Index>(i)) - bb[i];
            r2 += r * r;
            b2 += b[i] * b[i];
        }
        const double residual = std::sqrt(r2);
        if (!(residual < tol * std::max(1.0, std::sqrt(b2)))) report.failing.push_back({pt.t, pt.x, residual});
    }
    report.holds = report.failing.empty();
    return report;
}

std::vector<SamplePoint> sample_points(double T, const Box& box, std::size_t count, std::uint64_t seed) {
    const CounterRng rng(seed);
    const std::size_t d = box.dim();
    std::vector<SamplePoint> out(count);
    std::vector<double> u(d + 1);
    for (std::size_t i = 0; i < count; ++i) {
        rng.uniforms(Stream::sampling, i, 0, u);
        out[i].t = T * u[0];
        out[i].x.resize(d);
        for (std::size_t l = 0; l < d; ++l) out[i].x[l] = box.lower[l] + box.width(l) * u[l + 1];
    }
    return out;
}

}  // namespace qbsde
