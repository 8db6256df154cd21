#include "qbsde/oracles.hpp"

#include "qbsde/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <stdexcept>

namespace qbsde {
namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

/// Nodes y_j and probability weights w_j of the law of x + s xi, plus the
/// standardized positions xi_j = (y_j - x) / s.
struct GaussianNodes {
    std::vector<double> y, w, xi;
};

class GaussianSmoother {
public:
    GaussianSmoother(std::vector<double> breakpoints, const SmoothingOptions& options)
        : breakpoints_(std::move(breakpoints)), options_(options) {
        if (breakpoints_.empty()) {
            if (options.quad_order < 16) throw std::invalid_argument("reference: quad_order must be at least 16");
            gh_ = gauss_hermite(options.quad_order);
        }
    }

    void nodes(double x, double s, GaussianNodes& out) const {
        out.y.clear();
        out.w.clear();
        out.xi.clear();
        if (breakpoints_.empty()) {
            for (std::size_t j = 0; j < gh_.size(); ++j) {
                out.y.push_back(x + s * gh_.nodes[j]);
                out.w.push_back(gh_.weights[j]);
                out.xi.push_back(gh_.nodes[j]);
            }
            return;
        }
        GradedOptions graded;
        graded.order = options_.panel_order;
        graded.levels = options_.levels;
        graded.max_panel = s;
        const double a = x - options_.reach * s;
        const double b = x + options_.reach * s;
        std::vector<double> ys, ws;
        append_graded_nodes(a, b, breakpoints_, graded, ys, ws);
        double total = 0.0;
        for (std::size_t j = 0; j < ys.size(); ++j) {
            const double z = (ys[j] - x) / s;
            const double w = ws[j] * kInvSqrt2Pi * std::exp(-0.5 * z * z) / s;
            out.y.push_back(ys[j]);
            out.w.push_back(w);
            out.xi.push_back(z);
            total += w;
        }
        for (double& w : out.w) w /= total;
    }

private:
    std::vector<double> breakpoints_;
    SmoothingOptions options_;
    QuadratureRule gh_;
};

struct ScalarTerminal {
    TerminalFn g;
    double operator()(double y) const { return g(std::span<const double>(&y, 1)); }
};

double smoothing_scale(double sigma, double tau) {
    // At tau = 0 the law degenerates; a vanishing scale keeps Z defined.
    return std::abs(sigma) * std::sqrt(std::max(tau, 1e-28));
}

}  // namespace

ReferenceSolution cole_hopf_reference(double gamma, const TerminalCondition& g, double sigma, double T,
                                      std::size_t quad_order) {
    SmoothingOptions options;
    options.quad_order = quad_order;
    return cole_hopf_reference(gamma, g, sigma, T, options);
}

ReferenceSolution cole_hopf_reference(double gamma, const TerminalCondition& g, double sigma, double T,
                                      const SmoothingOptions& options) {
    if (gamma == 0.0 || !std::isfinite(gamma)) {
        throw std::invalid_argument("cole_hopf_reference: gamma must be nonzero (use linear_reference)");
    }
    if (!(T > 0.0)) throw std::invalid_argument("cole_hopf_reference: T must be positive");
    if (!g.g) throw std::invalid_argument("cole_hopf_reference: missing terminal condition");
    auto smoother = std::make_shared<const GaussianSmoother>(g.breakpoints, options);
    const ScalarTerminal terminal{g.g};

    // log E[exp(gamma g)] and E[exp(gamma g) xi] / E[exp(gamma g)] on shared nodes.
    auto moments = [smoother, terminal, gamma, sigma, T](double t, double x, bool want_score) {
        thread_local GaussianNodes nodes;
        thread_local std::vector<double> exponent;
        const double s = smoothing_scale(sigma, T - t);
        smoother->nodes(x, s, nodes);
        exponent.resize(nodes.y.size());
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nodes.y.size(); ++j) {
            exponent[j] = gamma * terminal(nodes.y[j]);
            peak = std::max(peak, exponent[j]);
        }
        double v = 0.0, v1 = 0.0;
        for (std::size_t j = 0; j < nodes.y.size(); ++j) {
            const double e = nodes.w[j] * std::exp(exponent[j] - peak);
            v += e;
            if (want_score) v1 += e * nodes.xi[j];
        }
        return std::array<double, 3>{peak + std::log(v), want_score ? v1 / v : 0.0, s};
    };

    ReferenceSolution ref;
    ref.dim = 1;
    ref.T = T;
    ref.method = "quadrature";
    ref.y = [moments, terminal, gamma, T](double t, std::span<const double> x) {
        if (t >= T) return terminal(x[0]);
        return moments(t, x[0], false)[0] / gamma;
    };
    ref.z = [moments, gamma, sigma](double t, std::span<const double> x, std::span<double> out) {
        const auto m = moments(t, x[0], true);
        out[0] = sigma * m[1] / (m[2] * gamma);
    };
    return ref;
}

ReferenceSolution linear_reference(const TerminalCondition& g, double sigma, double T, std::size_t quad_order) {
    SmoothingOptions options;
    options.quad_order = quad_order;
    return linear_reference(g, sigma, T, options);
}

ReferenceSolution linear_reference(const TerminalCondition& g, double sigma, double T,
                                   const SmoothingOptions& options) {
    if (!(T > 0.0)) throw std::invalid_argument("linear_reference: T must be positive");
    if (!g.g) throw std::invalid_argument("linear_reference: missing terminal condition");
    auto smoother = std::make_shared<const GaussianSmoother>(g.breakpoints, options);
    const ScalarTerminal terminal{g.g};
    auto moments = [smoother, terminal, sigma, T](double t, double x) {
        thread_local GaussianNodes nodes;
        const double s = smoothing_scale(sigma, T - t);
        smoother->nodes(x, s, nodes);
        double v = 0.0, v1 = 0.0;
        for (std::size_t j = 0; j < nodes.y.size(); ++j) {
            const double e = nodes.w[j] * terminal(nodes.y[j]);
            v += e;
            v1 += e * nodes.xi[j];
        }
        return std::array<double, 3>{v, v1, s};
    };
    ReferenceSolution ref;
    ref.dim = 1;
    ref.T = T;
    ref.method = "quadrature";
    ref.y = [moments, terminal, T](double t, std::span<const double> x) {
        if (t >= T) return terminal(x[0]);
        return moments(t, x[0])[0];
    };
    ref.z = [moments, sigma](double t, std::span<const double> x, std::span<double> out) {
        const auto m = moments(t, x[0]);
        out[0] = sigma * m[1] / m[2];
    };
    return ref;
}

// ---------------------------------------------------------------------------

double zhang_terminal(double x) {
    if (x == 0.0) return 0.0;
    return std::atan(std::copysign(std::pow(std::abs(x), 0.25), x));
}

double zhang_variance(double t) {
    if (t >= 1.0) return 0.0;
    const double r = 1.0 - t;
    return r * r * r / 3.0;
}

double zhang_value(double t, double x) {
    if (t >= 1.0) return zhang_terminal(x);
    const double s = std::sqrt(zhang_variance(t));
    auto integrand = [s, x](double z) { return zhang_terminal(x + s * z) * kInvSqrt2Pi * std::exp(-0.5 * z * z); };
    // Split where the argument of g crosses zero.
    const double z0 = std::clamp(-x / s, -12.0, 12.0);
    return integrate_adaptive(integrand, -12.0, z0) + integrate_adaptive(integrand, z0, 12.0);
}

double zhang_gradient(double t) {
    if (!(t < 1.0)) throw std::invalid_argument("zhang_gradient: t must be < 1");
    const double s = std::sqrt(zhang_variance(t));
    // The integrand z g(s z) phi(z) is even.
    auto integrand = [s](double z) { return z * zhang_terminal(s * z) * kInvSqrt2Pi * std::exp(-0.5 * z * z); };
    const double integral = 2.0 * integrate_adaptive(integrand, 0.0, 12.0, 1e-15, 1e-13);
    return (1.0 - t) * integral / s;
}

// ---------------------------------------------------------------------------

BoundedZ2d bounded_z_2d_default() {
    BoundedZ2d ex;
    ex.h = [](double s) { return s < 1.0 ? 1.0 - s : 0.0; };
    ex.g_tilde = [](double x) {
        if (x == 0.0) return 0.0;
        return std::atan(std::copysign(std::sqrt(std::abs(x)), x));
    };
    ex.g_breakpoints = {0.0};
    ex.g_sup = 0.5 * M_PI;
    ex.a = [](double t) {
        if (t >= 1.0) return 0.0;
        return 0.5 * (1.0 - t) * (1.0 - t);
    };
    ex.a_square_integral = [](double t) {
        if (t >= 1.0) return 0.0;
        return std::pow(1.0 - t, 5) / 20.0;
    };
    return ex;
}

double bounded_z_2d_a(const BoundedZ2d& ex, double t) {
    if (t >= 1.0) return 0.0;
    if (ex.a) return ex.a(t);
    return integrate_adaptive(ex.h, t, 1.0);
}

double bounded_z_2d_variance(const BoundedZ2d& ex, double t) {
    if (t >= 1.0) return 0.0;
    const double a = bounded_z_2d_a(ex, t);
    double tail;
    if (ex.a_square_integral) {
        tail = ex.a_square_integral(t);
    } else {
        tail = integrate_adaptive(
            [&ex](double s) {
                const double as = bounded_z_2d_a(ex, s);
                return as * as;
            },
            t, 1.0, 1e-14, 1e-10);
    }
    return a * a * t + tail;
}

std::array<double, 2> bounded_z_2d(double t, std::span<const double> x, const BoundedZ2d& ex) {
    if (!(t < 1.0)) throw std::invalid_argument("bounded_z_2d: t must be < 1");
    if (x.size() != 2) throw std::invalid_argument("bounded_z_2d: x must be two-dimensional");
    const double a = bounded_z_2d_a(ex, t);
    const double s = std::sqrt(bounded_z_2d_variance(ex, t));
    const double m = x[1] + a * x[0];
    auto integrand = [&](double z) { return ex.g_tilde(s * z + m) * z * kInvSqrt2Pi * std::exp(-0.5 * z * z); };
    std::vector<double> cuts = {-12.0};
    for (double b : ex.g_breakpoints) {
        const double z = (b - m) / s;
        if (z > -12.0 && z < 12.0) cuts.push_back(z);
    }
    cuts.push_back(12.0);
    std::sort(cuts.begin(), cuts.end());
    double integral = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        integral += integrate_adaptive(integrand, cuts[i], cuts[i + 1], 1e-15, 1e-12);
    }
    const double du_dx2 = integral / s;
    return {a * du_dx2, du_dx2};
}

SdeModel bounded_z_2d_model(const BoundedZ2d& ex, std::vector<double> x0) {
    if (x0.size() != 2) throw std::invalid_argument("bounded_z_2d_model: x0 must be two-dimensional");
    SdeModel model;
    model.dim = 2;
    model.x0 = std::move(x0);
    auto h = ex.h;
    model.drift = [h](double t, std::span<const double> x, std::span<double> out) {
        out[0] = 0.0;
        out[1] = h(t) * x[0];
    };
    model.diffusion = [](double) {
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
        s(0, 0) = 1.0;
        return s;
    };
    double h_max = 0.0;
    for (int i = 0; i <= 200; ++i) h_max = std::max(h_max, std::abs(h(2.0 * i / 200.0)));
    model.constants.M_b = h_max;
    model.constants.K_b = h_max;
    model.constants.M_sigma = 1.0;
    model.constants.K_sigma = 0.0;
    return model;
}

void write_curve_csv(std::ostream& out, const std::string& value_name, std::span<const double> t,
                     std::span<const double> values) {
    if (t.size() != values.size()) throw std::invalid_argument("write_curve_csv: length mismatch");
    out << "t," << value_name << "\n";
    char buf[64];
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,", t[i]);
        out << buf;
        std::snprintf(buf, sizeof buf, "%.17g\n", values[i]);
        out << buf;
    }
}

}  // namespace qbsde
