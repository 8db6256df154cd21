#include "qbsde/problem.hpp"

#include "qbsde/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qbsde {
namespace {

double operator_norm(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

double euclidean(std::span<const double> v) { return std::sqrt(squared_norm(v)); }

// Fills `out` with uniform samples from the box.
void sample_box(const CounterRng& rng, const Box& box, std::uint64_t index, std::uint64_t slot,
                std::span<double> out) {
    rng.uniforms(Stream::sampling, index, slot, out);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = box.lower[i] + out[i] * box.width(i);
    }
}

void record(ConstantCheck& check, double lhs, double rhs) {
    ++check.samples;
    const double slack = 1e-12 * (1.0 + std::abs(rhs));
    const double ratio = rhs > 0.0 ? lhs / rhs : (lhs > slack ? kInfinity : 0.0);
    check.worst_ratio = std::max(check.worst_ratio, ratio);
    if (lhs > rhs + slack) {
        ++check.violations;
        check.holds = false;
    }
}

}  // namespace

void SdeModel::validate() const {
    if (dim == 0) throw std::invalid_argument("SdeModel: dimension must be positive");
    if (x0.size() != dim) throw std::invalid_argument("SdeModel: x0 has the wrong dimension");
    if (!drift) throw std::invalid_argument("SdeModel: missing drift");
    if (!diffusion) throw std::invalid_argument("SdeModel: missing diffusion");
}

void ZBoundParams::validate() const {
    if (std::isnan(M_z1) || std::isnan(M_z2) || std::isnan(M_z3) || M_z1 < 0.0 || M_z2 < 0.0 || M_z3 < 0.0) {
        throw std::invalid_argument("ZBoundParams: constants must be nonnegative");
    }
}

SchemeParams SchemeParams::from_selection(double T, std::size_t n, const ParameterSelection& selection, double eta) {
    SchemeParams p;
    p.n = n;
    p.a = selection.a;
    p.b = selection.b;
    p.K = selection.K;
    p.rate = selection.rate;
    p.eta = eta;
    const double dn = static_cast<double>(n);
    p.N = std::pow(dn, selection.b);
    p.eps = T * std::pow(dn, -selection.a);
    p.validate(T);
    return p;
}

void SchemeParams::validate(double T) const {
    if (n == 0) throw std::invalid_argument("SchemeParams: n must be positive");
    if (!(eps > 0.0) || !(eps < T)) throw std::invalid_argument("SchemeParams: eps must lie in (0, T)");
    if (!(N >= 1.0)) throw std::invalid_argument("SchemeParams: N must be at least 1");
}

QuadraticDriver truncate_driver(const QuadraticDriver& driver, double T, double eps) {
    if (!(eps > 0.0) || !(eps < T)) throw std::invalid_argument("truncate_driver: eps must lie in (0, T)");
    QuadraticDriver out = driver;
    const double switch_time = T - eps;
    out.f = [f = driver.f, switch_time](double s, std::span<const double> x, double y, std::span<const double> z) {
        if (s <= switch_time) return f(s, x, y, z);
        std::array<double, 16> small{};
        if (z.size() <= small.size()) return f(s, x, y, std::span<const double>(small.data(), z.size()));
        const std::vector<double> zeros(z.size(), 0.0);
        return f(s, x, y, zeros);
    };
    return out;
}

double projection_radius(double s, double T, const ZBoundParams& zp) {
    if (s >= T) return kInfinity;
    if (std::isinf(zp.M_z1)) return kInfinity;
    if (zp.M_z2 == 0.0) return zp.M_z1;
    return zp.M_z1 + zp.M_z2 / std::sqrt(T - s);
}

bool project_z_inplace(std::span<double> z, double radius) {
    if (radius < 0.0) throw std::invalid_argument("project_z: radius must be nonnegative");
    if (std::isinf(radius)) return false;
    const double norm = euclidean(z);
    if (norm <= radius) return false;
    const double scale = radius / norm;
    for (double& c : z) c *= scale;
    return true;
}

std::vector<double> project_z(std::span<const double> z, double radius) {
    std::vector<double> out(z.begin(), z.end());
    project_z_inplace(out, radius);
    return out;
}

// ---------------------------------------------------------------------------

MollifiedTerminal::MollifiedTerminal(const TerminalCondition& term, double N, const Box& domain,
                                     std::size_t resolution)
    : g_(term.g), N_(N), domain_(domain), resolution_(resolution) {
    if (!g_) throw std::invalid_argument("mollify_terminal: terminal condition has no evaluator");
    if (!(N > 0.0)) throw std::invalid_argument("mollify_terminal: N must be positive");
    if (domain_.empty()) throw std::invalid_argument("mollify_terminal: empty search box");
    if (resolution < 2) throw std::invalid_argument("mollify_terminal: resolution must be at least 2");
    if (term.regularity == Regularity::lipschitz && term.K_g <= N) {
        identity_ = true;
        return;
    }
    const std::size_t d = domain_.dim();
    if (d == 1) {
        nodes_.resize(resolution);
        g_values_.resize(resolution);
        const double du = domain_.width(0) / static_cast<double>(resolution - 1);
        for (std::size_t j = 0; j < resolution; ++j) {
            nodes_[j] = j + 1 == resolution ? domain_.upper[0] : domain_.lower[0] + du * static_cast<double>(j);
            const double u = nodes_[j];
            g_values_[j] = g_(std::span<const double>(&u, 1));
        }
        forward_.resize(resolution);
        backward_.resize(resolution);
        forward_arg_.resize(resolution);
        backward_arg_.resize(resolution);
        forward_[0] = g_values_[0];
        forward_arg_[0] = 0;
        for (std::size_t j = 1; j < resolution; ++j) {
            const double carried = forward_[j - 1] + N_ * (nodes_[j] - nodes_[j - 1]);
            if (carried < g_values_[j]) {
                forward_[j] = carried;
                forward_arg_[j] = forward_arg_[j - 1];
            } else {
                forward_[j] = g_values_[j];
                forward_arg_[j] = j;
            }
        }
        backward_[resolution - 1] = g_values_[resolution - 1];
        backward_arg_[resolution - 1] = resolution - 1;
        for (std::size_t j = resolution - 1; j-- > 0;) {
            const double carried = backward_[j + 1] + N_ * (nodes_[j + 1] - nodes_[j]);
            if (carried < g_values_[j]) {
                backward_[j] = carried;
                backward_arg_[j] = backward_arg_[j + 1];
            } else {
                backward_[j] = g_values_[j];
                backward_arg_[j] = j;
            }
        }
        envelope_.resize(resolution);
        for (std::size_t j = 0; j < resolution; ++j) envelope_[j] = std::min(forward_[j], backward_[j]);
        return;
    }
    double total = 1.0;
    for (std::size_t i = 0; i < d; ++i) total *= static_cast<double>(resolution);
    if (total > 2.0e7) throw std::invalid_argument("mollify_terminal: search grid too large for brute force");
    const auto count = static_cast<std::size_t>(total);
    g_values_.resize(count);
    std::vector<double> u(d);
    for (std::size_t flat = 0; flat < count; ++flat) {
        std::size_t rest = flat;
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t j = rest % resolution;
            rest /= resolution;
            u[i] = domain_.lower[i] + domain_.width(i) * static_cast<double>(j) / static_cast<double>(resolution - 1);
        }
        g_values_[flat] = g_(u);
    }
}

MollifiedTerminal::Evaluation MollifiedTerminal::evaluate(std::span<const double> x) const {
    if (identity_) return {g_(x), false};
    if (x.size() != domain_.dim()) throw std::invalid_argument("MollifiedTerminal: wrong input dimension");
    if (domain_.dim() == 1) return evaluate_1d(x[0]);
    return evaluate_nd(x);
}

MollifiedTerminal::Evaluation MollifiedTerminal::evaluate_1d(double x) const {
    const std::size_t last = nodes_.size() - 1;
    double value;
    std::size_t arg;
    if (x <= nodes_.front()) {
        value = backward_[0] + N_ * (nodes_.front() - x);
        arg = backward_arg_[0];
    } else if (x >= nodes_.back()) {
        value = forward_[last] + N_ * (x - nodes_.back());
        arg = forward_arg_[last];
    } else {
        const double du = domain_.width(0) / static_cast<double>(last);
        auto j = static_cast<std::size_t>((x - nodes_.front()) / du);
        j = std::min(j, last - 1);
        while (j > 0 && nodes_[j] > x) --j;
        while (j + 1 < last && nodes_[j + 1] < x) ++j;
        const double left = forward_[j] + N_ * (x - nodes_[j]);
        const double right = backward_[j + 1] + N_ * (nodes_[j + 1] - x);
        if (left <= right) {
            value = left;
            arg = forward_arg_[j];
        } else {
            value = right;
            arg = backward_arg_[j + 1];
        }
    }
    return {value, arg == 0 || arg == last};
}

MollifiedTerminal::Evaluation MollifiedTerminal::evaluate_nd(std::span<const double> x) const {
    const std::size_t d = domain_.dim();
    const std::size_t r = resolution_;
    double best = kInfinity;
    std::size_t best_flat = 0;
    std::vector<double> u(d);
    for (std::size_t flat = 0; flat < g_values_.size(); ++flat) {
        std::size_t rest = flat;
        double dist2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t j = rest % r;
            rest /= r;
            const double ui = domain_.lower[i] + domain_.width(i) * static_cast<double>(j) / static_cast<double>(r - 1);
            dist2 += (x[i] - ui) * (x[i] - ui);
        }
        const double candidate = g_values_[flat] + N_ * std::sqrt(dist2);
        if (candidate < best) {
            best = candidate;
            best_flat = flat;
        }
    }
    bool boundary = false;
    std::size_t rest = best_flat;
    for (std::size_t i = 0; i < d; ++i) {
        const std::size_t j = rest % r;
        rest /= r;
        boundary = boundary || j == 0 || j + 1 == r;
    }
    return {best, boundary};
}

MollifiedTerminal mollify_terminal(const TerminalCondition& term, double N, const Box& domain,
                                   std::size_t resolution) {
    return MollifiedTerminal(term, N, domain, resolution);
}

std::size_t suggested_mollifier_resolution(const TerminalCondition& term, double N, const Box& domain,
                                           double fraction, std::size_t max_resolution) {
    if (domain.empty()) throw std::invalid_argument("suggested_mollifier_resolution: empty box");
    double width = 0.0;
    for (std::size_t i = 0; i < domain.dim(); ++i) width = std::max(width, domain.width(i));
    double du;
    if (term.regularity == Regularity::holder && term.alpha < 1.0) {
        const double alpha = term.alpha;
        const double K = std::max(term.K_g, 1e-12);
        const double target = (1.0 - alpha) * std::pow(alpha, alpha / (1.0 - alpha)) *
                              std::pow(K, 1.0 / (1.0 - alpha)) * std::pow(N, -alpha / (1.0 - alpha));
        // Gridding u moves g by at most K (du/2)^alpha and the cone by N du/2.
        const double holder_part = 2.0 * std::pow(0.5 * fraction * target / K, 1.0 / alpha);
        const double cone_part = fraction * target / N;
        du = std::min(holder_part, cone_part);
    } else {
        du = fraction * std::max(term.M_g, 1e-3) / (N + std::max(term.K_g, 0.0));
    }
    const double cells = std::ceil(width / du);
    std::size_t cap = max_resolution;
    if (domain.dim() > 1) cap = std::min<std::size_t>(cap, 201);
    if (!std::isfinite(cells) || cells + 1.0 > static_cast<double>(cap)) return cap;
    return std::max<std::size_t>(2, static_cast<std::size_t>(cells) + 1);
}

double uniform_z_bound(const SdeModel& model, const QuadraticDriver& driver, double K_g, double T) {
    const auto& c = model.constants;
    const auto& fc = driver.constants;
    return std::exp((2.0 * c.K_b + fc.K_fy) * T) * c.M_sigma * (K_g + T * fc.K_fx);
}

ParameterSelection select_scheme_parameters_for_K(double alpha, double K) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("select_scheme_parameters: alpha must lie in (0, 1)");
    }
    if (!(K >= 0.0) || !std::isfinite(K)) throw std::invalid_argument("select_scheme_parameters: K must be >= 0");
    ParameterSelection s;
    s.K = K;
    const double denominator = (2.0 - alpha) * (2.0 + K) - 2.0 + 2.0 * alpha;
    s.b = (1.0 - alpha) / denominator;
    s.a = (1.0 + 2.0 * s.b) / (2.0 + K);
    s.rate = 2.0 * alpha / denominator;
    return s;
}

ParameterSelection select_scheme_parameters(double alpha, double L_fz, double M_z2, double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("select_scheme_parameters: eta must be positive");
    const double K = 4.0 * (1.0 + eta) * L_fz * L_fz * M_z2 * M_z2;
    return select_scheme_parameters_for_K(alpha, K);
}

double reduced_tail_exponent(const ParameterSelection& selection) { return 1.0 - selection.a - 2.0 * selection.b; }

double a_priori_y_bound(const QuadraticDriver& driver, const TerminalCondition& term, double T) {
    return std::exp(driver.constants.K_fy * T) * (term.M_g + T * driver.constants.M_f);
}

// ---------------------------------------------------------------------------

std::vector<ConstantCheck> check_sde_constants(const SdeModel& model, double T, const Box& box, std::size_t samples,
                                               std::uint64_t seed) {
    model.validate();
    if (box.dim() != model.dim) throw std::invalid_argument("check_sde_constants: box dimension mismatch");
    const CounterRng rng(seed);
    const auto& c = model.constants;
    ConstantCheck growth{"drift growth M_b"}, lipschitz{"drift Lipschitz K_b"}, sigma_bound{"diffusion bound M_sigma"},
        sigma_lip{"diffusion Lipschitz K_sigma"}, sigma_inv{"inverse diffusion bound M_sigma_inv"};
    const std::size_t d = model.dim;
    std::vector<double> x(d), x2(d), b1(d), b2(d), tt(2);
    for (std::size_t s = 0; s < samples; ++s) {
        sample_box(rng, box, s, 0, x);
        sample_box(rng, box, s, 1, x2);
        rng.uniforms(Stream::sampling, s, 2, tt);
        const double t = tt[0] * T;
        const double t2 = tt[1] * T;
        model.drift(t, x, b1);
        model.drift(t, x2, b2);
        record(growth, euclidean(b1), c.M_b * (1.0 + euclidean(x)));
        double diff = 0.0, dx = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            diff += (b1[i] - b2[i]) * (b1[i] - b2[i]);
            dx += (x[i] - x2[i]) * (x[i] - x2[i]);
        }
        record(lipschitz, std::sqrt(diff), c.K_b * std::sqrt(dx));
        const Eigen::MatrixXd s1 = model.diffusion(t);
        const Eigen::MatrixXd s2 = model.diffusion(t2);
        record(sigma_bound, operator_norm(s1), c.M_sigma);
        record(sigma_lip, operator_norm(s1 - s2), c.K_sigma * std::abs(t - t2));
        if (c.M_sigma_inv) {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(s1);
            const double inv_norm = lu.isInvertible() ? operator_norm(lu.inverse()) : kInfinity;
            record(sigma_inv, inv_norm, *c.M_sigma_inv);
        }
    }
    std::vector<ConstantCheck> out = {growth, lipschitz, sigma_bound, sigma_lip};
    if (c.M_sigma_inv) out.push_back(sigma_inv);
    return out;
}

std::vector<ConstantCheck> check_driver_constants(const QuadraticDriver& driver, double T, const Box& x_box,
                                                  double y_max, double z_max, std::size_t z_dim,
                                                  std::size_t samples, std::uint64_t seed) {
    const CounterRng rng(seed);
    const auto& c = driver.constants;
    ConstantCheck growth{"driver growth M_f"}, lip_z{"driver local Lipschitz in z"}, lip_y{"driver Lipschitz K_fy"},
        lip_x{"driver Lipschitz K_fx"};
    const std::size_t d = x_box.dim();
    std::vector<double> x(d), x2(d), z(z_dim), z2(z_dim), misc(3);
    for (std::size_t s = 0; s < samples; ++s) {
        sample_box(rng, x_box, s, 0, x);
        sample_box(rng, x_box, s, 1, x2);
        rng.uniforms(Stream::sampling, s, 2, z);
        rng.uniforms(Stream::sampling, s, 3, z2);
        for (std::size_t i = 0; i < z_dim; ++i) {
            z[i] = z_max * (2.0 * z[i] - 1.0);
            z2[i] = z_max * (2.0 * z2[i] - 1.0);
        }
        rng.uniforms(Stream::sampling, s, 4, misc);
        const double t = misc[0] * T;
        const double y = y_max * (2.0 * misc[1] - 1.0);
        const double y2 = y_max * (2.0 * misc[2] - 1.0);
        const double f0 = driver(t, x, y, z);
        record(growth, std::abs(f0), c.M_f * (1.0 + std::abs(y) + squared_norm(z)));
        double dz = 0.0;
        for (std::size_t i = 0; i < z_dim; ++i) dz += (z[i] - z2[i]) * (z[i] - z2[i]);
        dz = std::sqrt(dz);
        record(lip_z, std::abs(f0 - driver(t, x, y, z2)), (c.K_fz + c.L_fz * (euclidean(z) + euclidean(z2))) * dz);
        record(lip_y, std::abs(f0 - driver(t, x, y2, z)), c.K_fy * std::abs(y - y2));
        double dx = 0.0;
        for (std::size_t i = 0; i < d; ++i) dx += (x[i] - x2[i]) * (x[i] - x2[i]);
        record(lip_x, std::abs(f0 - driver(t, x2, y, z)), c.K_fx * std::sqrt(dx));
    }
    return {growth, lip_z, lip_y, lip_x};
}

ConstantCheck check_terminal_bound(const TerminalCondition& term, const Box& box, std::size_t samples,
                                   std::uint64_t seed) {
    const CounterRng rng(seed);
    ConstantCheck bound{"terminal bound M_g"};
    std::vector<double> x(box.dim());
    for (std::size_t s = 0; s < samples; ++s) {
        sample_box(rng, box, s, 0, x);
        record(bound, std::abs(term(x)), term.M_g);
    }
    return bound;
}

}  // namespace qbsde
