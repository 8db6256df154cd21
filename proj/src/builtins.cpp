#include "qbsde/builtins.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qbsde {
namespace {

double get(const nlohmann::json& p, const char* key, double fallback) {
    return p.contains(key) ? p.at(key).get<double>() : fallback;
}

std::vector<double> get_x0(const nlohmann::json& p, std::size_t dim, double fallback = 0.0) {
    if (!p.contains("x0")) return std::vector<double>(dim, fallback);
    const auto& v = p.at("x0");
    std::vector<double> x0 = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
    if (x0.size() != dim) throw std::invalid_argument("x0 must have " + std::to_string(dim) + " entries");
    return x0;
}

SdeModel brownian_model(double sigma, std::vector<double> x0) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    SdeModel m;
    m.dim = 1;
    m.x0 = std::move(x0);
    m.drift = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    m.diffusion = [sigma](double) { return Eigen::MatrixXd::Constant(1, 1, sigma); };
    m.constants.M_b = 0.0;
    m.constants.K_b = 0.0;
    m.constants.M_sigma = sigma;
    m.constants.K_sigma = 0.0;
    m.constants.M_sigma_inv = 1.0 / sigma;
    m.constants.b_bounded = true;
    return m;
}

QuadraticDriver quadratic_driver(double gamma) {
    QuadraticDriver d;
    d.f = [gamma](double, std::span<const double>, double, std::span<const double> z) {
        return 0.5 * gamma * squared_norm(z);
    };
    d.constants.M_f = 0.5 * std::abs(gamma);
    d.constants.L_fz = 0.5 * std::abs(gamma);
    d.constants.K_ft = 0.0;
    return d;
}

QuadraticDriver zero_driver() {
    QuadraticDriver d;
    d.f = [](double, std::span<const double>, double, std::span<const double>) { return 0.0; };
    d.depends_on_z = false;
    d.constants.K_ft = 0.0;
    return d;
}

/// |Z| <= (e^{gamma osc} - 1) sqrt(2/pi) / (2 gamma sqrt(T - t)) for X = x + sigma W
/// and a terminal condition of oscillation `osc`.
ZBoundParams cole_hopf_z_bounds(double gamma, double osc) {
    ZBoundParams zb;
    zb.M_z1 = 0.0;
    zb.M_z2 = std::expm1(std::abs(gamma) * osc) * std::sqrt(2.0 / M_PI) / (2.0 * std::abs(gamma));
    return zb;
}

ProblemSpec cole_hopf_holder(const nlohmann::json& p) {
    const double gamma = get(p, "gamma", 1.0);
    const double sigma = get(p, "sigma", 1.0);
    const double alpha = get(p, "alpha", 0.5);
    ProblemSpec spec;
    spec.name = "cole_hopf_holder";
    spec.T = get(p, "T", 1.0);
    spec.model = brownian_model(sigma, get_x0(p, 1));
    spec.driver = quadratic_driver(gamma);
    spec.terminal = capped_power_terminal(alpha);
    spec.reference = cole_hopf_reference(gamma, spec.terminal, sigma, spec.T);
    spec.test_box = Box::interval(-4.0, 4.0);
    spec.z_bounds = cole_hopf_z_bounds(gamma, 1.0);
    return spec;
}

ProblemSpec cole_hopf_lipschitz(const nlohmann::json& p) {
    const double gamma = get(p, "gamma", 1.0);
    const double sigma = get(p, "sigma", 1.0);
    ProblemSpec spec;
    spec.name = "cole_hopf_lipschitz";
    spec.T = get(p, "T", 1.0);
    spec.model = brownian_model(sigma, get_x0(p, 1));
    spec.driver = quadratic_driver(gamma);
    spec.terminal.g = [](std::span<const double> x) { return std::sin(x[0]); };
    spec.terminal.M_g = 1.0;
    spec.terminal.K_g = 1.0;
    spec.terminal.regularity = Regularity::lipschitz;
    spec.reference = cole_hopf_reference(gamma, spec.terminal, sigma, spec.T);
    spec.test_box = Box::interval(-4.0, 4.0);
    // Z = sigma E[e^{gamma g} g'] / E[e^{gamma g}] is bounded by sigma K_g.
    spec.z_bounds.M_z1 = sigma;
    spec.z_bounds.M_z2 = 0.0;
    return spec;
}

ProblemSpec linear_problem(const nlohmann::json& p) {
    const double sigma = get(p, "sigma", 1.0);
    ProblemSpec spec;
    spec.name = "linear";
    spec.T = get(p, "T", 1.0);
    spec.model = brownian_model(sigma, get_x0(p, 1));
    spec.driver = zero_driver();
    spec.terminal.g = [](std::span<const double> x) { return x[0]; };
    spec.terminal.M_g = kInfinity;
    spec.terminal.K_g = 1.0;
    ReferenceSolution ref;
    ref.T = spec.T;
    ref.method = "closed-form";
    ref.y = [](double, std::span<const double> x) { return x[0]; };
    ref.z = [sigma](double, std::span<const double>, std::span<double> out) { out[0] = sigma; };
    spec.reference = ref;
    spec.test_box = Box::interval(-4.0, 4.0);
    spec.z_bounds.M_z1 = sigma;
    return spec;
}

ProblemSpec ou_problem(const nlohmann::json& p) {
    const double sigma = get(p, "sigma", 1.0);
    const double theta = get(p, "theta", 1.0);
    if (!(theta >= 0.0)) throw std::invalid_argument("theta must be nonnegative");
    ProblemSpec spec;
    spec.name = "ou";
    spec.T = get(p, "T", 1.0);
    spec.model = brownian_model(sigma, get_x0(p, 1, 1.0));
    spec.model.drift = [theta](double, std::span<const double> x, std::span<double> out) { out[0] = -theta * x[0]; };
    spec.model.constants.M_b = theta;
    spec.model.constants.K_b = theta;
    spec.model.constants.b_bounded = false;
    spec.driver = zero_driver();
    spec.terminal.g = [](std::span<const double> x) { return x[0]; };
    spec.terminal.M_g = kInfinity;
    spec.terminal.K_g = 1.0;
    const double T = spec.T;
    ReferenceSolution ref;
    ref.T = T;
    ref.method = "closed-form";
    ref.y = [theta, T](double t, std::span<const double> x) { return x[0] * std::exp(-theta * (T - t)); };
    ref.z = [theta, sigma, T](double t, std::span<const double>, std::span<double> out) {
        out[0] = sigma * std::exp(-theta * (T - t));
    };
    spec.reference = ref;
    spec.test_box = Box::interval(-4.0, 4.0);
    spec.z_bounds.M_z1 = sigma;
    return spec;
}

ProblemSpec zhang_problem(const nlohmann::json& p) {
    ProblemSpec spec;
    spec.name = "zhang";
    spec.T = 2.0;
    spec.model.dim = 1;
    spec.model.x0 = get_x0(p, 1);
    spec.model.drift = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    spec.model.diffusion = [](double t) { return Eigen::MatrixXd::Constant(1, 1, t < 1.0 ? 1.0 - t : 0.0); };
    spec.model.constants.M_sigma = 1.0;
    spec.model.constants.K_sigma = 1.0;
    spec.model.constants.b_bounded = true;
    spec.driver = zero_driver();
    spec.terminal.g = [](std::span<const double> x) { return zhang_terminal(x[0]); };
    spec.terminal.M_g = 0.5 * M_PI;
    spec.terminal.regularity = Regularity::holder;
    spec.terminal.alpha = 0.25;
    spec.terminal.K_g = std::pow(2.0, 0.75);
    spec.terminal.breakpoints = {0.0};
    ReferenceSolution ref;
    ref.T = 2.0;
    ref.method = "quadrature";
    ref.y = [](double t, std::span<const double> x) { return zhang_value(t, x[0]); };
    spec.reference = ref;
    spec.test_box = Box::interval(-3.0, 3.0);
    return spec;
}

ProblemSpec bounded2d_problem(const nlohmann::json& p) {
    const BoundedZ2d ex = bounded_z_2d_default();
    ProblemSpec spec;
    spec.name = "bounded2d";
    spec.T = 2.0;
    spec.model = bounded_z_2d_model(ex, get_x0(p, 2));
    spec.driver = zero_driver();
    auto g_tilde = ex.g_tilde;
    spec.terminal.g = [g_tilde](std::span<const double> x) { return g_tilde(x[1]); };
    spec.terminal.M_g = ex.g_sup;
    spec.terminal.regularity = Regularity::holder;
    spec.terminal.alpha = 0.5;
    spec.terminal.K_g = std::sqrt(2.0);
    spec.test_box = Box::cube(2, -3.0, 3.0);
    return spec;
}

ProblemSpec trivial_problem(const nlohmann::json& p) {
    const double c = get(p, "c", 1.0);
    ProblemSpec spec;
    spec.name = "trivial";
    spec.T = get(p, "T", 1.0);
    spec.model = brownian_model(get(p, "sigma", 1.0), get_x0(p, 1));
    spec.driver = zero_driver();
    spec.terminal.g = [c](std::span<const double>) { return c; };
    spec.terminal.M_g = std::abs(c);
    spec.terminal.K_g = 0.0;
    ReferenceSolution ref;
    ref.T = spec.T;
    ref.method = "closed-form";
    ref.y = [c](double, std::span<const double>) { return c; };
    ref.z = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    spec.reference = ref;
    spec.test_box = Box::interval(-4.0, 4.0);
    spec.z_bounds.M_z1 = 0.0;
    return spec;
}

}  // namespace

TerminalCondition capped_power_terminal(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
    TerminalCondition term;
    term.g = [alpha](std::span<const double> x) { return std::pow(std::min(std::abs(x[0]), 1.0), alpha); };
    term.M_g = 1.0;
    term.K_g = 1.0;
    term.alpha = alpha;
    term.regularity = alpha < 1.0 ? Regularity::holder : Regularity::lipschitz;
    term.breakpoints = {-1.0, 0.0, 1.0};
    return term;
}

std::vector<std::string> builtin_problem_names() {
    return {"cole_hopf_holder", "cole_hopf_lipschitz", "linear", "ou", "zhang", "bounded2d", "trivial"};
}

ProblemSpec make_problem(const std::string& name, const nlohmann::json& params) {
    if (name == "cole_hopf_holder") return cole_hopf_holder(params);
    if (name == "cole_hopf_lipschitz") return cole_hopf_lipschitz(params);
    if (name == "linear") return linear_problem(params);
    if (name == "ou") return ou_problem(params);
    if (name == "zhang") return zhang_problem(params);
    if (name == "bounded2d") return bounded2d_problem(params);
    if (name == "trivial") return trivial_problem(params);
    std::ostringstream msg;
    msg << "unknown problem '" << name << "'; available built-ins:";
    for (const auto& n : builtin_problem_names()) msg << ' ' << n;
    throw std::invalid_argument(msg.str());
}

ProblemSpec problem_from_json(const nlohmann::json& j) {
    if (j.is_string()) return make_problem(j.get<std::string>());
    if (!j.is_object() || !j.contains("name")) {
        throw std::invalid_argument("problem must be a name or an object with a \"name\" field");
    }
    return make_problem(j.at("name").get<std::string>(), j);
}

}  // namespace qbsde
