#include "doctest.h"

#include "qbsde/oracles.hpp"
#include "qbsde/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

using namespace qbsde;

namespace {

TerminalCondition terminal(std::function<double(double)> g, std::vector<double> breakpoints = {}) {
    TerminalCondition t;
    t.g = [g](std::span<const double> x) { return g(x[0]); };
    t.M_g = 1.0;
    t.breakpoints = std::move(breakpoints);
    return t;
}

double z_at(const ReferenceSolution& ref, double t, double x) {
    double z = 0.0;
    ref.z(t, std::span<const double>(&x, 1), std::span<double>(&z, 1));
    return z;
}

double y_at(const ReferenceSolution& ref, double t, double x) { return ref.y(t, std::span<const double>(&x, 1)); }

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= double(x.size());
    my /= double(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

}  // namespace

TEST_CASE("cole-hopf: constant terminal") {
    const auto ref = cole_hopf_reference(2.0, terminal([](double) { return 0.7; }), 1.0, 1.0);
    for (double t : {0.0, 0.5, 0.99})
        for (double x : {-2.0, 0.0, 3.0}) {
            CHECK(y_at(ref, t, x) == doctest::Approx(0.7).epsilon(1e-13));
            CHECK(std::abs(z_at(ref, t, x)) < 1e-12);
        }
}

TEST_CASE("cole-hopf: linear terminal against the moment generating function") {
    const double gamma = 0.8, T = 1.0;
    const auto ref = cole_hopf_reference(gamma, terminal([](double x) { return x; }), 1.0, T, 32);
    for (double t : {0.0, 0.3, 0.9})
        for (double x : {-1.0, 0.0, 0.5}) {
            CHECK(std::abs(y_at(ref, t, x) - (x + gamma * (T - t) / 2.0)) < 1e-8);
            CHECK(std::abs(z_at(ref, t, x) - 1.0) < 1e-8);
        }
    CHECK_THROWS_AS(cole_hopf_reference(0.0, terminal([](double x) { return x; }), 1.0, T), std::invalid_argument);
}

TEST_CASE("cole-hopf: small gamma limit matches the linear reference") {
    // (1/gamma) log E e^{gamma g} = E g + (gamma/2) Var g + O(gamma^2).
    const auto g = terminal([](double x) { return std::sin(x); });
    const auto lin = linear_reference(g, 1.0, 1.0);
    const auto sq = linear_reference(terminal([](double x) { return std::sin(x) * std::sin(x); }), 1.0, 1.0);
    for (double gamma : {1e-4, 1e-6}) {
        const auto ch = cole_hopf_reference(gamma, g, 1.0, 1.0);
        for (double x : {-1.0, 0.2, 1.3}) {
            const double mean = y_at(lin, 0.2, x);
            const double var = y_at(sq, 0.2, x) - mean * mean;
            const double diff = y_at(ch, 0.2, x) - mean;
            CHECK(std::abs(diff - 0.5 * gamma * var) < gamma * gamma + 1e-14 / gamma);
            CHECK(std::abs(diff) <= 0.5 * gamma + 1e-12);
        }
    }
    const auto tiny = cole_hopf_reference(1e-6, g, 1.0, 1.0);
    CHECK(std::abs(y_at(tiny, 0.2, 0.4) - y_at(lin, 0.2, 0.4)) < 1e-6);
}

TEST_CASE("linear reference: symmetry and second moment") {
    const auto odd = linear_reference(terminal([](double x) { return std::atan(x); }), 1.0, 1.0);
    CHECK(std::abs(y_at(odd, 0.3, 0.0)) < 1e-14);
    const auto ind = linear_reference(terminal([](double x) { return x > 0.0 ? 1.0 : 0.0; }, {0.0}), 1.0, 1.0);
    CHECK(y_at(ind, 0.3, 0.0) == doctest::Approx(0.5).epsilon(1e-10));
    // Z of the indicator is sigma times the Gaussian density at 0.
    CHECK(z_at(ind, 0.3, 0.0) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi * 0.7)).epsilon(1e-8));
    const auto sq = linear_reference(terminal([](double x) { return x * x; }), 1.0, 1.0);
    for (double t : {0.0, 0.6})
        for (double x : {-1.0, 0.4}) {
            CHECK(y_at(sq, t, x) == doctest::Approx(x * x + (1.0 - t)).epsilon(1e-12));
            CHECK(z_at(sq, t, x) == doctest::Approx(2.0 * x).epsilon(1e-10));
        }
}

TEST_CASE("cole-hopf: Hölder terminal with breakpoints against brute-force integration") {
    const double gamma = 1.0, sigma = 1.0, T = 1.0;
    auto g = [](double x) { return std::pow(std::min(std::abs(x), 1.0), 0.5); };
    const auto ref = cole_hopf_reference(gamma, terminal(g, {-1.0, 0.0, 1.0}), sigma, T);
    for (double t : {0.0, 0.9, 0.999})
        for (double x : {0.0, 0.3, 1.1}) {
            const double s = sigma * std::sqrt(T - t);
            auto integrand = [&](double u) {
                return std::exp(gamma * g(u)) * std::exp(-(u - x) * (u - x) / (2 * s * s)) / (s * std::sqrt(2 * std::numbers::pi));
            };
            double e = 0.0;
            const double pts[] = {x - 12 * s, -1.0, 0.0, 1.0, x + 12 * s};
            for (int i = 0; i + 1 < 5; ++i)
                if (pts[i + 1] > pts[i]) e += integrate_adaptive(integrand, std::max(pts[i], x - 12 * s), std::min(pts[i + 1], x + 12 * s), 1e-14, 1e-13);
            CHECK(y_at(ref, t, x) == doctest::Approx(std::log(e) / gamma).epsilon(1e-8));
        }
}

TEST_CASE("references satisfy the one-step dynamic programming relation to second order") {
    const double gamma = 1.0, sigma = 1.0, T = 1.0;
    const auto ref = cole_hopf_reference(gamma, terminal([](double x) { return std::sin(x); }), sigma, T);
    const auto gh = gauss_hermite(40);
    auto residual = [&](double t, double x, double h) {
        double e = 0.0;
        for (std::size_t j = 0; j < gh.size(); ++j) e += gh.weights[j] * y_at(ref, t + h, x + sigma * std::sqrt(h) * gh.nodes[j]);
        const double z = z_at(ref, t, x);
        return std::abs(y_at(ref, t, x) - e - h * 0.5 * gamma * z * z);
    };
    for (double x : {0.3, 1.0}) {
        const double r1 = residual(0.2, x, 0.02), r2 = residual(0.2, x, 0.01);
        CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.15));
    }
}

TEST_CASE("zhang example") {
    for (double t : {0.0, 0.5, 0.9, 0.999}) CHECK(std::abs(zhang_value(t, 0.0)) < 1e-10);
    CHECK(zhang_terminal(0.0) == 0.0);
    CHECK(zhang_terminal(-2.0) == -zhang_terminal(2.0));
    CHECK(zhang_variance(0.4) == doctest::Approx(std::pow(0.6, 3) / 3.0));

    std::vector<double> tau, z;
    for (double t : {0.9, 0.99, 0.999, 0.9999}) {
        tau.push_back(1.0 - t);
        z.push_back(zhang_gradient(t));
    }
    CHECK(std::abs(log_log_slope(tau, z) + 0.125) <= 0.01);

    const double a = zhang_gradient(0.5), b = zhang_gradient(0.5001);
    CHECK(std::abs(a - b) / std::abs(a) < 0.01);
    CHECK_THROWS_AS(zhang_gradient(1.0), std::invalid_argument);
    CHECK(zhang_value(1.5, 0.3) == zhang_terminal(0.3));
}

TEST_CASE("two-dimensional bounded-Z example") {
    const auto ex = bounded_z_2d_default();
    const double bound = ex.g_sup * std::sqrt(2.0 / std::numbers::pi);
    for (double t : {0.0, 0.3, 0.7, 0.95, 0.999})
        for (double x1 : {-2.0, 0.0, 1.0})
            for (double x2 : {-1.0, 0.0, 0.5}) {
                const double x[2] = {x1, x2};
                CHECK(std::abs(bounded_z_2d(t, x, ex)[0]) <= bound);
            }
    std::vector<double> d2;
    for (double t : {0.9, 0.99, 0.999}) {
        const double x[2] = {0.0, 0.0};
        d2.push_back(bounded_z_2d(t, x, ex)[1]);
    }
    CHECK(d2[0] < d2[1]);
    CHECK(d2[1] < d2[2]);
    CHECK(d2[2] > 10.0);

    BoundedZ2d flat = ex;
    flat.g_tilde = [](double) { return 0.4; };
    flat.g_breakpoints.clear();
    const double x[2] = {0.3, -0.2};
    const auto grad = bounded_z_2d(0.5, x, flat);
    CHECK(std::abs(grad[0]) < 1e-12);
    CHECK(std::abs(grad[1]) < 1e-12);
    CHECK_THROWS_AS(bounded_z_2d(1.0, x, ex), std::invalid_argument);

    // a_t = (1 - t)^2 / 2 for h(s) = (1 - s) on [0, 1].
    CHECK(bounded_z_2d_a(ex, 0.4) == doctest::Approx(0.18).epsilon(1e-10));
}

TEST_CASE("curve CSV") {
    std::ostringstream out;
    const double t[2] = {0.5, 0.75};
    const double v[2] = {1.0, 0.1};
    write_curve_csv(out, "z", t, v);
    CHECK(out.str() == "t,z\n0.5,1\n0.75,0.10000000000000001\n");
}
