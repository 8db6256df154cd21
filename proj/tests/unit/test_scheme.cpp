#include "doctest.h"

#include "qbsde/builtins.hpp"
#include "qbsde/scheme.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace qbsde;

namespace {

SchemeConfig small_config(std::size_t n, std::size_t paths, RegressionBasis basis) {
    SchemeConfig cfg;
    cfg.n = n;
    cfg.paths = paths;
    cfg.engine.basis = std::move(basis);
    cfg.seed = 17;
    return cfg;
}

/// Reference that returns the discrete solution itself, Z frozen on each interval.
ReferenceSolution self_reference(const DiscreteSolution& sol) {
    ReferenceSolution ref;
    ref.dim = sol.dim();
    ref.T = sol.grid().horizon();
    const auto times = sol.grid().times();
    std::vector<double> t(times.begin(), times.end());
    ref.y = [&sol, t](double s, std::span<const double> x) {
        const auto k = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), s) - t.begin());
        return sol.y(k, x);
    };
    ref.z = [&sol, t](double s, std::span<const double> x, std::span<double> out) {
        const auto k = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), s) - t.begin()) - 1;
        sol.z(k, x, out);
    };
    ref.method = "self";
    return ref;
}

}  // namespace

TEST_CASE("Euler ensemble: recursion and increment moments") {
    const auto pb = make_problem("ou", {{"theta", 1.0}, {"sigma", 0.5}});
    const auto grid = TimeGrid::build(1.0, 0.25, 4);
    const std::size_t m = 20000;
    const auto ens = simulate_euler(pb.model, grid, m, 3);
    for (std::size_t k = 0; k < grid.num_steps(); ++k) {
        const double h = grid.step(k);
        double s1 = 0, s2 = 0;
        for (std::size_t p = 0; p < m; ++p) {
            const double dw = ens.increment(k, p)[0];
            s1 += dw;
            s2 += dw * dw;
            if (p % 997 == 0) {
                const double x = ens.state(k, p)[0];
                CHECK(ens.state(k + 1, p)[0] == x + h * (-x) + 0.5 * dw);
            }
        }
        CHECK(std::abs(s1 / m) < 5.0 * std::sqrt(h / m));
        CHECK(std::abs(s2 / m - h) < 5.0 * h * std::sqrt(2.0 / m));
    }
    for (std::size_t p = 0; p < 10; ++p) CHECK(ens.state(0, p)[0] == 1.0);

    std::vector<double> states((grid.num_steps() + 1) * 1), incs(grid.num_steps());
    simulate_euler_path(pb.model, grid, CounterRng(3), 7, states, incs);
    for (std::size_t k = 0; k <= grid.num_steps(); ++k) CHECK(states[k] == ens.state(k, 7)[0]);
}

TEST_CASE("constant terminal: Y = c and Z = 0") {
    const auto pb = make_problem("trivial", {{"c", 2.5}});
    for (std::size_t n : {1u, 4u}) {
        auto cfg = small_config(n, 2000, RegressionBasis::local());
        if (n == 1) cfg.eps = 0.5;
        const auto res = solve(pb, cfg);
        CHECK(res.solution.y0() == doctest::Approx(2.5).epsilon(1e-12));
        double z = 1.0;
        const double x[1] = {0.2};
        for (std::size_t k = 0; k < res.grid.num_steps(); ++k) {
            res.solution.z(k, x, std::span<double>(&z, 1));
            CHECK(std::abs(z) < 1e-12);
        }
    }
}

TEST_CASE("linear case is reproduced exactly") {
    const auto pb = make_problem("linear");
    const auto res = solve(pb, small_config(8, 100000, RegressionBasis::polynomial(1)));
    const auto rep = discretization_error(res.solution, pb, *pb.reference, 4000, 99);
    CHECK(rep.e_total < 1e-6);
    CHECK(rep.e3 == doctest::Approx(rep.e_Y + rep.e_Z));
}

TEST_CASE("error functional vanishes against the solution itself") {
    const auto pb = make_problem("cole_hopf_holder");
    const auto res = solve(pb, small_config(4, 4000, RegressionBasis::polynomial(0)));
    const auto ref = self_reference(res.solution);
    const auto rep = discretization_error(res.solution, pb, ref, 500, 5);
    CHECK(rep.e_Y == 0.0);
    CHECK(rep.e_Z == 0.0);
    CHECK(rep.e_total >= 0.0);
}

TEST_CASE("missing reference Z is flagged") {
    const auto pb = make_problem("zhang");
    REQUIRE(pb.reference.has_value());
    CHECK_FALSE(pb.reference->has_z());
    auto cfg = small_config(4, 2000, RegressionBasis::local());
    const auto res = solve(pb, cfg);
    const auto rep = discretization_error(res.solution, pb, *pb.reference, 200, 5);
    CHECK_FALSE(rep.z_available);
    CHECK(std::isnan(rep.e_Z));
    CHECK(rep.e_total == rep.e_Y);
    CHECK(rep.to_json()["e_Z"].is_null());
}

TEST_CASE("projection, cap and Y clipping bounds hold on the fields") {
    const auto pb = make_problem("cole_hopf_holder");
    auto cfg = small_config(16, 20000, RegressionBasis::local());
    const auto res = solve(pb, cfg);
    const auto& sol = res.solution;
    const auto& opt = sol.options();
    REQUIRE(std::isfinite(opt.y_bound));
    for (std::size_t k = 0; k < res.grid.num_steps(); ++k) {
        const double limit = std::min(sol.radius(k), opt.z_cap);
        for (double x = -4.0; x <= 4.0; x += 0.05) {
            double z = 0.0;
            sol.z(k, std::span<const double>(&x, 1), std::span<double>(&z, 1));
            CHECK(std::abs(z) <= limit * (1 + 1e-14));
            CHECK(std::abs(sol.y(k, std::span<const double>(&x, 1))) <= opt.y_bound);
        }
    }
}

TEST_CASE("inactive projection leaves every field unchanged") {
    const auto pb = make_problem("cole_hopf_lipschitz");
    auto cfg = small_config(8, 5000, RegressionBasis::local());
    cfg.projection_enabled = false;
    cfg.cap_enabled = false;
    const auto free_run = solve(pb, cfg);
    cfg.projection_enabled = true;
    cfg.projection = ZBoundParams{1e6, 0.0, kInfinity};
    const auto wide = solve(pb, cfg);
    CHECK(free_run.solution.y0() == wide.solution.y0());
    for (std::size_t k = 0; k < free_run.grid.num_steps(); ++k) {
        CHECK(wide.solution.diagnostics(k).projection_active_fraction == 0.0);
        for (double x : {-1.0, 0.0, 0.8}) {
            double z1 = 0, z2 = 0;
            free_run.solution.z(k, std::span<const double>(&x, 1), std::span<double>(&z1, 1));
            wide.solution.z(k, std::span<const double>(&x, 1), std::span<double>(&z2, 1));
            CHECK(z1 == z2);
            CHECK(free_run.solution.y(k, std::span<const double>(&x, 1)) == wide.solution.y(k, std::span<const double>(&x, 1)));
        }
    }
}

TEST_CASE("solve is deterministic in (problem, config, seed)") {
    const auto pb = make_problem("cole_hopf_holder");
    const auto cfg = small_config(8, 3000, RegressionBasis::local(0, 1));
    const auto a = solve(pb, cfg);
    const auto b = solve(pb, cfg);
    CHECK(a.solution.y0() == b.solution.y0());
    CHECK(a.solution.to_json() == b.solution.to_json());
    const auto ra = discretization_error(a.solution, pb, *pb.reference, 300, 4);
    const auto rb = discretization_error(b.solution, pb, *pb.reference, 300, 4);
    CHECK(ra.e_total == rb.e_total);
    auto other = cfg;
    other.seed = 18;
    CHECK(solve(pb, other).solution.y0() != a.solution.y0());
}

TEST_CASE("quadrature and regression engines agree on Y0") {
    const auto pb = make_problem("cole_hopf_lipschitz");
    auto cfg = small_config(8, 100000, RegressionBasis::polynomial(6));
    const auto reg = solve(pb, cfg);
    cfg.engine.kind = EngineKind::quadrature;
    cfg.engine.nodes_per_axis = 3201;
    cfg.engine.gh_order = 48;
    const auto quad = solve(pb, cfg);
    CAPTURE(reg.solution.y0());
    CAPTURE(quad.solution.y0());
    CAPTURE(reg.solution.y0_standard_error());
    CHECK(std::abs(reg.solution.y0() - quad.solution.y0()) < 3.0 * reg.solution.y0_standard_error());
}

TEST_CASE("error decreases with n on the Cole-Hopf problem (quadrature engine)") {
    const auto pb = make_problem("cole_hopf_holder");
    double previous = INFINITY;
    for (std::size_t n : {8u, 16u, 32u, 64u}) {
        auto cfg = small_config(n, 0, RegressionBasis::local());
        cfg.engine.kind = EngineKind::quadrature;
        const auto res = solve(pb, cfg);
        const auto rep = discretization_error(res.solution, pb, *pb.reference, 2000, evaluation_seed(cfg.seed));
        CAPTURE(n);
        CAPTURE(rep.e_total);
        CHECK(rep.e_total < previous);
        previous = rep.e_total;
    }
}

TEST_CASE("grids of the configuration variants") {
    const auto pb = make_problem("cole_hopf_holder");
    auto cfg = small_config(16, 100, RegressionBasis::local());
    const auto params = scheme_params(pb, cfg);
    CHECK(params.eps == doctest::Approx(std::pow(16.0, -0.75)));
    CHECK(params.N == doctest::Approx(2.0));
    CHECK(build_scheme_grid(pb, cfg, params).num_steps() == 32);
    cfg.variant = GridVariant::reduced;
    cfg.tail_exponent = 0.5;
    CHECK(build_scheme_grid(pb, cfg, params).tail_steps() == 4);
    cfg.variant = GridVariant::uniform;
    CHECK(build_scheme_grid(pb, cfg, params).num_steps() == 16);
}

TEST_CASE("time-dependent shape fit") {
    std::vector<double> t, v;
    for (double s : {0.0, 0.3, 0.6, 0.9, 0.99}) {
        t.push_back(s);
        v.push_back(0.4 + 0.2 / std::sqrt(1.0 - s));
    }
    const auto [C, Cp] = fit_time_dependent_shape(t, v, 1.0);
    CHECK(C == doctest::Approx(0.4).epsilon(1e-10));
    CHECK(Cp == doctest::Approx(0.2).epsilon(1e-10));
    for (double& x : v) x = 1.0 - x;  // decreasing shape forces a nonnegative constrained fit
    const auto [C2, Cp2] = fit_time_dependent_shape(t, v, 1.0);
    CHECK(C2 >= 0.0);
    CHECK(Cp2 >= 0.0);
}

TEST_CASE("evaluation seeds differ from training seeds") {
    CHECK(evaluation_seed(1) != 1);
    CHECK(evaluation_seed(1) != evaluation_seed(2));
    CHECK(evaluation_seed(5) == evaluation_seed(5));
}

TEST_CASE("configuration validation") {
    const auto pb = make_problem("cole_hopf_holder");
    auto cfg = small_config(0, 100, RegressionBasis::local());
    CHECK_THROWS_AS(solve(pb, cfg), std::invalid_argument);
    CHECK_THROWS_AS(make_problem("no_such_problem"), std::invalid_argument);
    try {
        make_problem("no_such_problem");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("cole_hopf_holder") != std::string::npos);
    }
}
