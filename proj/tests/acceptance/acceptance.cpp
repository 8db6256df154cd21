// Acceptance harness: one PASS/FAIL line per criterion.
//
//   qbsde_acceptance [criteria...] [--results FILE]
//
// Without positional arguments every criterion runs. The process exits with 0
// only when every selected criterion passes.

#include "qbsde/analysis.hpp"
#include "qbsde/builtins.hpp"
#include "qbsde/oracles.hpp"
#include "qbsde/scheme.hpp"
#include "qbsde/study.hpp"
#include "qbsde/timegrid.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace qbsde;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... values) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, values...);
    return buf;
}

struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
};

// Ordinary least squares of log(y) on log(x), written out so that the check
// does not depend on the library's own rate fitter.
LogLogFit log_log_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const double m = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= m;
    my /= m;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

// ---------------------------------------------------------------------------
// 1. Grid exactness
// ---------------------------------------------------------------------------

Outcome grid_exactness() {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 gen(20240611);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> n_dist(1, 200);
    double worst = 0.0;
    bool switch_exact = true;
    for (int trial = 0; trial < 50; ++trial) {
        const double T = 0.1 + 9.9 * u01(gen);
        const double eps = T * std::pow(10.0, -6.0 * u01(gen)) * 0.999;
        const std::size_t n = n_dist(gen);
        const auto grid = TimeGrid::build(T, eps, n);
        for (std::size_t k = 0; k <= 2 * n; ++k) {
            const double expected = k <= n ? T * (1.0 - std::pow(eps / T, double(k) / double(n)))
                                           : (T - eps) + eps * double(k - n) / double(n);
            const double scale = std::max(std::abs(expected), T * 1e-300);
            if (k > 0) worst = std::max(worst, std::abs(grid.time(k) - expected) / scale);
        }
        switch_exact = switch_exact && grid.time(n) == T - eps && grid.time(2 * n) == T && grid.time(0) == 0.0;
    }
    const double runtime = seconds_since(start);
    return {worst < 1e-12 && switch_exact && runtime < 1.0,
            fmt("max relative deviation %.2e, t_n == T - eps exactly: %s, %.3f s", worst, switch_exact ? "yes" : "no",
                runtime)};
}

// ---------------------------------------------------------------------------
// 2. Grid products
// ---------------------------------------------------------------------------

Outcome lemma_products() {
    const auto start = std::chrono::steady_clock::now();
    const double T = 1.0, a = 1.0;
    std::vector<double> ns;
    for (int p = 6; p <= 14; ++p) ns.push_back(std::ldexp(1.0, p));
    bool ok = true;
    std::ostringstream detail;
    for (double M2 : {0.25, 0.5, 1.0}) {
        std::vector<double> prod;
        for (double n : ns) {
            const auto grid = TimeGrid::build(T, T * std::pow(n, -a), static_cast<std::size_t>(n));
            prod.push_back(lemma_product_singular(grid, 0.0, M2));
        }
        const double slope = log_log_fit(ns, prod).slope;
        ok = ok && std::abs(slope - a * M2) <= 0.05;
        detail << fmt("M2=%.2f slope %.4f; ", M2, slope);
    }
    double lo = INFINITY, hi = 0.0;
    for (double n : ns) {
        const auto grid = TimeGrid::build(T, T * std::pow(n, -a), static_cast<std::size_t>(n));
        const double p = lemma_product_uniform(grid, 1.0);
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    ok = ok && hi / lo <= 1.5;
    const double runtime = seconds_since(start);
    detail << fmt("uniform product band %.4f..%.4f (ratio %.4f), %.3f s", lo, hi, hi / lo, runtime);
    return {ok && runtime < 5.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Euler strong error on the OU model
// ---------------------------------------------------------------------------

Outcome euler_strong_error() {
    const auto start = std::chrono::steady_clock::now();
    const double T = 1.0, theta = 1.0, sigma = 1.0, x0 = 1.0, a = 0.75;
    std::vector<double> ns, errs;
    for (std::size_t n = 8; n <= 256; n *= 2) {
        const auto grid = TimeGrid::build(T, T * std::pow(double(n), -a), n);
        ns.push_back(double(n));
        errs.push_back(ou_strong_error(theta, sigma, x0, grid, 100000, 11));
    }
    const double slope = log_log_fit(ns, errs).slope;
    const double runtime = seconds_since(start);
    return {slope >= -1.2 && slope <= -0.8 && runtime < 120.0,
            fmt("slope %.3f (target [-1.2, -0.8]), error %.3e -> %.3e, %.1f s", slope, errs.front(), errs.back(),
                runtime)};
}

// ---------------------------------------------------------------------------
// 4. Linear case
// ---------------------------------------------------------------------------

Outcome linear_exactness() {
    const auto start = std::chrono::steady_clock::now();
    const auto pb = make_problem("linear");
    SchemeConfig cfg;
    cfg.n = 8;
    cfg.paths = 100000;
    cfg.engine.basis = RegressionBasis::polynomial(1);
    cfg.seed = 4;
    const auto res = solve(pb, cfg);
    const auto rep = discretization_error(res.solution, pb, *pb.reference, 4000, cfg.seed);
    const double runtime = seconds_since(start);
    return {rep.e_total < 1e-6 && runtime < 60.0,
            fmt("e_total %.3e (e_Y %.3e, e_Z %.3e), %.1f s", rep.e_total, rep.e_Y, rep.e_Z, runtime)};
}

// ---------------------------------------------------------------------------
// 5. Mollifier sup-error law
// ---------------------------------------------------------------------------

Outcome mollifier_law() {
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::ostringstream detail;
    for (double alpha : {0.3, 0.5, 0.7}) {
        TerminalCondition term;
        term.g = [alpha](std::span<const double> x) { return std::pow(std::abs(x[0]), alpha); };
        term.M_g = kInfinity;
        term.regularity = Regularity::holder;
        term.K_g = 1.0;
        term.alpha = alpha;
        term.breakpoints = {0.0};
        const Box box = Box::interval(-2.0, 2.0);
        std::vector<double> Ns, errs;
        for (double N = 2.0; N <= 64.0; N *= 2.0) {
            const auto res = suggested_mollifier_resolution(term, N, box, 0.01);
            const auto gN = mollify_terminal(term, N, box, res);
            // g - g_N is maximal near x* = (alpha / N)^{1/(1-alpha)}; scan a
            // logarithmic neighbourhood of both signs.
            const double xs = std::pow(alpha / N, 1.0 / (1.0 - alpha));
            double sup = 0.0;
            for (int i = -2000; i <= 2000; ++i) {
                const double x = xs * std::pow(10.0, double(i) / 2000.0);
                for (double s : {-1.0, 1.0}) {
                    const double p = s * x;
                    sup = std::max(sup, term.g(std::span<const double>(&p, 1)) - gN(std::span<const double>(&p, 1)));
                }
            }
            Ns.push_back(N);
            errs.push_back(sup);
        }
        const auto fit = log_log_fit(Ns, errs);
        const double p_expected = -alpha / (1.0 - alpha);
        const double c_expected = (1.0 - alpha) * std::pow(alpha, alpha / (1.0 - alpha));
        const double c_fit = std::exp(fit.intercept);
        const bool this_ok = std::abs(fit.slope / p_expected - 1.0) <= 0.05 && std::abs(c_fit / c_expected - 1.0) <= 0.05;
        ok = ok && this_ok;
        detail << fmt("alpha=%.1f exponent %.4f (%.4f) constant %.4f (%.4f); ", alpha, fit.slope, p_expected, c_fit,
                      c_expected);
    }
    const double runtime = seconds_since(start);
    detail << fmt("%.2f s", runtime);
    return {ok && runtime < 30.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 6 and 7. Quadratic-driver convergence and projection activity
// ---------------------------------------------------------------------------

struct ConvergenceRun {
    std::size_t n = 0;
    ErrorReport report;
    std::vector<double> active_fraction;  // per step
    std::vector<double> distance_to_T;    // T - t_{k+1}
    double y0 = 0.0;
    double y0_se = 0.0;
    double y0_free = 0.0;                 // projection disabled
    std::size_t paths = 0;
};

struct ConvergenceStudy {
    std::vector<ConvergenceRun> runs;
    double runtime = 0.0;
};

const ConvergenceStudy& convergence_study() {
    static std::optional<ConvergenceStudy> cached;
    if (cached) return *cached;
    const auto start = std::chrono::steady_clock::now();
    const auto pb = make_problem("cole_hopf_holder", {{"gamma", 1.0}, {"sigma", 1.0}, {"alpha", 0.5}});
    const auto sel = select_scheme_parameters_for_K(0.5, 0.0);
    ConvergenceStudy study;
    const std::vector<std::size_t> ns{8, 16, 32, 64, 128};
    for (const std::size_t n : ns) {
        SchemeConfig cfg;
        cfg.n = n;
        cfg.a = sel.a;
        cfg.b = sel.b;
        cfg.K = sel.K;
        cfg.paths = 100000;
        cfg.engine.basis = RegressionBasis::local(100, 1);
        cfg.seed = 2024;
        cfg.projection = calibrate_projection(pb, cfg).params;
        const auto res = solve(pb, cfg);
        ConvergenceRun run;
        run.n = n;
        run.paths = cfg.paths;
        run.report = discretization_error(res.solution, pb, *pb.reference, 4000, cfg.seed);
        for (std::size_t k = 0; k < res.grid.num_steps(); ++k) {
            run.active_fraction.push_back(res.solution.diagnostics(k).projection_active_fraction);
            run.distance_to_T.push_back(pb.T - res.grid.time(k + 1));
        }
        run.y0 = res.solution.y0();
        run.y0_se = res.solution.y0_standard_error();
        if (n == ns.back()) {
            cfg.projection_enabled = false;
            run.y0_free = solve(pb, cfg).solution.y0();
        }
        std::cerr << fmt("  n=%zu e_total=%.4e (e_Y %.3e, e_Z %.3e) y0=%.6f [%.1f s]\n", n, run.report.e_total,
                         run.report.e_Y, run.report.e_Z, run.y0, seconds_since(start));
        study.runs.push_back(std::move(run));
    }
    study.runtime = seconds_since(start);
    cached = std::move(study);
    return *cached;
}

Outcome quadratic_convergence() {
    const auto& study = convergence_study();
    std::vector<double> ns, errs;
    bool decreasing = true;
    std::ostringstream detail;
    for (std::size_t i = 0; i < study.runs.size(); ++i) {
        ns.push_back(double(study.runs[i].n));
        errs.push_back(study.runs[i].report.e_total);
        if (i > 0) decreasing = decreasing && errs[i] < errs[i - 1];
        detail << fmt("%.3e ", errs[i]);
    }
    const double slope = log_log_fit(ns, errs).slope;
    detail << fmt("| strictly decreasing: %s, slope %.3f (<= -0.25), %.0f s", decreasing ? "yes" : "no", slope,
                  study.runtime);
    return {decreasing && slope <= -0.25 && study.runtime < 1800.0, detail.str()};
}

Outcome projection_activity() {
    const auto& study = convergence_study();
    bool below_half = true, monotone = true;
    double worst_fraction = 0.0, worst_inversion = 0.0;
    for (const auto& run : study.runs) {
        const auto& f = run.active_fraction;
        // The active fraction is a Monte Carlo proportion, so an inversion
        // between a step and any later one is tolerated up to three binomial
        // standard errors.
        for (std::size_t k = 0; k < f.size(); ++k) {
            below_half = below_half && f[k] < 0.5;
            worst_fraction = std::max(worst_fraction, f[k]);
            for (std::size_t j = k + 1; j < f.size(); ++j) {
                const double p = std::max(f[k], 1.0 / double(run.paths));
                const double tol = 3.0 * std::sqrt(p * (1.0 - p) / double(run.paths));
                const double excess = f[k] - f[j];
                if (excess > tol) monotone = false;
                worst_inversion = std::max(worst_inversion, excess);
            }
        }
    }
    const auto& last = study.runs.back();
    const double shift = std::abs(last.y0 - last.y0_free);
    const bool consistent = shift < 3.0 * last.y0_se;
    return {below_half && monotone && consistent,
            fmt("max active fraction %.4f%s, largest inversion %.2e (%s), |Y0 - Y0_free| = %.2e vs 3 SE = %.2e",
                worst_fraction, worst_fraction == 0.0 ? " (radius never reached)" : "", worst_inversion, monotone ? "within noise" : "significant", shift, 3.0 * last.y0_se)};
}

// ---------------------------------------------------------------------------
// 8. Zhang blow-up
// ---------------------------------------------------------------------------

Outcome zhang_blowup() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> tau, z;
    for (double t : {0.9, 0.99, 0.999, 0.9999}) {
        tau.push_back(1.0 - t);
        z.push_back(std::abs(zhang_gradient(t)));
    }
    const double slope = log_log_fit(tau, z).slope;
    const double runtime = seconds_since(start);
    return {std::abs(slope + 0.125) <= 0.01 && runtime < 5.0, fmt("slope %.4f (target -0.125), %.3f s", slope, runtime)};
}

// ---------------------------------------------------------------------------
// 9. Bounded-Z two-dimensional example
// ---------------------------------------------------------------------------

Outcome bounded_z_example() {
    const auto start = std::chrono::steady_clock::now();
    const auto ex = bounded_z_2d_default();
    const double bound = ex.g_sup * std::sqrt(2.0 / std::numbers::pi) * 1.01;
    std::vector<double> ts;
    for (int i = 0; i < 10; ++i) ts.push_back(0.1 * i);
    for (double t : {0.95, 0.99, 0.995, 0.999, 0.9995, 0.9999}) ts.push_back(t);
    double worst = 0.0;
    for (double t : ts)
        for (int i = -12; i <= 12; ++i)
            for (int j = -12; j <= 12; ++j) {
                const double x[2] = {0.25 * i, 0.25 * j};
                worst = std::max(worst, std::abs(bounded_z_2d(t, x, ex)[0]));
            }
    std::vector<double> d2;
    for (double t : {0.9, 0.99, 0.999}) {
        const double x[2] = {0.0, 0.0};
        d2.push_back(bounded_z_2d(t, x, ex)[1]);
    }
    const bool increasing = d2[0] < d2[1] && d2[1] < d2[2];
    const double runtime = seconds_since(start);
    return {worst <= bound && increasing && runtime < 10.0,
            fmt("sup |du/dx1| %.5f <= %.5f; du/dx2(t,0) = %.4f, %.4f, %.4f; %.2f s", worst, bound, d2[0], d2[1], d2[2],
                runtime)};
}

// ---------------------------------------------------------------------------
// 10. Assumption checker
// ---------------------------------------------------------------------------

Outcome assumption_checker() {
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::ostringstream detail;
    for (const char* name : {"linear", "cole_hopf_lipschitz", "ou"}) {
        const auto pb = make_problem(name, {{"sigma", 1.0}});
        const auto pts = sample_points(pb.T, pb.test_box, 100, 3);
        const auto rep = check_hx1(pb.model, numerical_drift_jacobian(pb.model), pts);
        const auto& c = pb.model.constants;
        const double expected = c.M_sigma * c.K_b + c.K_sigma;
        const bool this_ok = rep.holds && rep.lambda && std::abs(*rep.lambda - expected) <= 1e-12 * (1.0 + expected);
        ok = ok && this_ok;
        detail << fmt("%s lambda %.3g (%.3g); ", name, rep.lambda.value_or(NAN), expected);
    }
    const auto pb = make_problem("bounded2d");
    const auto pts = sample_points(pb.T, pb.test_box, 200, 5);
    const auto rep = check_hx1(pb.model, numerical_drift_jacobian(pb.model), pts);
    std::size_t with_h = 0, failing_with_h = 0, failing_without_h = 0;
    for (const auto& p : pts) with_h += p.t < 1.0;
    for (const auto& f : rep.failing) (f.t < 1.0 ? failing_with_h : failing_without_h) += 1;
    const bool fails_everywhere = !rep.holds && failing_with_h == with_h && failing_without_h == 0;
    ok = ok && fails_everywhere;
    const double runtime = seconds_since(start);
    detail << fmt("2D model fails (ii) at %zu of %zu points with h > 0, %zu elsewhere; %.3f s", failing_with_h, with_h,
                  failing_without_h, runtime);
    return {ok && runtime < 1.0, detail.str()};
}

// ---------------------------------------------------------------------------
// 11. Path regularity statistic
// ---------------------------------------------------------------------------

Outcome path_regularity() {
    const auto start = std::chrono::steady_clock::now();
    const double T = 1.0;
    const auto lin = make_problem("linear");
    const std::size_t n0 = 10;
    const ZFn z_t = [](double t, std::span<const double>, std::span<double> out) { out[0] = t; };
    const auto det = path_regularity_statistic(z_t, TimeGrid::uniform(T, n0), lin.model, 2000, 1);
    const double expected = T * T * T / (12.0 * double(n0 * n0));
    const double rel = std::abs(det.value / expected - 1.0);

    const auto ch = make_problem("cole_hopf_lipschitz");
    const ZFn z_ref = [&](double t, std::span<const double> x, std::span<double> out) { ch.reference->z(t, x, out); };
    double lo = INFINITY, hi = 0.0;
    std::ostringstream ratios;
    for (std::size_t n = 8; n <= 128; n *= 2) {
        const auto grid = TimeGrid::uniform(T, n);
        const auto stat = path_regularity_statistic(z_ref, grid, ch.model, 20000, 7);
        const double r = stat.value / stat.delta_n;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        ratios << fmt("%.4g ", r);
    }
    const double runtime = seconds_since(start);
    return {rel < 0.01 && hi / lo < 3.0 && runtime < 300.0,
            fmt("Z = t: %.6e vs %.6e (rel %.1e); S/delta_n = %s(max/min %.3f); %.1f s", det.value, expected, rel,
                ratios.str().c_str(), hi / lo, runtime)};
}

// ---------------------------------------------------------------------------
// 12. Determinism
// ---------------------------------------------------------------------------

std::string data_columns(const std::string& csv) {
    std::istringstream in(csv);
    std::vector<std::string> header;
    const auto cols = parse_csv(in, header);
    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "runtime_s") continue;
        out += header[c] + ":";
        for (const auto& v : cols[c]) out += v + ",";
        out += "\n";
    }
    return out;
}

Outcome determinism() {
    const auto start = std::chrono::steady_clock::now();
    const auto cfg = StudyConfig::from_json(nlohmann::json::parse(R"({
        "problem": "cole_hopf_holder", "subquadratic": true, "n": [8, 16, 32], "paths": 20000, "eval_paths": 1000,
        "engine": {"kind": "regression", "basis": {"family": "local", "cells_per_axis": 40, "degree": 1}},
        "projection": {"calibrate": true, "pilot_paths": 5000}, "seeds": [5, 6]
    })"));
    std::ostringstream a, b;
    write_study_csv(a, run_convergence_study(cfg));
    write_study_csv(b, run_convergence_study(cfg));
    const bool same = data_columns(a.str()) == data_columns(b.str());
    const double runtime = seconds_since(start);
    return {same, fmt("two runs of a 6-row study: data columns %s; %.1f s", same ? "byte-identical" : "DIFFER", runtime)};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria of the qbsde library"};
    std::vector<int> selected;
    std::string results_path;
    app.add_option("criteria", selected, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 12));
    app.add_option("--results", results_path, "Append the result lines to this file");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "grid exactness", grid_exactness},
        {2, "lemma grid products", lemma_products},
        {3, "Euler strong-error shape", euler_strong_error},
        {4, "linear-case exactness", linear_exactness},
        {5, "mollifier law", mollifier_law},
        {6, "quadratic-driver convergence", quadratic_convergence},
        {7, "projection activity", projection_activity},
        {8, "Zhang blow-up", zhang_blowup},
        {9, "bounded-Z 2D example", bounded_z_example},
        {10, "assumption checker", assumption_checker},
        {11, "path-regularity statistic", path_regularity},
        {12, "determinism", determinism},
    };
    if (selected.empty())
        for (const auto& c : criteria) selected.push_back(c.id);

    std::ofstream results;
    if (!results_path.empty()) results.open(results_path, std::ios::app);
    bool all = true;
    for (const int id : selected) {
        const auto& c = criteria[static_cast<std::size_t>(id - 1)];
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        all = all && out.pass;
        const std::string line = fmt("[%s] %2d %s: ", out.pass ? "PASS" : "FAIL", c.id, c.name) + out.detail;
        std::cout << line << std::endl;
        if (results) results << line << '\n';
    }
    return all ? 0 : 1;
}
