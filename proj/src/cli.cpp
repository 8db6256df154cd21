#include "qbsde/cli.hpp"

#include "qbsde/analysis.hpp"
#include "qbsde/builtins.hpp"
#include "qbsde/study.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace qbsde {
namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);
    return nlohmann::json::parse(in);
}

void write_text(const std::string& path, const std::string& text, std::ostream& fallback) {
    if (path.empty()) {
        fallback << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file " + path);
    out << text;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(std::stod(item));
    }
    return values;
}

nlohmann::json constant_check_json(const ConstantCheck& c) {
    return {{"name", c.name},
            {"holds", c.holds},
            {"samples", c.samples},
            {"violations", c.violations},
            {"worst_ratio", c.worst_ratio}};
}

nlohmann::json finite_or_string(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf"); }

nlohmann::json params_json(const SchemeParams& p) {
    return {{"n", p.n}, {"a", p.a}, {"b", p.b}, {"N", p.N}, {"eps", p.eps}, {"K", p.K}, {"eta", p.eta},
            {"rate", p.rate}};
}

int cmd_solve(const std::string& config_path, const std::string& out_path, const std::string& dump_path,
              std::ostream& out) {
    const nlohmann::json cfg = read_json_file(config_path);
    const ProblemSpec problem = problem_from_json(cfg.value("problem", nlohmann::json("cole_hopf_holder")));
    SchemeConfig scheme = scheme_config_from_json(cfg.contains("scheme") ? cfg.at("scheme") : cfg);
    nlohmann::json report;
    report["problem"] = problem.name;
    if (cfg.contains("calibrate_projection")) {
        const auto& c = cfg.at("calibrate_projection");
        const auto cal =
            calibrate_projection(problem, scheme, c.value("pilot_paths", std::size_t{20000}), c.value("safety", 2.0));
        scheme.projection = cal.params;
        report["calibration"] = {{"C", cal.C}, {"C_prime", cal.C_prime}};
    }
    const SolveResult result = solve(problem, scheme);
    const auto& sol = result.solution;
    report["params"] = params_json(result.params);
    report["grid"] = {{"variant", to_string(result.grid.variant())},
                      {"steps", result.grid.num_steps()},
                      {"switch_index", result.grid.switch_index()},
                      {"tail_steps", result.grid.tail_steps()}};
    report["y0"] = sol.y0();
    report["y0_standard_error"] = sol.y0_standard_error();
    report["runtime_s"] = result.runtime_s;
    report["mollifier_boundary_hits"] = result.mollifier_boundary_hits;
    report["projection"] = {{"enabled", sol.options().projection_enabled},
                            {"M_z1", finite_or_string(sol.options().projection.M_z1)},
                            {"M_z2", sol.options().projection.M_z2},
                            {"z_cap", finite_or_string(sol.options().z_cap)},
                            {"y_bound", finite_or_string(sol.options().y_bound)}};
    nlohmann::json diag = nlohmann::json::array();
    for (std::size_t k = 0; k < result.grid.num_steps(); ++k) {
        const auto& d = sol.diagnostics(k);
        diag.push_back({{"k", k},
                        {"t", d.time},
                        {"radius", finite_or_string(d.radius)},
                        {"projection_active_fraction", d.projection_active_fraction},
                        {"cap_hits", d.cap_hits},
                        {"y_clip_hits", d.y_clip_hits},
                        {"z_raw_p99", d.z_raw_p99}});
    }
    report["diagnostics"] = diag;
    const std::size_t eval_paths = cfg.value("eval_paths", std::size_t{4000});
    if (problem.reference && eval_paths > 0) {
        report["error"] = discretization_error(sol, problem, *problem.reference, eval_paths, scheme.seed).to_json();
    }
    write_text(out_path, report.dump(2) + "\n", out);
    if (!dump_path.empty()) write_text(dump_path, sol.to_json().dump() + "\n", out);
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& csv_path, std::ostream& out) {
    StudyConfig cfg = StudyConfig::from_json(read_json_file(config_path));
    if (!csv_path.empty()) cfg.csv_path = csv_path;
    const std::string target = cfg.csv_path;
    cfg.csv_path.clear();
    const auto rows = run_convergence_study(cfg);
    std::ostringstream csv;
    write_study_csv(csv, rows);
    write_text(target, csv.str(), out);
    if (!cfg.json_path.empty()) {
        nlohmann::json j = {{"config", cfg.to_json()}, {"rows", nlohmann::json::array()}};
        for (const auto& r : rows) {
            nlohmann::json row = r.report.to_json();
            row["error"] = r.error;
            row["rate_theory"] = r.rate_theory;
            row["tail_steps"] = r.tail_steps;
            j["rows"].push_back(row);
        }
        write_text(cfg.json_path, j.dump(2) + "\n", out);
    }
    return 0;
}

int cmd_check(const std::string& problem_name, const std::string& config_path, std::size_t samples,
              std::uint64_t seed, const std::string& violations_path, std::ostream& out) {
    nlohmann::json spec = problem_name.empty() ? nlohmann::json() : nlohmann::json(problem_name);
    if (!config_path.empty()) spec = read_json_file(config_path).value("problem", spec);
    if (spec.is_null()) throw std::invalid_argument("check-assumptions needs --problem or --config");
    const ProblemSpec problem = problem_from_json(spec);
    const Box& box = problem.test_box;
    const double y_bound = a_priori_y_bound(problem.driver, problem.terminal, problem.T);
    nlohmann::json report;
    report["problem"] = problem.name;
    nlohmann::json sde = nlohmann::json::array();
    for (const auto& c : check_sde_constants(problem.model, problem.T, box, samples, seed)) {
        sde.push_back(constant_check_json(c));
    }
    report["sde_constants"] = sde;
    nlohmann::json drv = nlohmann::json::array();
    for (const auto& c : check_driver_constants(problem.driver, problem.T, box, std::isfinite(y_bound) ? y_bound : 10.0,
                                                5.0, problem.model.dim, samples, seed)) {
        drv.push_back(constant_check_json(c));
    }
    report["driver_constants"] = drv;
    report["terminal_bound"] = constant_check_json(check_terminal_bound(problem.terminal, box, samples, seed));
    const auto points = sample_points(problem.T, box, samples, seed);
    Hx1Options opts;
    opts.seed = seed;
    const AssumptionReport hx1 = check_hx1(problem.model, numerical_drift_jacobian(problem.model), points, opts);
    report["hx1"] = hx1.to_json();
    if (!violations_path.empty()) {
        std::ofstream csv(violations_path, std::ios::binary);
        if (!csv) throw std::runtime_error("cannot open output file " + violations_path);
        hx1.write_csv(csv);
    }
    out << report.dump(2) << "\n";
    return 0;
}

int cmd_counterexample(const std::string& which, const std::string& t_list, const std::string& x_list,
                       std::ostream& out) {
    const std::vector<double> ts = parse_list(t_list);
    if (ts.empty()) throw std::invalid_argument("counterexample: --t needs at least one time");
    if (which == "zhang") {
        std::vector<double> values;
        for (double t : ts) values.push_back(zhang_gradient(t));
        write_curve_csv(out, "zhang_gradient", ts, values);
        return 0;
    }
    if (which == "bounded2d") {
        std::vector<double> x = x_list.empty() ? std::vector<double>{0.0, 0.0} : parse_list(x_list);
        const BoundedZ2d ex = bounded_z_2d_default();
        out << "t,du_dx1,du_dx2\n";
        for (double t : ts) {
            const auto g = bounded_z_2d(t, x, ex);
            out << format_double(t) << ',' << format_double(g[0]) << ',' << format_double(g[1]) << '\n';
        }
        return 0;
    }
    throw std::invalid_argument("unknown counterexample '" + which + "' (expected zhang or bounded2d)");
}

int cmd_grid(double T, double eps, std::size_t n, const std::optional<double>& c,
             const std::optional<std::size_t>& tail, double M, double M1, double M2, std::ostream& out) {
    TimeGrid grid = tail ? TimeGrid::build_with_tail(T, eps, n, *tail)
                    : c  ? TimeGrid::build_reduced(T, eps, n, *c)
                         : TimeGrid::build(T, eps, n);
    out << "# times (" << grid.num_steps() + 1 << ")\n";
    grid.dump(out);
    out << "# switch_index " << grid.switch_index() << "\n";
    out << "# max_step " << format_double(max_step(grid)) << "\n";
    out << "# lemma_product_uniform(M=" << format_double(M) << ") " << format_double(lemma_product_uniform(grid, M))
        << "\n";
    out << "# lemma_product_singular(M1=" << format_double(M1) << ",M2=" << format_double(M2) << ") "
        << format_double(lemma_product_singular(grid, M1, M2)) << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Quadratic BSDE solver on non-uniform time nets", "qbsde"};
    app.require_subcommand(1);

    std::string config, out_path, dump_path, csv_path, problem_name, violations, which, t_list, x_list;
    std::size_t samples = 200;
    std::uint64_t seed = 7;

    auto* solve_cmd = app.add_subcommand("solve", "Single run, JSON report");
    solve_cmd->add_option("--config", config, "Run configuration (JSON)")->required();
    solve_cmd->add_option("--out", out_path, "Report path (default: stdout)");
    solve_cmd->add_option("--dump", dump_path, "Write per-step solution blocks (JSON)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Convergence study, CSV rows");
    sweep_cmd->add_option("--config", config, "Study configuration (JSON)")->required();
    sweep_cmd->add_option("--csv", csv_path, "CSV path (default: config output.csv or stdout)");

    auto* rate_cmd = app.add_subcommand("rate", "Fit log(e_total) against log(n)");
    rate_cmd->add_option("--csv", csv_path, "Study CSV")->required();

    auto* check_cmd = app.add_subcommand("check-assumptions", "Sampled constant checks and (HX1)");
    check_cmd->add_option("--problem", problem_name, "Built-in problem name");
    check_cmd->add_option("--config", config, "Configuration with a \"problem\" entry");
    check_cmd->add_option("--samples", samples, "Sample points");
    check_cmd->add_option("--seed", seed, "Sampling seed");
    check_cmd->add_option("--violations", violations, "CSV of failing (HX1) points");

    auto* cex_cmd = app.add_subcommand("counterexample", "Reference curves of the two examples, CSV");
    cex_cmd->add_option("which", which, "zhang or bounded2d")->required();
    cex_cmd->add_option("--t", t_list, "Comma-separated times")->required();
    cex_cmd->add_option("--x", x_list, "Comma-separated point (bounded2d, default 0,0)");

    double T = 1.0, eps = 0.25, M = 1.0, M1 = 0.0, M2 = 0.5;
    std::size_t n = 2;
    std::optional<double> c;
    std::optional<std::size_t> tail;
    auto* grid_cmd = app.add_subcommand("grid", "Print a time net and the lemma products");
    grid_cmd->add_option("--T", T, "Horizon")->required();
    grid_cmd->add_option("--eps", eps, "Length of the terminal interval")->required();
    grid_cmd->add_option("--n", n, "Geometric steps")->required();
    grid_cmd->add_option("--c", c, "Reduced tail exponent");
    grid_cmd->add_option("--tail-steps", tail, "Explicit tail step count");
    grid_cmd->add_option("--M", M, "Constant of the uniform product");
    grid_cmd->add_option("--M1", M1, "Constant M1 of the singular product");
    grid_cmd->add_option("--M2", M2, "Constant M2 of the singular product");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (solve_cmd->parsed()) return cmd_solve(config, out_path, dump_path, out);
        if (sweep_cmd->parsed()) return cmd_sweep(config, csv_path, out);
        if (rate_cmd->parsed()) {
            out << fit_rate(csv_path).to_json().dump(2) << "\n";
            return 0;
        }
        if (check_cmd->parsed()) return cmd_check(problem_name, config, samples, seed, violations, out);
        if (cex_cmd->parsed()) return cmd_counterexample(which, t_list, x_list, out);
        if (grid_cmd->parsed()) return cmd_grid(T, eps, n, c, tail, M, M1, M2, out);
    } catch (const std::exception& e) {
        err << "qbsde: error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace qbsde
