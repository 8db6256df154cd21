#include "qbsde/study.hpp"

#include "qbsde/builtins.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace qbsde {
namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

ZBoundParams zbounds_from_json(const nlohmann::json& j) {
    ZBoundParams zb;
    auto read = [&j](const char* key, double fallback) {
        if (!j.contains(key)) return fallback;
        const auto& v = j.at(key);
        if (v.is_string() && v.get<std::string>() == "inf") return kInfinity;
        return v.get<double>();
    };
    zb.M_z1 = read("M_z1", zb.M_z1);
    zb.M_z2 = read("M_z2", zb.M_z2);
    zb.M_z3 = read("M_z3", zb.M_z3);
    zb.validate();
    return zb;
}

nlohmann::json zbounds_to_json(const ZBoundParams& zb) {
    auto v = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"); };
    return {{"M_z1", v(zb.M_z1)}, {"M_z2", v(zb.M_z2)}, {"M_z3", v(zb.M_z3)}};
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

GridVariant grid_variant_from_string(const std::string& name) {
    if (name == "full") return GridVariant::full;
    if (name == "reduced") return GridVariant::reduced;
    if (name == "uniform") return GridVariant::uniform;
    throw std::invalid_argument("unknown grid variant '" + name + "' (expected full, reduced or uniform)");
}

std::string to_string(GridVariant variant) {
    switch (variant) {
        case GridVariant::reduced: return "reduced";
        case GridVariant::uniform: return "uniform";
        case GridVariant::full:
        default: return "full";
    }
}

EngineSpec engine_from_json(const nlohmann::json& j) {
    EngineSpec e;
    const std::string kind = j.value("kind", std::string("regression"));
    if (kind == "regression") {
        e.kind = EngineKind::regression;
    } else if (kind == "quadrature") {
        e.kind = EngineKind::quadrature;
    } else {
        throw std::invalid_argument("unknown engine kind '" + kind + "'");
    }
    if (j.contains("basis")) e.basis = j.at("basis").get<RegressionBasis>();
    e.nodes_per_axis = j.value("nodes_per_axis", e.nodes_per_axis);
    e.gh_order = j.value("gh_order", e.gh_order);
    if (j.contains("space_box")) {
        e.space_box = Box(j.at("space_box").at("lower").get<std::vector<double>>(),
                          j.at("space_box").at("upper").get<std::vector<double>>());
    }
    return e;
}

nlohmann::json engine_to_json(const EngineSpec& engine) {
    nlohmann::json j = {{"kind", engine.kind == EngineKind::regression ? "regression" : "quadrature"},
                        {"basis", engine.basis},
                        {"nodes_per_axis", engine.nodes_per_axis},
                        {"gh_order", engine.gh_order}};
    if (engine.space_box) j["space_box"] = {{"lower", engine.space_box->lower}, {"upper", engine.space_box->upper}};
    return j;
}

SchemeConfig scheme_config_from_json(const nlohmann::json& j) {
    SchemeConfig c;
    c.n = j.value("n", c.n);
    c.a = j.value("a", c.a);
    c.b = j.value("b", c.b);
    c.K = j.value("K", c.K);
    c.eta = j.value("eta", c.eta);
    if (j.contains("eps")) c.eps = j.at("eps").get<double>();
    if (j.contains("N")) c.N = j.at("N").get<double>();
    if (j.contains("variant")) c.variant = grid_variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("tail_exponent")) c.tail_exponent = j.at("tail_exponent").get<double>();
    if (j.contains("tail_steps")) c.tail_steps = j.at("tail_steps").get<std::size_t>();
    if (j.contains("projection")) {
        const auto& p = j.at("projection");
        c.projection_enabled = p.value("enabled", true);
        if (p.contains("M_z1") || p.contains("M_z2")) c.projection = zbounds_from_json(p);
    }
    c.cap_enabled = j.value("cap", c.cap_enabled);
    c.clip_y = j.value("clip_y", c.clip_y);
    c.paths = j.value("paths", c.paths);
    if (j.contains("engine")) c.engine = engine_from_json(j.at("engine"));
    c.seed = j.value("seed", c.seed);
    c.mollifier_resolution = j.value("mollifier_resolution", c.mollifier_resolution);
    if (c.variant == GridVariant::reduced && !c.tail_exponent && !c.tail_steps) {
        c.tail_exponent = 1.0 - c.a - 2.0 * c.b;
    }
    return c;
}

// ---------------------------------------------------------------------------

StudyConfig StudyConfig::from_json(const nlohmann::json& j) {
    StudyConfig c;
    if (j.contains("problem")) c.problem = j.at("problem");
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    c.eta = j.value("eta", c.eta);
    c.subquadratic = j.value("subquadratic", c.subquadratic);
    if (j.contains("K")) c.K = j.at("K").get<double>();
    if (j.contains("a")) c.a = j.at("a").get<double>();
    if (j.contains("b")) c.b = j.at("b").get<double>();
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        c.variant = grid_variant_from_string(g.value("variant", std::string("full")));
        if (g.contains("c")) c.tail_exponent = g.at("c").get<double>();
    }
    if (j.contains("n")) c.n_values = j.at("n").get<std::vector<std::size_t>>();
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.paths = p.is_array() ? p.get<std::vector<std::size_t>>() : std::vector<std::size_t>{p.get<std::size_t>()};
    }
    c.eval_paths = j.value("eval_paths", c.eval_paths);
    if (j.contains("engine")) c.engine = engine_from_json(j.at("engine"));
    if (j.contains("projection")) {
        const auto& p = j.at("projection");
        c.projection.enabled = p.value("enabled", true);
        c.projection.calibrate = p.value("calibrate", false);
        c.projection.safety = p.value("safety", c.projection.safety);
        c.projection.pilot_paths = p.value("pilot_paths", c.projection.pilot_paths);
        if (p.contains("M_z1") || p.contains("M_z2")) c.projection.params = zbounds_from_json(p);
    }
    c.cap = j.value("cap", c.cap);
    c.clip_y = j.value("clip_y", c.clip_y);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("seed")) c.seeds = {j.at("seed").get<std::uint64_t>()};
    if (j.contains("output")) {
        const auto& o = j.at("output");
        c.csv_path = o.value("csv", std::string());
        c.json_path = o.value("json", std::string());
    }
    c.validate();
    return c;
}

nlohmann::json StudyConfig::to_json() const {
    nlohmann::json j;
    j["problem"] = problem;
    if (alpha) j["alpha"] = *alpha;
    j["eta"] = eta;
    j["subquadratic"] = subquadratic;
    if (K) j["K"] = *K;
    if (a) j["a"] = *a;
    if (b) j["b"] = *b;
    j["grid"] = {{"variant", to_string(variant)}};
    if (tail_exponent) j["grid"]["c"] = *tail_exponent;
    j["n"] = n_values;
    j["paths"] = paths;
    j["eval_paths"] = eval_paths;
    j["engine"] = engine_to_json(engine);
    nlohmann::json p = {{"enabled", projection.enabled},
                        {"calibrate", projection.calibrate},
                        {"safety", projection.safety},
                        {"pilot_paths", projection.pilot_paths}};
    if (projection.params) p.update(zbounds_to_json(*projection.params));
    j["projection"] = p;
    j["cap"] = cap;
    j["clip_y"] = clip_y;
    j["seeds"] = seeds;
    j["output"] = {{"csv", csv_path}, {"json", json_path}};
    return j;
}

void StudyConfig::validate() const {
    if (n_values.empty()) throw std::invalid_argument("study: n list must be nonempty");
    for (std::size_t i = 0; i < n_values.size(); ++i) {
        if (n_values[i] == 0) throw std::invalid_argument("study: n must be positive");
        if (i > 0 && n_values[i] <= n_values[i - 1]) {
            throw std::invalid_argument("study: n list must be strictly increasing");
        }
    }
    if (paths.empty() || (paths.size() != 1 && paths.size() != n_values.size())) {
        throw std::invalid_argument("study: paths must have one entry or one per n");
    }
    for (auto p : paths) {
        if (p < 2) throw std::invalid_argument("study: paths must be at least 2");
    }
    if (eval_paths < 2) throw std::invalid_argument("study: eval_paths must be at least 2");
    if (seeds.empty()) throw std::invalid_argument("study: seeds must be nonempty");
    if (a.has_value() != b.has_value()) throw std::invalid_argument("study: give both a and b or neither");
    if (eta < 0.0) throw std::invalid_argument("study: eta must be nonnegative");
}

std::size_t StudyConfig::paths_for(std::size_t index) const { return paths.size() == 1 ? paths[0] : paths[index]; }

ParameterSelection study_parameters(const StudyConfig& cfg, const ProblemSpec& problem) {
    double alpha = 1.0;
    if (cfg.alpha) {
        alpha = *cfg.alpha;
    } else if (problem.terminal.regularity == Regularity::holder) {
        alpha = problem.terminal.alpha;
    }
    double K = 0.0;
    if (cfg.K) {
        K = *cfg.K;
    } else if (!cfg.subquadratic) {
        const double L = problem.driver.constants.L_fz;
        const double M2 = cfg.projection.params ? cfg.projection.params->M_z2 : problem.z_bounds.M_z2;
        K = 4.0 * (1.0 + cfg.eta) * L * L * M2 * M2;
    }
    ParameterSelection sel;
    if (alpha < 1.0) {
        sel = select_scheme_parameters_for_K(alpha, K);
    } else {
        // alpha -> 1 limit of the same balance: no mollification needed.
        sel.K = K;
        sel.b = 0.0;
        sel.a = 1.0 / (2.0 + K);
        sel.rate = 2.0 / (2.0 + K);
    }
    if (cfg.a) {
        sel.a = *cfg.a;
        sel.b = *cfg.b;
    }
    return sel;
}

std::vector<StudyRow> run_convergence_study(const StudyConfig& cfg) {
    cfg.validate();
    const ProblemSpec problem = problem_from_json(cfg.problem);
    if (!problem.reference) {
        throw std::invalid_argument("sweep requires a reference solution (oracle), but problem '" + problem.name +
                                    "' has none");
    }
    const ParameterSelection sel = study_parameters(cfg, problem);
    std::vector<StudyRow> rows;
    for (std::size_t i = 0; i < cfg.n_values.size(); ++i) {
        for (const auto seed : cfg.seeds) {
            StudyRow row;
            row.rate_theory = sel.rate;
            SchemeConfig sc;
            sc.n = cfg.n_values[i];
            sc.a = sel.a;
            sc.b = sel.b;
            sc.K = sel.K;
            sc.eta = cfg.eta;
            sc.variant = cfg.variant;
            if (cfg.variant == GridVariant::reduced) {
                sc.tail_exponent = cfg.tail_exponent ? *cfg.tail_exponent : reduced_tail_exponent(sel);
            }
            sc.paths = cfg.paths_for(i);
            sc.engine = cfg.engine;
            sc.seed = seed;
            sc.cap_enabled = cfg.cap;
            sc.clip_y = cfg.clip_y;
            sc.projection_enabled = cfg.projection.enabled;
            if (cfg.projection.params) sc.projection = cfg.projection.params;
            auto& rep = row.report;
            rep.n = sc.n;
            rep.a = sc.a;
            rep.b = sc.b;
            rep.K = sc.K;
            rep.seed = seed;
            try {
                const SchemeParams params = scheme_params(problem, sc);
                rep.N = params.N;
                rep.eps = params.eps;
                if (cfg.projection.enabled && cfg.projection.calibrate) {
                    sc.projection =
                        calibrate_projection(problem, sc, cfg.projection.pilot_paths, cfg.projection.safety).params;
                }
                const SolveResult result = solve(problem, sc);
                row.tail_steps = result.grid.tail_steps();
                rep = discretization_error(result.solution, problem, *problem.reference, cfg.eval_paths, seed);
                rep.runtime_s += result.runtime_s;
            } catch (const std::exception& e) {
                row.error = e.what();
                rep.e_total = rep.e_Y = rep.e_Z = rep.e3 = std::numeric_limits<double>::quiet_NaN();
                rep.e1_q1 = rep.e1_q2 = rep.e2_q1 = rep.e2_q2 = rep.half_width = std::numeric_limits<double>::quiet_NaN();
            }
            rows.push_back(std::move(row));
        }
    }
    if (!cfg.csv_path.empty()) {
        std::ofstream out(cfg.csv_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + cfg.csv_path);
        write_study_csv(out, rows);
    }
    return rows;
}

const std::string& study_csv_header() {
    static const std::string header =
        "n,N,eps,a,b,K,e_total,e_Y,e_Z,e1_q1,e1_q2,e2_q1,e2_q2,half_width,seed,runtime_s,error,rate_theory,tail_steps";
    return header;
}

void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows) {
    out << study_csv_header() << '\n';
    for (const auto& row : rows) {
        const auto& r = row.report;
        const bool ok = row.error.empty();
        out << r.n << ',' << csv_number(r.N) << ',' << csv_number(r.eps) << ',' << csv_number(r.a) << ','
            << csv_number(r.b) << ',' << csv_number(r.K) << ',' << csv_number(r.e_total) << ',' << csv_number(r.e_Y)
            << ',' << (ok && r.z_available ? csv_number(r.e_Z) : std::string()) << ',' << csv_number(r.e1_q1) << ','
            << csv_number(r.e1_q2) << ',' << csv_number(r.e2_q1) << ',' << csv_number(r.e2_q2) << ','
            << csv_number(r.half_width) << ',' << r.seed << ',' << csv_number(r.runtime_s) << ','
            << csv_escape(row.error) << ',' << csv_number(row.rate_theory) << ',' << row.tail_steps << '\n';
    }
}

// ---------------------------------------------------------------------------

nlohmann::json RateFit::to_json() const {
    return {{"slope", slope}, {"intercept", intercept}, {"r2", r2}, {"points", points}};
}

RateFit fit_rate(std::span<const double> n, std::span<const double> errors) {
    if (n.size() != errors.size()) throw std::invalid_argument("fit_rate: length mismatch");
    if (n.size() < 3) throw std::invalid_argument("fit_rate: need at least 3 points");
    const std::size_t m = n.size();
    Eigen::MatrixXd A(static_cast<Eigen::Index>(m), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        if (!(errors[i] > 0.0) || !std::isfinite(errors[i])) {
            throw std::invalid_argument("fit_rate: errors must be positive and finite");
        }
        if (!(n[i] > 0.0)) throw std::invalid_argument("fit_rate: n must be positive");
        A(static_cast<Eigen::Index>(i), 0) = 1.0;
        A(static_cast<Eigen::Index>(i), 1) = std::log(n[i]);
        y(static_cast<Eigen::Index>(i)) = std::log(errors[i]);
    }
    const Eigen::Vector2d coef = A.colPivHouseholderQr().solve(y);
    RateFit fit;
    fit.intercept = coef(0);
    fit.slope = coef(1);
    fit.points = m;
    const Eigen::VectorXd resid = y - A * coef;
    const double ss_tot = (y.array() - y.mean()).square().sum();
    fit.r2 = ss_tot > 0.0 ? 1.0 - resid.squaredNorm() / ss_tot : 1.0;
    return fit;
}

std::vector<std::vector<std::string>> parse_csv(std::istream& in, std::vector<std::string>& header) {
    auto split = [](const std::string& line) {
        std::vector<std::string> fields;
        std::string cur;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cur += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        fields.push_back(cur);
        return fields;
    };
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("csv: empty document");
    header = split(line);
    std::vector<std::vector<std::string>> columns(header.size());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != header.size()) throw std::invalid_argument("csv: row has the wrong number of fields");
        for (std::size_t i = 0; i < fields.size(); ++i) columns[i].push_back(std::move(fields[i]));
    }
    return columns;
}

RateFit fit_rate(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::invalid_argument("fit_rate: cannot open " + csv_path);
    std::vector<std::string> header;
    const auto columns = parse_csv(in, header);
    auto find = [&header](const std::string& name) -> std::ptrdiff_t {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
        }
        return -1;
    };
    const auto in_col = find("n");
    const auto e_col = find("e_total");
    const auto err_col = find("error");
    if (in_col < 0 || e_col < 0) throw std::invalid_argument("fit_rate: CSV needs n and e_total columns");
    std::vector<double> n, e;
    for (std::size_t r = 0; r < columns[static_cast<std::size_t>(in_col)].size(); ++r) {
        if (err_col >= 0 && !columns[static_cast<std::size_t>(err_col)][r].empty()) continue;
        n.push_back(std::stod(columns[static_cast<std::size_t>(in_col)][r]));
        const std::string& v = columns[static_cast<std::size_t>(e_col)][r];
        e.push_back(v.empty() ? 0.0 : std::stod(v));
    }
    return fit_rate(n, e);
}

}  // namespace qbsde
