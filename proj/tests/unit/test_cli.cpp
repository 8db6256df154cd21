#include "doctest.h"

#include "qbsde/cli.hpp"
#include "qbsde/study.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace qbsde;

namespace {

struct CliRun {
    int code = 0;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::filesystem::path temp_file(const std::string& name, const std::string& content = {}) {
    const auto dir = std::filesystem::temp_directory_path() / "qbsde_unit";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    if (!content.empty()) std::ofstream(path) << content;
    return path;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

std::string drop_runtime_column(const std::string& csv) {
    std::istringstream in(csv);
    std::vector<std::string> header;
    const auto cols = parse_csv(in, header);
    std::string flat;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "runtime_s") continue;
        for (const auto& v : cols[c]) flat += v + ";";
    }
    return flat;
}

}  // namespace

TEST_CASE("grid subcommand prints the worked example") {
    const auto r = run({"grid", "--T", "1", "--eps", "0.25", "--n", "2"});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("# times (5)\n0\n0.5\n0.75\n0.875\n1\n", 0) == 0);
    CHECK(r.out.find("lemma_product_singular") != std::string::npos);
}

TEST_CASE("counterexample subcommand") {
    const auto r = run({"counterexample", "zhang", "--t", "0.9,0.99,0.999"});
    CHECK(r.code == 0);
    CHECK(count_lines(r.out) == 4);
    CHECK(r.out.rfind("t,", 0) == 0);
    const auto b = run({"counterexample", "bounded2d", "--t", "0.9,0.99"});
    CHECK(b.code == 0);
    CHECK(count_lines(b.out) == 3);
    CHECK(run({"counterexample", "other", "--t", "0.5"}).code != 0);
}

TEST_CASE("sweep without a reference solution fails with a diagnostic") {
    const auto cfg = temp_file("no_oracle.json", R"({"problem": "bounded2d", "n": [4, 8], "paths": 500})");
    const auto r = run({"sweep", "--config", cfg.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("reference") != std::string::npos);
}

TEST_CASE("unknown problem names list the built-ins") {
    const auto r = run({"check-assumptions", "--problem", "nope"});
    CHECK(r.code == 2);
    CHECK(r.err.find("cole_hopf_holder") != std::string::npos);
    CHECK(r.err.find("bounded2d") != std::string::npos);
}

TEST_CASE("check-assumptions reports") {
    const auto r = run({"check-assumptions", "--problem", "bounded2d", "--samples", "50"});
    CHECK(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["hx1"]["holds"] == false);
}

TEST_CASE("fit_rate on synthetic rows") {
    const std::vector<double> n{8, 16, 32, 64};
    std::vector<double> e1, e2;
    for (double v : n) {
        e1.push_back(1.0 / v);
        e2.push_back(4.0 * std::pow(v, -0.5));
    }
    const auto f1 = fit_rate(n, e1);
    CHECK(std::abs(f1.slope + 1.0) < 1e-9);
    CHECK(f1.r2 == doctest::Approx(1.0));
    const auto f2 = fit_rate(n, e2);
    CHECK(f2.slope == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(f2.intercept == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    e1[1] = 0.0;
    CHECK_THROWS_AS(fit_rate(n, e1), std::invalid_argument);
    CHECK_THROWS_AS(fit_rate(std::vector<double>{1, 2}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST_CASE("study over n = 8, 16: rows, metadata, theoretical rate and determinism") {
    const std::string config = R"({
        "problem": "cole_hopf_holder", "subquadratic": true, "n": [8, 16], "paths": 4000, "eval_paths": 300,
        "engine": {"kind": "regression", "basis": {"family": "local"}}, "seeds": [3]
    })";
    const auto cfg = StudyConfig::from_json(nlohmann::json::parse(config));
    const auto rows = run_convergence_study(cfg);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        CHECK(row.error.empty());
        CHECK(row.rate_theory == doctest::Approx(0.5));
        CHECK(row.report.e_total > 0.0);
        CHECK(row.report.runtime_s > 0.0);
        CHECK(row.report.N > 0.0);
        CHECK(row.report.eps > 0.0);
    }
    CHECK(rows[0].report.n == 8);
    CHECK(rows[1].report.n == 16);
    CHECK(rows[1].report.runtime_s >= rows[0].report.runtime_s * 0.5);

    std::ostringstream a, b;
    write_study_csv(a, rows);
    write_study_csv(b, run_convergence_study(cfg));
    CHECK(a.str().rfind(study_csv_header() + "\n", 0) == 0);
    CHECK(study_csv_header().rfind("n,N,eps,a,b,K,e_total,e_Y,e_Z,e1_q1,e1_q2,e2_q1,e2_q2,half_width,seed,runtime_s,error", 0) == 0);
    CHECK(drop_runtime_column(a.str()) == drop_runtime_column(b.str()));
}

TEST_CASE("reduced-grid study reports ceil(n^c) tail steps") {
    const std::string config = R"({
        "problem": {"name": "cole_hopf_holder", "alpha": 0.5}, "K": 1.0, "grid": {"variant": "reduced"},
        "n": [8, 32], "paths": 2000, "eval_paths": 100
    })";
    const auto cfg = StudyConfig::from_json(nlohmann::json::parse(config));
    const auto sel = select_scheme_parameters_for_K(0.5, 1.0);
    const double c = 1.0 - sel.a - 2.0 * sel.b;
    REQUIRE(c > 0.0);
    const auto rows = run_convergence_study(cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].tail_steps == static_cast<std::size_t>(std::ceil(std::pow(8.0, c))));
    CHECK(rows[1].tail_steps == static_cast<std::size_t>(std::ceil(std::pow(32.0, c))));
}

TEST_CASE("study configuration validation") {
    CHECK_THROWS_AS(StudyConfig::from_json(nlohmann::json::parse(R"({"n": []})")), std::invalid_argument);
    CHECK_THROWS_AS(StudyConfig::from_json(nlohmann::json::parse(R"({"n": [16, 8]})")), std::invalid_argument);
    CHECK_THROWS_AS(StudyConfig::from_json(nlohmann::json::parse(R"({"n": [8, 16], "paths": [10, 20, 30]})")),
                    std::invalid_argument);
    const auto round = StudyConfig::from_json(StudyConfig::from_json(nlohmann::json::parse(R"({"n": [4, 8]})")).to_json());
    CHECK(round.n_values == std::vector<std::size_t>{4, 8});
}

TEST_CASE("sweep, rate and solve subcommands end to end") {
    const auto csv = temp_file("sweep.csv");
    const auto cfg = temp_file("sweep.json", R"({"problem": "linear", "n": [2, 4, 8], "paths": 2000, "eval_paths": 200,
        "engine": {"basis": {"family": "polynomial", "degree": 1}}})");
    const auto s = run({"sweep", "--config", cfg.string(), "--csv", csv.string()});
    CHECK(s.code == 0);
    std::ifstream in(csv);
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(count_lines(buf.str()) == 4);

    const auto solve_cfg = temp_file("solve.json", R"({"problem": "cole_hopf_holder", "scheme": {"n": 4, "paths": 2000}, "eval_paths": 200})");
    const auto r = run({"solve", "--config", solve_cfg.string()});
    CHECK(r.code == 0);
    const auto report = nlohmann::json::parse(r.out);
    CHECK(report.contains("error"));

    const auto bad = run({"rate", "--csv", temp_file("missing.csv").string() + ".absent"});
    CHECK(bad.code == 2);
}

TEST_CASE("CSV parsing handles quoted fields") {
    std::istringstream in("a,b\n1,\"x, y\"\n2,\"say \"\"hi\"\"\"\n");
    std::vector<std::string> header;
    const auto cols = parse_csv(in, header);
    CHECK(header == std::vector<std::string>{"a", "b"});
    CHECK(cols[1][0] == "x, y");
    CHECK(cols[1][1] == "say \"hi\"");
}
