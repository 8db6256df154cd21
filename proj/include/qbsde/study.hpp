#pragma once

#include "qbsde/scheme.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qbsde {

/// {"kind": "regression" | "quadrature", "basis": {...}, "nodes_per_axis": 401, "gh_order": 32,
///  "space_box": {"lower": [...], "upper": [...]}}
EngineSpec engine_from_json(const nlohmann::json& j);
nlohmann::json engine_to_json(const EngineSpec& engine);

/// Single-run configuration; keys mirror the SchemeConfig fields
/// ("n", "a", "b", "K", "eta", "eps", "N", "variant", "tail_exponent",
/// "tail_steps", "projection", "cap", "clip_y", "paths", "engine", "seed",
/// "mollifier_resolution").
SchemeConfig scheme_config_from_json(const nlohmann::json& j);

GridVariant grid_variant_from_string(const std::string& name);
std::string to_string(GridVariant variant);

/// Projection settings of a study: fixed constants, the problem's defaults, or
/// a pilot calibration per n.
struct StudyProjection {
    bool enabled = true;
    bool calibrate = false;
    std::optional<ZBoundParams> params;
    double safety = 2.0;
    std::size_t pilot_paths = 20000;
};

struct StudyConfig {
    nlohmann::json problem = "cole_hopf_holder";  // name or {"name": ..., parameters}
    std::optional<double> alpha;                  // defaults to the terminal condition's exponent
    double eta = 0.0;
    bool subquadratic = false;                    // K = 0
    std::optional<double> K;                      // explicit K
    std::optional<double> a, b;                   // explicit exponents (skip the selection)
    GridVariant variant = GridVariant::full;
    std::optional<double> tail_exponent;          // reduced variant; defaults to 1 - a - 2b
    std::vector<std::size_t> n_values{8, 16};
    std::vector<std::size_t> paths{10000};        // one entry, or one per n
    std::size_t eval_paths = 4000;
    EngineSpec engine;
    StudyProjection projection;
    bool cap = true;
    bool clip_y = true;
    std::vector<std::uint64_t> seeds{1};
    std::string csv_path;
    std::string json_path;

    static StudyConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
    std::size_t paths_for(std::size_t index) const;
};

struct StudyRow {
    ErrorReport report;
    double rate_theory = 0.0;
    std::size_t tail_steps = 0;
    std::string error;  // empty on success
};

/// Exponents (a, b, K, rate) used for a study.
ParameterSelection study_parameters(const StudyConfig& cfg, const ProblemSpec& problem);

/// One row per (n, seed), in n order; failures are recorded in the error column.
/// Throws std::invalid_argument when the problem has no reference solution.
std::vector<StudyRow> run_convergence_study(const StudyConfig& cfg);

/// n,N,eps,a,b,K,e_total,e_Y,e_Z,e1_q1,e1_q2,e2_q1,e2_q2,half_width,seed,runtime_s,error,rate_theory,tail_steps
const std::string& study_csv_header();
void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t points = 0;

    nlohmann::json to_json() const;
};

/// Least-squares fit of log(e) against log(n); needs at least three points and
/// rejects non-positive errors.
RateFit fit_rate(std::span<const double> n, std::span<const double> errors);
/// Same on the e_total column of a study CSV; rows with an error message are skipped.
RateFit fit_rate(const std::string& csv_path);

/// Parses a CSV document with a header row into column vectors of strings.
std::vector<std::vector<std::string>> parse_csv(std::istream& in, std::vector<std::string>& header);

std::string format_double(double v);

}  // namespace qbsde
