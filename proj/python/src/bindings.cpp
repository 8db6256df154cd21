#include "qbsde/analysis.hpp"
#include "qbsde/builtins.hpp"
#include "qbsde/cli.hpp"
#include "qbsde/oracles.hpp"
#include "qbsde/scheme.hpp"
#include "qbsde/study.hpp"
#include "qbsde/timegrid.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace qbsde;

// Structured inputs and outputs cross the boundary as JSON text; the Python
// package wraps these entry points with dict-based helpers.

namespace {

nlohmann::json parse(const std::string& text) { return text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text); }

std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

std::string study_csv(const std::vector<StudyRow>& rows) {
    std::ostringstream out;
    write_study_csv(out, rows);
    return out.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Projected least-squares schemes for quadratic BSDEs";

    py::register_exception<RegressionError>(m, "RegressionError", PyExc_RuntimeError);

    py::class_<TimeGrid>(m, "TimeGrid")
        .def_static("build", &TimeGrid::build, py::arg("T"), py::arg("eps"), py::arg("n"))
        .def_static("build_reduced", &TimeGrid::build_reduced, py::arg("T"), py::arg("eps"), py::arg("n"), py::arg("c"))
        .def_static("build_with_tail", &TimeGrid::build_with_tail, py::arg("T"), py::arg("eps"), py::arg("n"),
                    py::arg("tail_steps"))
        .def_static("uniform", &TimeGrid::uniform, py::arg("T"), py::arg("n"))
        .def_property_readonly("horizon", &TimeGrid::horizon)
        .def_property_readonly("eps", &TimeGrid::switch_eps)
        .def_property_readonly("n", &TimeGrid::n)
        .def_property_readonly("num_steps", &TimeGrid::num_steps)
        .def_property_readonly("switch_index", &TimeGrid::switch_index)
        .def_property_readonly("tail_steps", &TimeGrid::tail_steps)
        .def_property_readonly("times", [](const TimeGrid& g) { return to_vector(g.times()); })
        .def_property_readonly("steps", [](const TimeGrid& g) { return to_vector(g.steps()); })
        .def("__len__", [](const TimeGrid& g) { return g.times().size(); })
        .def("__repr__", [](const TimeGrid& g) {
            return "<TimeGrid T=" + format_double(g.horizon()) + " eps=" + format_double(g.switch_eps()) +
                   " steps=" + std::to_string(g.num_steps()) + ">";
        });

    m.def("max_step", &max_step, py::arg("grid"));
    m.def("lemma_product_uniform", &lemma_product_uniform, py::arg("grid"), py::arg("M"));
    m.def("lemma_product_singular", &lemma_product_singular, py::arg("grid"), py::arg("M1"), py::arg("M2"));

    py::class_<ProblemSpec>(m, "Problem")
        .def_readonly("name", &ProblemSpec::name)
        .def_readonly("T", &ProblemSpec::T)
        .def_property_readonly("dim", [](const ProblemSpec& p) { return p.model.dim; })
        .def_property_readonly("x0", [](const ProblemSpec& p) { return p.model.x0; })
        .def_property_readonly("has_reference", [](const ProblemSpec& p) { return p.reference.has_value(); })
        .def("terminal", [](const ProblemSpec& p, std::vector<double> x) { return p.terminal.g(x); }, py::arg("x"))
        .def(
            "reference_y",
            [](const ProblemSpec& p, double t, std::vector<double> x) {
                if (!p.reference) throw std::invalid_argument("problem '" + p.name + "' has no reference solution");
                return p.reference->y(t, x);
            },
            py::arg("t"), py::arg("x"))
        .def(
            "reference_z",
            [](const ProblemSpec& p, double t, std::vector<double> x) {
                if (!p.reference || !p.reference->has_z())
                    throw std::invalid_argument("problem '" + p.name + "' has no reference Z");
                std::vector<double> z(p.model.dim);
                p.reference->z(t, x, z);
                return z;
            },
            py::arg("t"), py::arg("x"))
        .def("__repr__", [](const ProblemSpec& p) { return "<Problem " + p.name + ">"; });

    m.def("builtin_problem_names", &builtin_problem_names);
    m.def(
        "_make_problem", [](const std::string& name, const std::string& params) { return make_problem(name, parse(params)); },
        py::arg("name"), py::arg("params_json") = "");
    m.def(
        "_problem_from_json", [](const std::string& text) { return problem_from_json(nlohmann::json::parse(text)); },
        py::arg("text"));

    py::class_<SolveResult>(m, "SolveResult")
        .def_readonly("grid", &SolveResult::grid)
        .def_readonly("runtime_s", &SolveResult::runtime_s)
        .def_property_readonly("y0", [](const SolveResult& r) { return r.solution.y0(); })
        .def_property_readonly("y0_standard_error", [](const SolveResult& r) { return r.solution.y0_standard_error(); })
        .def_property_readonly("N", [](const SolveResult& r) { return r.params.N; })
        .def_property_readonly("eps", [](const SolveResult& r) { return r.params.eps; })
        .def(
            "y", [](const SolveResult& r, std::size_t k, std::vector<double> x) { return r.solution.y(k, x); },
            py::arg("k"), py::arg("x"))
        .def(
            "z",
            [](const SolveResult& r, std::size_t k, std::vector<double> x, bool projected) {
                std::vector<double> z(r.solution.dim());
                r.solution.z(k, x, z, projected);
                return z;
            },
            py::arg("k"), py::arg("x"), py::arg("projected") = true)
        .def("radius", [](const SolveResult& r, std::size_t k) { return r.solution.radius(k); }, py::arg("k"))
        .def("projection_active_fraction",
             [](const SolveResult& r) {
                 std::vector<double> out;
                 for (const auto& d : r.solution.diagnostics()) out.push_back(d.projection_active_fraction);
                 return out;
             })
        .def("_solution_json", [](const SolveResult& r) { return r.solution.to_json().dump(); });

    m.def(
        "_solve",
        [](const ProblemSpec& problem, const std::string& config) {
            py::gil_scoped_release release;
            return solve(problem, scheme_config_from_json(parse(config)));
        },
        py::arg("problem"), py::arg("config_json") = "");
    m.def(
        "_discretization_error",
        [](const SolveResult& result, const ProblemSpec& problem, std::size_t eval_paths, std::uint64_t seed) {
            if (!problem.reference)
                throw std::invalid_argument("problem '" + problem.name + "' has no reference solution");
            py::gil_scoped_release release;
            return discretization_error(result.solution, problem, *problem.reference, eval_paths, seed).to_json().dump();
        },
        py::arg("result"), py::arg("problem"), py::arg("eval_paths") = 4000, py::arg("seed") = 1);
    m.def("evaluation_seed", &evaluation_seed, py::arg("seed"));

    m.def(
        "_run_study",
        [](const std::string& config) {
            const auto cfg = StudyConfig::from_json(parse(config));
            py::gil_scoped_release release;
            return study_csv(run_convergence_study(cfg));
        },
        py::arg("config_json"));
    m.def(
        "_fit_rate",
        [](std::vector<double> n, std::vector<double> e) { return fit_rate(n, e).to_json().dump(); },
        py::arg("n"), py::arg("errors"));

    m.def("zhang_value", &zhang_value, py::arg("t"), py::arg("x"));
    m.def("zhang_gradient", &zhang_gradient, py::arg("t"));
    m.def(
        "bounded_z_2d",
        [](double t, std::vector<double> x) {
            const auto g = bounded_z_2d(t, x, bounded_z_2d_default());
            return std::vector<double>{g[0], g[1]};
        },
        py::arg("t"), py::arg("x"));

    m.def(
        "select_scheme_parameters_for_K",
        [](double alpha, double K) {
            const auto s = select_scheme_parameters_for_K(alpha, K);
            return py::dict(py::arg("a") = s.a, py::arg("b") = s.b, py::arg("K") = s.K, py::arg("rate") = s.rate);
        },
        py::arg("alpha"), py::arg("K"));

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
