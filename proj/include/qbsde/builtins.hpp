#pragma once

#include "qbsde/scheme.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace qbsde {

/// Names accepted by `make_problem`.
std::vector<std::string> builtin_problem_names();

/**
 * Builds a named problem. `params` may override the documented parameters of
 * each family, e.g. {"gamma": 1, "sigma": 1, "T": 1, "alpha": 0.5, "x0": [0]}.
 *
 *   cole_hopf_holder    f = (gamma/2)|z|^2, g = min(|x|, 1)^alpha, X = x0 + sigma W
 *   cole_hopf_lipschitz f = (gamma/2)|z|^2, g = sin(x), X = x0 + sigma W
 *   linear              f = 0, g = x, X = x0 + sigma W
 *   ou                  f = 0, g = x, dX = -theta X dt + sigma dW
 *   zhang               f = 0, g = arctan(x / |x|^{3/4}), sigma(t) = (1 - t) 1_{t<1}, T = 2
 *   bounded2d           f = 0, g = g~(x^2), b = (0, (1 - t)^+ x^1), sigma = diag(1, 0), T = 2
 *   trivial             f = 0, g = c
 *
 * Unknown names raise std::invalid_argument listing the available ones.
 */
ProblemSpec make_problem(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

/// Accepts either a name string or an object {"name": ..., parameters...}.
ProblemSpec problem_from_json(const nlohmann::json& j);

/// Terminal condition min(|x|, 1)^alpha used by the Hölder Cole-Hopf problem.
TerminalCondition capped_power_terminal(double alpha);

}  // namespace qbsde
