"""Python bindings of the qbsde library.

Configuration and reports are plain dictionaries with the same keys as the
JSON documents accepted by the ``qbsde`` command line tool.
"""

import csv
import io
import json

from ._core import (
    Problem,
    RegressionError,
    SolveResult,
    TimeGrid,
    bounded_z_2d,
    builtin_problem_names,
    evaluation_seed,
    lemma_product_singular,
    lemma_product_uniform,
    max_step,
    run_cli,
    select_scheme_parameters_for_K,
    zhang_gradient,
    zhang_value,
)
from . import _core

__all__ = [
    "Problem",
    "RegressionError",
    "SolveResult",
    "TimeGrid",
    "bounded_z_2d",
    "builtin_problem_names",
    "discretization_error",
    "evaluation_seed",
    "fit_rate",
    "lemma_product_singular",
    "lemma_product_uniform",
    "make_problem",
    "max_step",
    "run_cli",
    "run_study",
    "select_scheme_parameters_for_K",
    "solve",
    "zhang_gradient",
    "zhang_value",
]


def make_problem(name, **params):
    """Built-in problem by name; keyword arguments override its parameters."""
    return _core._make_problem(name, json.dumps(params))


def solve(problem, config=None):
    """Runs the projected scheme. ``config`` uses the single-run JSON keys."""
    if isinstance(problem, str):
        problem = make_problem(problem)
    return _core._solve(problem, json.dumps(config or {}))


def discretization_error(result, problem, eval_paths=4000, seed=1):
    """Error report of a solution against the problem's reference, as a dict."""
    return json.loads(_core._discretization_error(result, problem, eval_paths, seed))


def run_study(config):
    """Convergence study; returns the CSV rows as a list of dicts of strings."""
    text = _core._run_study(json.dumps(config))
    return list(csv.DictReader(io.StringIO(text)))


def fit_rate(n, errors):
    """Log-log least-squares fit of errors against n."""
    return json.loads(_core._fit_rate(list(map(float, n)), list(map(float, errors))))
