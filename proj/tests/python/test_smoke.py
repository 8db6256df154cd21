import math

import pytest

import qbsde


def test_grid_worked_example():
    grid = qbsde.TimeGrid.build(1.0, 0.25, 2)
    assert grid.times == [0.0, 0.5, 0.75, 0.875, 1.0]
    assert grid.num_steps == 4
    assert grid.switch_index == 2
    assert qbsde.max_step(grid) == 0.5


def test_grid_rejects_bad_arguments():
    with pytest.raises(ValueError):
        qbsde.TimeGrid.build(1.0, 2.0, 4)


def test_lemma_products():
    grid = qbsde.TimeGrid.build(1.0, 1.0 / 64, 64)
    assert qbsde.lemma_product_uniform(grid, 0.0) == 1.0
    assert qbsde.lemma_product_singular(grid, 0.0, 0.5) > 1.0


def test_builtin_problems():
    names = qbsde.builtin_problem_names()
    for expected in ("cole_hopf_holder", "linear", "zhang", "bounded2d"):
        assert expected in names
    with pytest.raises(ValueError, match="cole_hopf_holder"):
        qbsde.make_problem("nope")


def test_problem_reference_values():
    lin = qbsde.make_problem("linear")
    assert lin.dim == 1
    assert lin.reference_y(0.3, [0.4]) == pytest.approx(0.4)
    assert lin.reference_z(0.3, [0.4]) == pytest.approx([1.0])
    ch = qbsde.make_problem("cole_hopf_holder", gamma=1.0, alpha=0.5)
    assert ch.has_reference
    assert ch.terminal([4.0]) == pytest.approx(1.0)


def test_solve_linear_problem_is_exact():
    pb = qbsde.make_problem("linear")
    res = qbsde.solve(pb, {"n": 4, "paths": 5000, "engine": {"basis": {"family": "polynomial", "degree": 1}}})
    assert res.y0 == pytest.approx(0.0, abs=1e-10)
    assert res.z(0, [0.3]) == pytest.approx([1.0])
    rep = qbsde.discretization_error(res, pb, eval_paths=500, seed=3)
    assert rep["e_total"] < 1e-6
    assert rep["z_available"] is True


def test_solve_is_deterministic():
    cfg = {"n": 4, "paths": 2000, "seed": 9}
    a = qbsde.solve("cole_hopf_holder", cfg)
    b = qbsde.solve("cole_hopf_holder", cfg)
    assert a.y0 == b.y0
    assert len(a.projection_active_fraction()) == a.grid.num_steps


def test_study_and_rate():
    rows = qbsde.run_study(
        {"problem": "linear", "n": [2, 4, 8], "paths": 1000, "eval_paths": 100,
         "engine": {"basis": {"family": "polynomial", "degree": 1}}}
    )
    assert [int(r["n"]) for r in rows] == [2, 4, 8]
    fit = qbsde.fit_rate([8, 16, 32], [1 / 8, 1 / 16, 1 / 32])
    assert fit["slope"] == pytest.approx(-1.0)


def test_oracles():
    assert qbsde.zhang_value(0.5, 0.0) == pytest.approx(0.0, abs=1e-10)
    assert qbsde.zhang_gradient(0.99) > qbsde.zhang_gradient(0.9)
    g = qbsde.bounded_z_2d(0.5, [0.0, 0.0])
    assert abs(g[0]) <= math.sqrt(2 / math.pi)


def test_cli_entry_point():
    code, out, err = qbsde.run_cli(["grid", "--T", "1", "--eps", "0.25", "--n", "2"])
    assert code == 0
    assert out.startswith("# times (5)\n0\n0.5\n")
    code, _, err = qbsde.run_cli(["counterexample", "nope", "--t", "0.5"])
    assert code != 0
