import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ipmot.errors import ConfigError, InfeasibleStart, NonFiniteObjective
from ipmot.optim import (
    SolverConfig,
    accelerated_pgd,
    mirror_descent_simplex,
    pgd_nonneg,
    pgd_simplex,
    project_simplex,
)

TIGHT = SolverConfig(rel_tol=1e-14, max_iters=20000)


def quadratic(center):
    center = np.asarray(center, dtype=float)
    return lambda x: (float(np.sum((x - center) ** 2)), 2 * (x - center))


def test_pgd_origin():
    x, trace = pgd_nonneg(quadratic([0.0, 0.0]), np.array([1.0, 1.0]), TIGHT)
    assert trace.values[-1] <= 1e-8
    assert trace.converged and trace.is_monotone()


def test_pgd_interior_minimum():
    x, _ = pgd_nonneg(quadratic([3.0]), np.array([0.0]), TIGHT)
    assert x[0] == pytest.approx(3.0, abs=1e-4)


def test_pgd_active_constraint():
    x, _ = pgd_nonneg(quadratic([-1.0]), np.array([2.0]), TIGHT)
    assert x[0] == 0.0


def test_pgd_rejects_infeasible_start():
    with pytest.raises(InfeasibleStart):
        pgd_nonneg(quadratic([0.0]), np.array([-1.0]))
    with pytest.raises(InfeasibleStart):
        pgd_simplex(quadratic([0.0, 0.0]), np.array([0.5, 0.6]))
    with pytest.raises(InfeasibleStart):
        mirror_descent_simplex(quadratic([0.0, 0.0]), np.array([0.5, 0.6]))


def test_nonfinite_start_raises():
    with pytest.raises(NonFiniteObjective):
        pgd_nonneg(lambda x: (np.nan, x), np.array([1.0]))


def test_mirror_linear_vertex():
    c = np.array([0.0, 1.0])
    x, trace = mirror_descent_simplex(lambda x: (float(c @ x), c), np.array([0.5, 0.5]), TIGHT)
    assert x[0] > 1 - 1e-6
    assert trace.is_monotone()


def test_mirror_constant_objective():
    x0 = np.array([0.2, 0.8])
    x, trace = mirror_descent_simplex(lambda x: (3.0, np.zeros(2)), x0)
    np.testing.assert_array_equal(x, x0)
    assert trace.converged and trace.iterations_used == 1


def test_mirror_center():
    x, _ = mirror_descent_simplex(quadratic([0.5, 0.5]), np.array([0.9, 0.1]), TIGHT)
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-4)


def test_mirror_blocks_keep_their_totals():
    groups = np.array([0, 0, 1, 1, 1])
    total = np.array([1.0, 2.0])
    x0 = np.array([0.5, 0.5, 0.5, 1.0, 0.5])
    target = np.array([1.0, 0.0, 0.0, 0.0, 5.0])
    x, _ = mirror_descent_simplex(quadratic(target), x0, TIGHT, total, groups)
    np.testing.assert_allclose([x[:2].sum(), x[2:].sum()], total, rtol=1e-12)
    np.testing.assert_allclose(x, [1, 0, 0, 0, 2], atol=1e-4)


def test_pgd_simplex_blocks():
    groups = np.array([0, 0, 1, 1])
    x0 = np.array([0.5, 0.5, 0.0, 0.0])
    x, _ = pgd_simplex(quadratic([0.8, 0.8, 1.0, 1.0]), x0, TIGHT, np.array([1.0, 0.0]), groups)
    np.testing.assert_allclose(x, [0.5, 0.5, 0.0, 0.0], atol=1e-9)


@pytest.mark.parametrize("total", [None, 1.0])
def test_accelerated_matches_plain(total):
    rng = np.random.default_rng(3)
    A = rng.normal(size=(8, 6))
    b = rng.normal(size=8)

    def fun(x):
        r = A @ x - b
        return float(r @ r), 2 * A.T @ r

    x0 = np.full(6, 1.0 / 6)
    plain = pgd_nonneg(fun, x0, TIGHT) if total is None else pgd_simplex(fun, x0, TIGHT, total)
    fast = accelerated_pgd(fun, x0, TIGHT, total)
    assert fast[1].is_monotone()
    assert fast[1].values[-1] == pytest.approx(plain[1].values[-1], rel=1e-6, abs=1e-10)


@pytest.mark.parametrize("v, expected", [([0.5, 0.5], [0.5, 0.5]), ([2.0, 0.0], [1.0, 0.0]), ([1.0, 1.0], [0.5, 0.5])])
def test_project_simplex_by_hand(v, expected):
    np.testing.assert_allclose(project_simplex(np.array(v)), expected, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, st.integers(1, 8), elements=st.floats(-10, 10)), st.floats(0.1, 10))
def test_project_simplex_properties(v, total):
    x = project_simplex(v, total)
    assert np.all(x >= 0)
    assert x.sum() == pytest.approx(total, rel=1e-12)
    # optimality: v - x is constant on the support and no larger off it
    d = v - x
    on = x > 1e-12
    assert np.ptp(d[on]) < 1e-9 * max(1.0, np.max(np.abs(v)))
    if np.any(~on):
        assert np.max(d[~on]) <= np.min(d[on]) + 1e-9 * max(1.0, np.max(np.abs(v)))
    np.testing.assert_allclose(project_simplex(x, total), x, atol=1e-12 * total)


def test_project_simplex_rejects_nonpositive_total():
    with pytest.raises(ConfigError):
        project_simplex(np.array([1.0]), 0.0)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(max_iters=0)
    with pytest.raises(ConfigError):
        SolverConfig(method="newton")
    with pytest.raises(ConfigError):
        SolverConfig(armijo_c=1.5)
    cfg = SolverConfig().replace(rel_tol=1e-3)
    assert cfg.rel_tol == 1e-3 and cfg.to_dict()["rel_tol"] == 1e-3


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(float, 4, elements=st.floats(-3, 3)), hnp.arrays(float, 4, elements=st.floats(0, 1)))
def test_traces_are_monotone(center, x0):
    fun = quadratic(center)
    for solver in (pgd_nonneg, accelerated_pgd):
        _, trace = solver(fun, x0, SolverConfig(max_iters=200))
        assert trace.is_monotone()
