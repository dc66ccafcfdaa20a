import numpy as np
import pytest

from ipmot.errors import ConfigError, DimensionMismatch, NumericalUnderflow, SupportViolation
from ipmot.kernels import CostSpec, cost_matrix
from ipmot.kl_uot import KlUotProblem, kl_uot_loss, solve_kl_uot
from ipmot.measures import DiscreteMeasure, uniform_measure


def singletons(m1=1.0, m2=1.0):
    return DiscreteMeasure([[0.0]], [m1]), DiscreteMeasure([[0.0]], [m2])


def test_geometric_mean_fixed_point():
    mu, nu = singletons(1.0, 4.0)
    rep = solve_kl_uot(KlUotProblem(mu, nu, [[0.0]], 1.0, 1.0, 1e-4, max_iters=500000, log_domain=True))
    assert rep.plan.mass == pytest.approx(2.0, abs=1e-3)
    assert rep.converged


def test_unit_cost_singleton():
    mu, nu = singletons()
    rep = solve_kl_uot(KlUotProblem(mu, nu, [[1.0]], 1.0, 1.0, 1e-4, max_iters=500000, log_domain=True))
    assert rep.plan.mass == pytest.approx(np.exp(-0.5), abs=1e-3)


def test_unit_cost_grid_search():
    # the eps -> 0 objective pi + KL(pi|1) + KL(pi|1) over a fine grid
    grid = np.arange(1e-6, 2.0, 1e-6)
    f = grid + 2 * (grid * np.log(grid) - grid + 1)
    assert grid[np.argmin(f)] == pytest.approx(np.exp(-0.5), abs=1e-5)


def test_self_transport_is_diagonal(rng):
    X = rng.normal(size=(4, 1)) * 3
    mu = uniform_measure(X)
    C = cost_matrix(X, X, CostSpec(p=2))
    rep = solve_kl_uot(KlUotProblem(mu, mu, C, 1e4, 1e4, 1e-3, max_iters=100000, log_domain=True))
    alpha = rep.plan.alpha
    assert np.sum(alpha - np.diag(np.diag(alpha))) < 1e-3
    kl1, kl2 = rep.marginal_residuals
    assert kl1 < 1e-6 and kl2 < 1e-6


def test_linear_and_log_domain_agree(rng):
    mu = DiscreteMeasure(rng.normal(size=(5, 2)), rng.uniform(0.2, 1, 5))
    nu = DiscreteMeasure(rng.normal(size=(4, 2)), rng.uniform(0.2, 1, 4))
    C = cost_matrix(mu.points, nu.points, CostSpec(p=2))
    lin = solve_kl_uot(KlUotProblem(mu, nu, C, 1.0, 2.0, 0.5, log_domain=False))
    log = solve_kl_uot(KlUotProblem(mu, nu, C, 1.0, 2.0, 0.5, log_domain=True))
    np.testing.assert_allclose(lin.plan.alpha, log.plan.alpha, rtol=1e-7, atol=1e-14)
    assert lin.method == "scaling" and log.method == "log-scaling"


def test_report_terms(rng):
    mu = DiscreteMeasure(rng.normal(size=(3, 1)), rng.uniform(0.2, 1, 3))
    nu = DiscreteMeasure(rng.normal(size=(3, 1)), rng.uniform(0.2, 1, 3))
    pb = KlUotProblem(mu, nu, cost_matrix(mu.points, nu.points, CostSpec()), 2.0, 3.0, 0.1)
    rep = solve_kl_uot(pb)
    cost, kl1, kl2 = kl_uot_loss(rep.plan.alpha, pb)
    assert rep.loss_value == pytest.approx(cost + 2.0 * kl1 + 3.0 * kl2)
    assert rep.extras["entropy_term"] >= 0
    assert np.all(rep.plan.alpha > 0)


def test_linear_domain_underflow_is_reported():
    mu, nu = singletons(1.0, 4.0)
    with pytest.raises(NumericalUnderflow):
        solve_kl_uot(KlUotProblem(mu, nu, [[50.0]], 1.0, 1.0, 1e-3, log_domain=False))


def test_auto_switches_to_log_domain():
    mu, nu = singletons()
    assert KlUotProblem(mu, nu, [[1.0]], epsilon=1e-4).uses_log_domain()
    assert not KlUotProblem(mu, nu, [[1.0]], epsilon=0.1).uses_log_domain()


def test_validation():
    mu, nu = singletons()
    with pytest.raises(SupportViolation):
        solve_kl_uot(KlUotProblem(DiscreteMeasure([[0.0], [1.0]], [1.0, 0.0]), nu, [[0.0], [1.0]]))
    with pytest.raises(DimensionMismatch):
        KlUotProblem(mu, nu, [[0.0, 1.0]])
    with pytest.raises(ConfigError):
        KlUotProblem(mu, nu, [[0.0]], epsilon=0.0)
    with pytest.raises(ConfigError):
        KlUotProblem(mu, nu, [[0.0]], max_iters=0)
