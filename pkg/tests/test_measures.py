import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ipmot.errors import DimensionMismatch, NegativeWeight, NonFiniteInput
from ipmot.measures import SIMPLEX, DiscreteMeasure, TransportPlan, marginals, uniform_measure


def test_marginals_of_zero_plan():
    m = marginals(TransportPlan(np.zeros((2, 2))))
    np.testing.assert_array_equal(m.row_marginal, [0, 0])
    np.testing.assert_array_equal(m.col_marginal, [0, 0])


def test_marginals_of_identity_plan():
    m = marginals(np.eye(2))
    np.testing.assert_array_equal(m.row_marginal, [1, 1])
    np.testing.assert_array_equal(m.col_marginal, [1, 1])


def test_marginals_by_hand():
    m = marginals(np.array([[0.2, 0.3], [0.1, 0.4]]))
    np.testing.assert_allclose(m.row_marginal, [0.5, 0.5])
    np.testing.assert_allclose(m.col_marginal, [0.3, 0.7])


@pytest.mark.parametrize("n, mass, expected", [(4, 1.0, 0.25), (100, 5.0, 0.05), (1, 0.0, 0.0)])
def test_uniform_measure(n, mass, expected):
    mu = uniform_measure(np.arange(n, dtype=float), mass)
    np.testing.assert_allclose(mu.weights, np.full(n, expected))
    assert mu.total_mass == pytest.approx(mass, rel=1e-12, abs=0)
    assert mu.dim == 1 and mu.size == n


def test_measure_rejects_bad_input():
    with pytest.raises(NegativeWeight):
        DiscreteMeasure([[0.0], [1.0]], [0.5, -0.1])
    with pytest.raises(NonFiniteInput):
        DiscreteMeasure([[0.0], [np.nan]], [0.5, 0.5])
    with pytest.raises(DimensionMismatch):
        DiscreteMeasure([[0.0], [1.0]], [1.0])


def test_measure_is_read_only():
    mu = uniform_measure(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mu.weights[0] = 2.0


def test_simplex_plan_must_sum_to_one():
    TransportPlan(np.full((2, 2), 0.25), mode=SIMPLEX)
    with pytest.raises(ValueError):
        TransportPlan(np.full((2, 2), 0.3), mode=SIMPLEX)


def test_plan_rejects_negative_entries():
    with pytest.raises(ValueError):
        TransportPlan(np.array([[0.5, -0.1]]))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(0, 10, allow_nan=False)))
def test_marginals_preserve_mass(alpha):
    m = marginals(alpha)
    assert m.row_marginal.sum() == pytest.approx(alpha.sum(), rel=1e-12, abs=1e-12)
    assert m.col_marginal.sum() == pytest.approx(alpha.sum(), rel=1e-12, abs=1e-12)
