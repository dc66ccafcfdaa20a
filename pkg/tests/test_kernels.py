import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ipmot.errors import ConfigError, DimensionMismatch
from ipmot.kernels import SQEUCLIDEAN, CostSpec, KernelSpec, cost_matrix, gram, median_heuristic, sq_distances

points = hnp.arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 3)),
                    elements=st.floats(-10, 10, allow_nan=False))


def test_gram_of_identical_points():
    np.testing.assert_array_equal(gram([[1.5, -2.0]], [[1.5, -2.0]], KernelSpec(0.7)), [[1.0]])


def test_gram_entry_by_hand():
    G = gram([[0.0]], [[2.0]], KernelSpec(0.5))
    assert G[0, 0] == pytest.approx(np.exp(-2.0), rel=1e-12)
    assert G[0, 0] == pytest.approx(0.135335, abs=1e-6)


def test_gram_three_points_is_psd():
    X = np.array([[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0]])
    G = gram(X, None, KernelSpec(1.0))
    np.testing.assert_array_equal(G, G.T)
    np.testing.assert_array_equal(np.diag(G), 1.0)
    np.linalg.cholesky(G)


@settings(max_examples=50, deadline=None)
@given(points, st.floats(0.01, 5))
def test_gram_entries_and_psd(X, gamma):
    G = gram(X, None, KernelSpec(gamma))
    assert np.all(G >= 0) and np.all(G <= 1)
    # entries only reach zero through floating-point underflow
    assert np.all(G[gamma * sq_distances(X) < 700] > 0)
    np.testing.assert_array_equal(np.diag(G), 1.0)
    v = np.random.default_rng(0).normal(size=(20, X.shape[0]))
    quad = np.einsum("ki,ij,kj->k", v, G, v)
    assert np.all(quad >= -1e-8 * np.sum(v * v, axis=1))


@pytest.mark.parametrize("x, y, spec, expected", [
    ([[0.3, 0.3]], [[0.3, 0.3]], CostSpec(), 0.0),
    ([[0.0, 0.0]], [[3.0, 4.0]], CostSpec(p=2), 25.0),
    ([[0.0]], [[7.0]], CostSpec(p=1), 7.0),
    ([[0.0, 0.0]], [[3.0, 4.0]], CostSpec(SQEUCLIDEAN), 25.0),
    ([[0.0, 0.0]], [[3.0, 4.0]], CostSpec(p=3), 125.0),
])
def test_cost_by_hand(x, y, spec, expected):
    assert cost_matrix(x, y, spec)[0, 0] == pytest.approx(expected, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(points)
def test_distances_nonnegative_with_zero_diagonal(X):
    d2 = sq_distances(X)
    assert np.all(d2 >= 0)
    np.testing.assert_array_equal(np.diag(d2), 0.0)
    np.testing.assert_array_equal(d2, d2.T)
    direct = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    np.testing.assert_allclose(d2, direct, rtol=1e-9, atol=1e-9 * max(1.0, np.max(X**2)))


def test_from_sigma_conventions():
    assert KernelSpec.from_sigma(2.0).gamma == pytest.approx(0.125)
    assert KernelSpec.from_sigma(2.0, "rate").gamma == 2.0
    with pytest.raises(ConfigError):
        KernelSpec.from_sigma(1.0, "width")


def test_invalid_specs():
    with pytest.raises(ConfigError):
        KernelSpec(0.0)
    with pytest.raises(ConfigError):
        KernelSpec(1.0, family="laplace")
    with pytest.raises(ConfigError):
        CostSpec(p=0.5)
    with pytest.raises(ConfigError):
        CostSpec(SQEUCLIDEAN, p=2)
    with pytest.raises(ConfigError):
        CostSpec("manhattan")
    with pytest.raises(DimensionMismatch):
        cost_matrix(np.zeros((2, 2)), np.zeros((2, 3)), CostSpec())


def test_root_power():
    assert CostSpec(p=2).root_power == 2.0
    assert CostSpec(SQEUCLIDEAN).root_power == 2.0
    assert CostSpec().root_power == 1.0


def test_median_heuristic():
    gamma = median_heuristic(np.array([[0.0], [1.0], [3.0]]))
    # pairwise distances 1, 2, 3 -> median 2
    assert gamma == pytest.approx(1.0 / 8.0)
    with pytest.raises(DimensionMismatch):
        median_heuristic(np.zeros((3, 1)))
