import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import finite_difference, relative_error
from ipmot.discrepancy import kl_divergence, mmd_gradient_wrt_first, mmd_squared
from ipmot.errors import DimensionMismatch, SupportViolation
from ipmot.kernels import KernelSpec, gram


def test_identical_measures_have_zero_mmd():
    G = gram(np.array([[0.0], [1.0], [2.5]]), None, KernelSpec(0.8))
    w = np.array([0.2, 0.5, 0.3])
    v = mmd_squared(w, w, G, G, G)
    assert v.squared == pytest.approx(0.0, abs=1e-14)
    assert v.value == pytest.approx(0.0, abs=1e-7)


def test_two_diracs_by_hand():
    gamma = np.log(2.0)
    x, y = np.array([[0.0]]), np.array([[1.0]])
    k = KernelSpec(gamma)
    v = mmd_squared([1.0], [1.0], gram(x, x, k), gram(y, y, k), gram(x, y, k))
    assert v.squared == pytest.approx(1.0, rel=1e-12)
    assert v.value == pytest.approx(1.0, rel=1e-12)


def test_empty_second_measure():
    X = np.array([[0.0], [1.0]])
    G = gram(X, None, KernelSpec(1.0))
    w = np.array([0.3, 0.9])
    v = mmd_squared(w, np.zeros(2), G, G, G)
    assert v.squared == pytest.approx(w @ G @ w, rel=1e-12)


def test_gradient_vanishes_at_equality():
    G = gram(np.array([[0.0], [1.0]]), None, KernelSpec(1.0))
    w = np.array([0.4, 0.6])
    np.testing.assert_allclose(mmd_gradient_wrt_first(w, w, G, G), 0.0, atol=1e-15)


def test_scalar_gradient():
    a, b, g = 0.7, 1.3, 0.4
    grad = mmd_gradient_wrt_first([a], [b], [[1.0]], [[g]])
    assert grad[0] == pytest.approx(2 * (a - g * b))


def test_gradient_matches_finite_differences(rng):
    Xa, Xb = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    k = KernelSpec(0.6)
    Gaa, Gbb, Gab = gram(Xa, Xa, k), gram(Xb, Xb, k), gram(Xa, Xb, k)
    wa, wb = rng.uniform(0.1, 1, 4), rng.uniform(0.1, 1, 3)
    fd = finite_difference(lambda w: wa_mmd(w, wb, Gaa, Gbb, Gab), wa)
    assert relative_error(mmd_gradient_wrt_first(wa, wb, Gaa, Gab), fd) < 1e-6


def wa_mmd(w, wb, Gaa, Gbb, Gab):
    # unclamped quadratic form, smooth everywhere
    return w @ Gaa @ w + wb @ Gbb @ wb - 2 * w @ Gab @ wb


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, 5, elements=st.floats(0, 3)), hnp.arrays(float, 5, elements=st.floats(0, 3)))
def test_mmd_is_symmetric_and_nonnegative(wa, wb):
    X = np.linspace(0, 2, 5)[:, None]
    G = gram(X, None, KernelSpec(1.0))
    ab, ba = mmd_squared(wa, wb, G, G, G), mmd_squared(wb, wa, G, G, G)
    assert ab.squared >= 0
    assert ab.squared == pytest.approx(ba.squared, rel=1e-9, abs=1e-12)


def test_mmd_shape_checks():
    G = np.eye(2)
    with pytest.raises(DimensionMismatch):
        mmd_squared([1.0], [1.0, 2.0], G, G, G)


@pytest.mark.parametrize("p, q, expected", [
    ([0.3, 0.7], [0.3, 0.7], 0.0),
    ([0.0], [1.0], 1.0),
    ([2.0], [1.0], 2 * np.log(2) - 1),
])
def test_kl_by_hand(p, q, expected):
    assert kl_divergence(p, q) == pytest.approx(expected, abs=1e-12)


def test_kl_support_violation():
    with pytest.raises(SupportViolation):
        kl_divergence([1.0, 0.5], [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, 4, elements=st.floats(0, 5)), hnp.arrays(float, 4, elements=st.floats(0.01, 5)))
def test_kl_nonnegative(p, q):
    assert kl_divergence(p, q) >= -1e-12
