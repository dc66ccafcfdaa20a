"""Gaussian Gram matrices and ground-cost matrices on measure supports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch
from .measures import DiscreteMeasure

EUCLIDEAN = "euclidean"
SQEUCLIDEAN = "sqeuclidean"


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel ``k(x, y) = exp(-gamma * |x - y|^2)``."""

    gamma: float
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ConfigError(f"unsupported kernel family {self.family!r}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"kernel gamma must be finite and > 0, got {self.gamma}")

    @classmethod
    def from_sigma(cls, sigma: float, convention: str = "bandwidth") -> "KernelSpec":
        """Build a kernel from a reported ``sigma``.

        ``"bandwidth"`` reads sigma as the Gaussian standard deviation
        (gamma = 1 / (2 sigma^2)); ``"rate"`` reads it as gamma itself.
        """
        if convention == "bandwidth":
            return cls(1.0 / (2.0 * sigma**2))
        if convention == "rate":
            return cls(float(sigma))
        raise ConfigError(f"unknown sigma convention {convention!r}")


@dataclass(frozen=True)
class CostSpec:
    """Ground cost ``d(x, y)^p`` (Euclidean) or ``|x - y|^2`` (squared Euclidean).

    The squared-Euclidean ground is already a cost and is never raised to
    ``p``; ``p`` must stay 1 for it. ``root_power`` is the exponent whose
    root turns a solved objective back into a distance.
    """

    ground: str = EUCLIDEAN
    p: float = 1.0

    def __post_init__(self):
        if self.ground not in (EUCLIDEAN, SQEUCLIDEAN):
            raise ConfigError(f"unknown ground cost {self.ground!r}")
        if not (np.isfinite(self.p) and self.p >= 1):
            raise ConfigError(f"cost exponent p must be >= 1, got {self.p}")
        if self.ground == SQEUCLIDEAN and self.p != 1:
            raise ConfigError("squared-Euclidean cost is used as is; set p = 1")

    @property
    def root_power(self) -> float:
        return 2.0 if self.ground == SQEUCLIDEAN else float(self.p)


def _points(x) -> np.ndarray:
    if isinstance(x, DiscreteMeasure):
        return x.points
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def sq_distances(x, y=None) -> np.ndarray:
    """Pairwise squared Euclidean distances via ``|x|^2 + |y|^2 - 2<x, y>``.

    Round-off negatives are clamped to zero, and coincident points get an
    exact zero.
    """
    if y is x:
        y = None
    X = _points(x)
    Y = X if y is None else _points(y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"dimension {X.shape[1]} vs {Y.shape[1]}")
    xx = np.einsum("ij,ij->i", X, X)
    yy = np.einsum("ij,ij->i", Y, Y)
    d2 = xx[:, None] + yy[None, :] - 2.0 * (X @ Y.T)
    np.maximum(d2, 0.0, out=d2)
    # cancellation makes tiny entries unreliable; recompute those exactly
    scale = np.maximum(xx[:, None], yy[None, :])
    ii, jj = np.nonzero(d2 <= 1e-10 * scale)
    if ii.size:
        diff = X[ii] - Y[jj]
        d2[ii, jj] = np.einsum("ij,ij->i", diff, diff)
    if y is None:
        d2 = 0.5 * (d2 + d2.T)
    return d2


def gram(a, b, kernel: KernelSpec) -> np.ndarray:
    """Gram matrix ``exp(-gamma |a_i - b_j|^2)``; pass ``b=None`` for ``gram(a, a)``."""
    return np.exp(-kernel.gamma * sq_distances(a, b))


def cost_matrix(a, b, spec: CostSpec) -> np.ndarray:
    d2 = sq_distances(a, b)
    if spec.ground == SQEUCLIDEAN:
        return d2
    if spec.p == 2:
        return d2
    return np.sqrt(d2) ** spec.p


def median_heuristic(points) -> float:
    """Kernel rate ``1 / (2 median^2)`` over distinct pairwise distances.

    Never applied implicitly; call it and pass the result to ``KernelSpec``.
    """
    d2 = sq_distances(points)
    iu = np.triu_indices(d2.shape[0], k=1)
    d = np.sqrt(d2[iu])
    d = d[d > 0]
    if d.size == 0:
        raise DimensionMismatch("median heuristic needs at least two distinct points")
    return float(1.0 / (2.0 * np.median(d) ** 2))
