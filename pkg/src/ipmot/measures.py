"""Empirical measures, transport plans and their marginals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch, MassMismatch, NegativeMass, NegativeWeight, NonFiniteInput

NONNEGATIVE = "nonnegative"
SIMPLEX = "simplex"
CONSTRAINT_MODES = (NONNEGATIVE, SIMPLEX)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i weights[i] * delta(points[i])``.

    The total mass need not be one. Points are stored as an ``(m, d)``
    array; one-dimensional input is read as ``m`` points in ``d = 1``.
    """

    points: np.ndarray
    weights: np.ndarray
    total_mass: float = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DimensionMismatch(f"points must be an (m, d) array with m, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("points contain non-finite coordinates")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatch(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if not np.all(np.isfinite(w)):
            raise NonFiniteInput("weights contain non-finite values")
        if np.any(w < 0):
            raise NegativeWeight("weights must be non-negative")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "total_mass", float(w.sum()))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def normalized(self) -> "DiscreteMeasure":
        if self.total_mass <= 0:
            raise NegativeMass("cannot normalize a measure with zero mass")
        return DiscreteMeasure(self.points, self.weights / self.total_mass)

    def with_weights(self, weights) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, weights)


def uniform_measure(points, total_mass: float = 1.0) -> DiscreteMeasure:
    """Measure putting ``total_mass / m`` on each of the ``m`` points."""
    if not np.isfinite(total_mass):
        raise NonFiniteInput("total_mass must be finite")
    if total_mass < 0:
        raise NegativeMass(f"total_mass must be >= 0, got {total_mass}")
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0] if pts.ndim >= 1 else 0
    if m < 1:
        raise DimensionMismatch("a measure needs at least one point")
    return DiscreteMeasure(pts, np.full(m, total_mass / m))


@dataclass(frozen=True)
class Marginals:
    row_marginal: np.ndarray
    col_marginal: np.ndarray


@dataclass(frozen=True)
class TransportPlan:
    """Non-negative coupling ``alpha`` between two supports."""

    alpha: np.ndarray
    source_support: np.ndarray | None = None
    target_support: np.ndarray | None = None
    mode: str = NONNEGATIVE

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 2:
            raise DimensionMismatch(f"plan must be a matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("plan contains non-finite entries")
        if np.any(a < 0):
            raise NegativeMass("plan entries must be non-negative")
        if self.mode not in CONSTRAINT_MODES:
            raise ConfigError(f"unknown constraint mode {self.mode!r}")
        if self.mode == SIMPLEX and abs(a.sum() - 1.0) > 1e-9:
            raise MassMismatch(f"simplex plan must sum to 1, got {a.sum()!r}")
        for name, n in (("source_support", a.shape[0]), ("target_support", a.shape[1])):
            s = getattr(self, name)
            if s is not None:
                s = np.asarray(s, dtype=float)
                if s.ndim == 1:
                    s = s[:, None]
                if s.shape[0] != n:
                    raise DimensionMismatch(f"{name} has {s.shape[0]} points, plan axis has {n}")
                object.__setattr__(self, name, _frozen(s))
        object.__setattr__(self, "alpha", _frozen(a))

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape

    @property
    def mass(self) -> float:
        return float(self.alpha.sum())


def marginals(plan: TransportPlan | np.ndarray) -> Marginals:
    """Row sums and column sums of the plan."""
    alpha = plan.alpha if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    return Marginals(alpha.sum(axis=1), alpha.sum(axis=0))
