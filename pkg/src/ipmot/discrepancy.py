"""Squared MMD between weighted samples, its gradient, and unnormalized KL."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SupportViolation

logger = logging.getLogger(__name__)

NEGATIVE_ROUNDOFF = 1e-10


@dataclass(frozen=True)
class MmdValue:
    squared: float
    value: float


def _check(w, G, name):
    w = np.asarray(w, dtype=float).reshape(-1)
    if G.shape[0] != w.shape[0]:
        raise DimensionMismatch(f"{name}: {w.shape[0]} weights for a Gram matrix of shape {G.shape}")
    return w


def clamp_squared(sq: float) -> float:
    if sq < -NEGATIVE_ROUNDOFF:
        logger.warning("squared MMD %.3e below zero beyond round-off; clamping", sq)
    return max(float(sq), 0.0)


def mmd_squared(w_a, w_b, G_aa, G_bb, G_ab) -> MmdValue:
    """Biased quadratic-form MMD^2 of ``sum_i w_a[i] k(a_i, .)`` against ``w_b``.

    ``w_a' G_aa w_a + w_b' G_bb w_b - 2 w_a' G_ab w_b``, clamped at zero.
    """
    G_aa, G_bb, G_ab = (np.asarray(G, dtype=float) for G in (G_aa, G_bb, G_ab))
    w_a = _check(w_a, G_aa, "w_a")
    w_b = _check(w_b, G_bb, "w_b")
    if G_ab.shape != (w_a.shape[0], w_b.shape[0]):
        raise DimensionMismatch(f"cross Gram matrix has shape {G_ab.shape}")
    sq = w_a @ G_aa @ w_a + w_b @ G_bb @ w_b - 2.0 * (w_a @ G_ab @ w_b)
    sq = clamp_squared(sq)
    return MmdValue(sq, float(np.sqrt(sq)))


def mmd_gradient_wrt_first(w_a, w_b, G_aa, G_ab) -> np.ndarray:
    """Gradient ``2 (G_aa w_a - G_ab w_b)`` of MMD^2 with respect to ``w_a``."""
    G_aa, G_ab = np.asarray(G_aa, dtype=float), np.asarray(G_ab, dtype=float)
    w_a = _check(w_a, G_aa, "w_a")
    w_b = np.asarray(w_b, dtype=float).reshape(-1)
    if G_ab.shape != (w_a.shape[0], w_b.shape[0]):
        raise DimensionMismatch(f"cross Gram matrix has shape {G_ab.shape}")
    return 2.0 * (G_aa @ w_a - G_ab @ w_b)


def kl_divergence(p, q) -> float:
    """Unnormalized KL: ``sum p log(p/q) - p + q`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise DimensionMismatch(f"kl_divergence: shapes {p.shape} and {q.shape}")
    pos = p > 0
    if np.any(pos & (q <= 0)):
        raise SupportViolation("p has mass where q is zero")
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])) - p.sum() + q.sum())
