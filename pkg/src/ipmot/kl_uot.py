"""KL-penalized unbalanced transport solved by entropic scaling iterations.

The plan is ``pi = diag(u) K diag(v)`` with ``K = exp(-C / eps) * (a b')``,
i.e. the entropy is taken relative to the product of the two weight
vectors. The scalings follow::

    u <- (a / K v)^(lambda1 / (lambda1 + eps))
    v <- (b / K' u)^(lambda2 / (lambda2 + eps))

The reported loss is ``<C, pi> + lambda1 KL(pi 1 | a) + lambda2 KL(pi' 1 | b)``;
the smoothing term ``eps KL(pi | a b')`` is reported separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .discrepancy import kl_divergence
from .errors import (
    ConfigError,
    DimensionMismatch,
    NonFiniteInput,
    NonFiniteObjective,
    NumericalUnderflow,
    SupportViolation,
)
from .measures import NONNEGATIVE, DiscreteMeasure, TransportPlan
from .mmd_uot import SolveReport
from .optim import ObjectiveTrace

logger = logging.getLogger(__name__)

AUTO_LOG_RATIO = 1e-3


@dataclass(frozen=True)
class KlUotProblem:
    """KL-UOT instance. ``log_domain=None`` switches to log-domain updates
    automatically when ``epsilon < 1e-3 * median(cost)``."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    cost: np.ndarray
    lambda1: float = 1.0
    lambda2: float = 1.0
    epsilon: float = 0.1
    max_iters: int = 10000
    tol: float = 1e-9
    log_domain: bool | None = None

    def __post_init__(self):
        C = np.asarray(self.cost, dtype=float)
        if C.shape != (self.source.size, self.target.size):
            raise DimensionMismatch(f"cost shape {C.shape} vs supports ({self.source.size}, {self.target.size})")
        if not np.all(np.isfinite(C)):
            raise NonFiniteInput("cost contains non-finite entries")
        for name in ("lambda1", "lambda2", "epsilon", "tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v}")
        if int(self.max_iters) < 1:
            raise ConfigError("max_iters must be >= 1")
        C.setflags(write=False)
        object.__setattr__(self, "cost", C)

    def uses_log_domain(self) -> bool:
        if self.log_domain is not None:
            return bool(self.log_domain)
        return self.epsilon < AUTO_LOG_RATIO * float(np.median(self.cost))


def solve_kl_uot(problem: KlUotProblem) -> SolveReport:
    a, b = np.asarray(problem.source.weights), np.asarray(problem.target.weights)
    if np.any(a <= 0) or np.any(b <= 0):
        raise SupportViolation("KL-UOT needs strictly positive weights on both measures")
    C, eps = problem.cost, problem.epsilon
    f1 = problem.lambda1 / (problem.lambda1 + eps)
    f2 = problem.lambda2 / (problem.lambda2 + eps)
    log_K = -C / eps + np.log(a)[:, None] + np.log(b)[None, :]
    if problem.uses_log_domain():
        log_u, log_v, residuals, converged = _iterate_log(log_K, a, b, f1, f2, problem)
    else:
        log_u, log_v, residuals, converged = _iterate_linear(np.exp(log_K), a, b, f1, f2, problem)
    pi = np.exp(log_u[:, None] + log_K + log_v[None, :])
    return _report(pi, problem, residuals, converged)


def _iterate_linear(K, a, b, f1, f2, pb):
    u = np.ones_like(a)
    v = np.ones_like(b)
    residuals = []
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        return _linear_loop(K, a, b, f1, f2, pb, u, v, residuals)


def _linear_loop(K, a, b, f1, f2, pb, u, v, residuals):
    converged = False
    for _ in range(pb.max_iters):
        Kv = K @ v
        if not np.all(Kv > 0):
            raise NumericalUnderflow("K v underflowed to zero; raise epsilon or use the log domain")
        u_new = (a / Kv) ** f1
        Ku = K.T @ u_new
        if not np.all(Ku > 0):
            raise NumericalUnderflow("K' u underflowed to zero; raise epsilon or use the log domain")
        v_new = (b / Ku) ** f2
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))
                and np.all(u_new > 0) and np.all(v_new > 0)):
            raise NumericalUnderflow("scaling vectors left the floating-point range; use the log domain")
        change = max(np.max(np.abs(np.log(u_new) - np.log(u))), np.max(np.abs(np.log(v_new) - np.log(v))))
        u, v = u_new, v_new
        residuals.append(float(change))
        if change < pb.tol:
            converged = True
            break
    return np.log(u), np.log(v), residuals, converged


def _iterate_log(log_K, a, b, f1, f2, pb):
    log_a, log_b = np.log(a), np.log(b)
    log_u = np.zeros_like(a)
    log_v = np.zeros_like(b)
    residuals = []
    converged = False
    for _ in range(pb.max_iters):
        new_u = f1 * (log_a - _logsumexp(log_K + log_v[None, :], axis=1))
        new_v = f2 * (log_b - _logsumexp(log_K + new_u[:, None], axis=0))
        change = max(np.max(np.abs(new_u - log_u)), np.max(np.abs(new_v - log_v)))
        log_u, log_v = new_u, new_v
        residuals.append(float(change))
        if change < pb.tol:
            converged = True
            break
    return log_u, log_v, residuals, converged


def _logsumexp(x, axis):
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.log(np.sum(np.exp(x - top), axis=axis)) + np.squeeze(top, axis=axis)


def kl_uot_loss(pi, problem: KlUotProblem) -> tuple[float, float, float]:
    """Cost term and the two marginal KL penalties of a plan."""
    a, b = problem.source.weights, problem.target.weights
    return (
        float(np.vdot(problem.cost, pi)),
        kl_divergence(pi.sum(axis=1), a),
        kl_divergence(pi.sum(axis=0), b),
    )


def _report(pi, pb, residuals, converged):
    if not np.all(np.isfinite(pi)):
        raise NonFiniteObjective("plan is not finite")
    if not converged:
        logger.info("scaling iterations stopped at max_iters=%d (last change %.3e)", pb.max_iters, residuals[-1])
    cost, kl1, kl2 = kl_uot_loss(pi, pb)
    loss = cost + pb.lambda1 * kl1 + pb.lambda2 * kl2
    ref = np.outer(pb.source.weights, pb.target.weights)
    entropy = pb.epsilon * kl_divergence(pi.ravel(), ref.ravel())
    plan = TransportPlan(pi, pb.source.points, pb.target.points, NONNEGATIVE)
    trace = ObjectiveTrace([loss], converged, len(residuals))
    return SolveReport(
        plan=plan,
        objective_trace=trace,
        cost_term=cost,
        marginal_residuals=(kl1, kl2),
        loss_value=loss,
        loss_root=loss,
        lambdas=(pb.lambda1, pb.lambda2),
        method="log-scaling" if pb.uses_log_domain() else "scaling",
        iterations_total=len(residuals),
        extras={"entropy_term": entropy, "fixed_point_residuals": residuals},
    )
