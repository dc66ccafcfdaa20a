"""First-order solvers over the non-negative orthant and (block) simplices.

Objectives are passed as a single callable ``fun(x) -> (value, gradient)``
with the gradient shaped like ``x``. Both solvers only ever accept points
that do not increase the objective, so the returned trace is monotone.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, InfeasibleStart, NonFiniteObjective

logger = logging.getLogger(__name__)

AUTO = "auto"
PGD = "pgd"
MIRROR = "mirror"
METHODS = (AUTO, PGD, MIRROR)

_MAX_BACKTRACKS = 60
_MAX_HALVINGS = 30
_ZERO_GRADIENT = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters shared by every iterative solver.

    ``method="auto"`` picks projected gradient on the orthant and mirror
    descent on simplices. ``continuation`` enables warm-started solves over an increasing
    sequence of regularization weights (used by the transport solvers when
    the weights dwarf the cost scale). ``monotone_mirror=False`` takes the
    raw ``1/|grad|_inf`` mirror step without the halving safeguard.
    """

    max_iters: int = 5000
    rel_tol: float = 1e-7
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    method: str = AUTO
    seed: int = 0
    continuation: bool = True
    continuation_factor: float = 10.0
    monotone_mirror: bool = True
    outer_iters: int = 200

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be > 0")
        if not 0 < self.armijo_c < 1:
            raise ConfigError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError("backtrack_factor must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ConfigError("initial_step must be > 0")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.continuation_factor > 1:
            raise ConfigError("continuation_factor must be > 1")
        if int(self.outer_iters) < 1:
            raise ConfigError("outer_iters must be >= 1")

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObjectiveTrace:
    values: list[float] = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0

    def is_monotone(self, slack: float = 1e-12) -> bool:
        v = np.asarray(self.values)
        return bool(np.all(v[1:] <= v[:-1] + slack))


def _evaluate(fun, x):
    f, g = fun(x)
    f = float(f)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective(f"objective or gradient is not finite (value {f})")
    return f, np.asarray(g, dtype=float)


def _small_decrease(f_old, f_new, rel_tol):
    return (f_old - f_new) / max(abs(f_old), 1.0) < rel_tol


def pgd_nonneg(fun, x0, cfg: SolverConfig = SolverConfig()):
    """Projected gradient descent on ``{x >= 0}`` with Armijo backtracking.

    A step ``x+ = max(0, x - t g)`` is accepted once
    ``f(x+) <= f(x) - c/t |x+ - x|^2``. The trial step starts at twice the
    last accepted one. Trial points with a non-finite value count as
    rejections; a non-finite value at an accepted point raises.
    """
    x = np.array(x0, dtype=float)
    if np.any(x < 0):
        raise InfeasibleStart("pgd_nonneg needs a non-negative starting point")
    return _projected_gradient(fun, x, cfg, lambda y: np.maximum(y, 0.0))


def pgd_simplex(fun, x0, cfg: SolverConfig = SolverConfig(), total=1.0, groups=None):
    """Projected gradient with Armijo backtracking on a (block) simplex.

    Same step rule as :func:`pgd_nonneg`, with the Euclidean simplex
    projection per block in place of clipping. ``groups`` labels the
    entries of ``x`` by block and ``total`` gives the block sums (scalar or
    per block); blocks with total zero stay at zero.
    """
    x = np.array(x0, dtype=float)
    if groups is None:
        if np.any(x < -1e-12) or abs(x.sum() - total) > 1e-9 * max(total, 1):
            raise InfeasibleStart("pgd_simplex needs a starting point on the simplex")
        return _projected_gradient(fun, x, cfg, lambda y: project_simplex(y, total))
    return _projected_gradient(fun, x, cfg, _block_projector(x, total, groups))


def accelerated_pgd(fun, x0, cfg: SolverConfig = SolverConfig(), total=None, groups=None):
    """Monotone accelerated projected gradient on the orthant or (block) simplices.

    ``total=None`` means the non-negative orthant; otherwise the feasible
    set is as in :func:`pgd_simplex`. Suited to ill-conditioned smooth
    objectives where plain projected gradient crawls.
    """
    x = np.array(x0, dtype=float)
    if total is None:
        if np.any(x < 0):
            raise InfeasibleStart("accelerated_pgd needs a non-negative starting point")
        return _accelerated(fun, x, cfg, lambda y: np.maximum(y, 0.0))
    if groups is None:
        if np.any(x < -1e-12) or abs(x.sum() - total) > 1e-9 * max(total, 1):
            raise InfeasibleStart("accelerated_pgd needs a starting point on the simplex")
        return _accelerated(fun, x, cfg, lambda y: project_simplex(y, total))
    return _accelerated(fun, x, cfg, _block_projector(x, total, groups))


def _block_projector(x, total, groups):
    groups = np.asarray(groups).ravel()
    n_groups = int(groups.max()) + 1
    totals = np.broadcast_to(np.asarray(total, dtype=float), (n_groups,)).copy()
    if np.any(x < -1e-12) or np.any(np.abs(_block_sums(x, groups, n_groups) - totals) > 1e-9 * np.maximum(totals, 1)):
        raise InfeasibleStart("starting point is off the block simplex")
    counts = np.bincount(groups, minlength=n_groups)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    live = totals > 0

    def project(y):
        # sort-and-threshold in every block at once
        flat = y.ravel()
        order = np.lexsort((-flat, groups))
        g = groups[order]
        u = flat[order]
        css = np.cumsum(u)
        css -= np.concatenate([[0.0], css])[starts][g]
        css -= totals[g]
        rank = np.arange(flat.size) - starts[g] + 1
        rho = np.bincount(g, weights=(u - css / rank > 0), minlength=n_groups).astype(int)
        rho = np.maximum(rho, 1)
        theta = css[starts + rho - 1] / rho
        out = np.maximum(flat - theta[groups], 0.0)
        out[~live[groups]] = 0.0
        # absorb the summation round-off into each block's largest entry
        top = order[starts[live]]
        out[top] += totals[live] - np.bincount(groups, weights=out, minlength=n_groups)[live]
        return out.reshape(y.shape)

    return project


def _projected_gradient(fun, x, cfg, project):
    f, g = _evaluate(fun, x)
    trace = ObjectiveTrace([f])
    t = cfg.initial_step
    for it in range(1, cfg.max_iters + 1):
        trace.iterations_used = it
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            x_new = project(x - t * g)
            step = x_new - x
            sq = float(np.vdot(step, step))
            if sq == 0.0:
                trace.converged = True
                return x, trace
            f_new, g_new = fun(x_new)
            f_new = float(f_new)
            if np.isfinite(f_new) and f_new <= f - cfg.armijo_c / t * sq:
                accepted = True
                break
            t *= cfg.backtrack_factor
        if not accepted:
            # no decrease is achievable at round-off scale
            trace.converged = True
            return x, trace
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteObjective("gradient is not finite at an accepted point")
        done = _small_decrease(f, f_new, cfg.rel_tol)
        x, f, g = x_new, f_new, np.asarray(g_new, dtype=float)
        trace.values.append(f)
        if done:
            trace.converged = True
            return x, trace
        t *= 2.0
    return x, trace


def _accelerated(fun, x0, cfg, project):
    """Monotone accelerated projected gradient (momentum with restarts).

    The gradient step is taken at an extrapolated point with backtracking
    on the quadratic upper bound; the iterate only moves when the objective
    does not increase, and the momentum restarts otherwise.
    """
    x = np.array(x0, dtype=float)
    f, g = _evaluate(fun, x)
    trace = ObjectiveTrace([f])
    y, fy, gy = x, f, g
    t = cfg.initial_step
    theta = 1.0
    quiet = 0
    for it in range(1, cfg.max_iters + 1):
        trace.iterations_used = it
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            z = project(y - t * gy)
            step = z - y
            sq = float(np.vdot(step, step))
            if sq == 0.0:
                break
            fz, gz = fun(z)
            fz = float(fz)
            if np.isfinite(fz) and fz <= fy + float(np.vdot(gy, step)) + sq / (2.0 * t):
                accepted = True
                break
            t *= cfg.backtrack_factor
        if not accepted:
            if y is x:
                trace.converged = True
                return x, trace
            # restart from the current iterate
            y, fy, gy, theta = x, f, g, 1.0
            continue
        theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta**2))
        if fz <= f:
            if not np.all(np.isfinite(gz)):
                raise NonFiniteObjective("gradient is not finite at an accepted point")
            quiet = quiet + 1 if _small_decrease(f, fz, cfg.rel_tol) else 0
            x_prev, x, f, g = x, z, fz, np.asarray(gz, dtype=float)
            trace.values.append(f)
            if quiet >= 5:
                trace.converged = True
                return x, trace
            y = project(x + ((theta - 1.0) / theta_next) * (x - x_prev))
            theta = theta_next
            fy, gy = _evaluate(fun, y)
        else:
            y, fy, gy, theta = x, f, g, 1.0
        t *= 2.0
    return x, trace


def _block_sums(x, groups, n_groups):
    if groups is None:
        return np.array([x.sum()])
    return np.bincount(groups.ravel(), weights=x.ravel(), minlength=n_groups)


def mirror_descent_simplex(fun, x0, cfg: SolverConfig = SolverConfig(), total=1.0, groups=None):
    """Entropic mirror descent on a simplex (or a product of simplices).

    ``x+ ~ x * exp(-t g)`` renormalized to the block totals, with
    ``t = 1 / |g|_inf``. Steps that increase ``f`` are halved up to 30
    times; if none decreases ``f`` the solver stops. ``groups`` is an
    integer label array shaped like ``x`` assigning entries to blocks and
    ``total`` gives each block's mass (scalar or per-block array).
    """
    x = np.array(x0, dtype=float)
    if groups is not None:
        groups = np.asarray(groups)
        n_groups = int(groups.max()) + 1
    else:
        n_groups = 1
    totals = np.broadcast_to(np.asarray(total, dtype=float), (n_groups,)).copy()
    if np.any(x < -1e-12) or np.any(np.abs(_block_sums(x, groups, n_groups) - totals) > 1e-9 * np.maximum(totals, 1)):
        raise InfeasibleStart("mirror descent needs a starting point on the simplex")
    x = np.maximum(x, 0.0)
    f, g = _evaluate(fun, x)
    trace = ObjectiveTrace([f])
    for it in range(1, cfg.max_iters + 1):
        trace.iterations_used = it
        gmax = float(np.max(np.abs(g)))
        if gmax < _ZERO_GRADIENT:
            trace.converged = True
            return x, trace
        t = 1.0 / gmax
        # shifting g by its block minimum leaves the update unchanged
        if groups is None:
            shifted = g - g.min()
        else:
            mins = np.full(n_groups, np.inf)
            np.minimum.at(mins, groups.ravel(), g.ravel())
            shifted = g - mins[groups]
        accepted = False
        for _ in range(_MAX_HALVINGS + 1):
            w = x * np.exp(-t * shifted)
            scale = totals / _block_sums(w, groups, n_groups)
            x_new = w * (scale[0] if groups is None else scale[groups])
            f_new, g_new = fun(x_new)
            f_new = float(f_new)
            if not cfg.monotone_mirror and np.isfinite(f_new):
                accepted = True
                break
            if np.isfinite(f_new) and f_new <= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            trace.converged = True
            return x, trace
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteObjective("gradient is not finite at an accepted point")
        done = abs(f - f_new) / max(abs(f), 1.0) < cfg.rel_tol
        x, f, g = x_new, f_new, np.asarray(g_new, dtype=float)
        trace.values.append(f)
        if done:
            trace.converged = True
            return x, trace
    return x, trace


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}``."""
    if not total > 0:
        raise ConfigError("simplex total must be > 0")
    v = np.asarray(v, dtype=float)
    flat = v.ravel()
    u = np.sort(flat)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, flat.size + 1)
    rho = np.count_nonzero(u - css / idx > 0)
    theta = css[rho - 1] / rho
    x = np.maximum(flat - theta, 0.0)
    # absorb the summation round-off into the largest entry
    k = int(np.argmax(x))
    x[k] += total - x.sum()
    return x.reshape(v.shape)
