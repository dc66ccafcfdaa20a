"""Unbalanced optimal transport with MMD-penalized marginals.

For a plan ``alpha`` (``m1 x m2``) the objective is::

    <C, alpha> + lambda1 * MMD(alpha 1, a)^q + lambda2 * MMD(alpha' 1, b)^q

where ``C`` holds ``c^p`` on the two supports and each MMD is the
quadratic form ``|r|_G = sqrt(r' G r)`` of the marginal residual under the
Gram matrix of that support. ``q = 2`` gives a convex quadratic over the
plan; ``q = 1`` is solved by majorize-minimize, each round being a
``q = 2`` problem with reweighted penalties.

In the flexible parameterization both plan axes range over the union of
the two supports, and each measure is embedded there with zero weight on
the other measure's points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .discrepancy import clamp_squared, mmd_squared
from .errors import ConfigError, DimensionMismatch, NonFiniteInput
from .kernels import CostSpec, KernelSpec, cost_matrix, gram
from .measures import NONNEGATIVE, SIMPLEX, DiscreteMeasure, TransportPlan, marginals
from .optim import (
    AUTO,
    MIRROR,
    PGD,
    ObjectiveTrace,
    accelerated_pgd,
    SolverConfig,
    mirror_descent_simplex,
    pgd_nonneg,
    pgd_simplex,
)

logger = logging.getLogger(__name__)

STANDARD = "standard"
FLEXIBLE = "flexible"

# floor on a residual norm before it is used as a majorizer weight
_ETA_FLOOR = 1e-300


@dataclass(frozen=True)
class UotProblem:
    """MMD-regularized UOT instance.

    ``cost_override`` replaces the matrix built from ``cost`` (for example a
    max-normalized cost); its shape must match the plan.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    kernel: KernelSpec
    cost: CostSpec = field(default_factory=CostSpec)
    lambda1: float = 1.0
    lambda2: float = 1.0
    q: int = 2
    constraint: str = NONNEGATIVE
    parameterization: str = STANDARD
    cost_override: np.ndarray | None = None

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            lam = getattr(self, name)
            if not (np.isfinite(lam) and lam >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {lam}")
        if self.q not in (1, 2):
            raise ConfigError(f"q must be 1 or 2, got {self.q}")
        if self.constraint not in (NONNEGATIVE, SIMPLEX):
            raise ConfigError(f"unknown constraint mode {self.constraint!r}")
        if self.parameterization not in (STANDARD, FLEXIBLE):
            raise ConfigError(f"unknown parameterization {self.parameterization!r}")
        if self.source.dim != self.target.dim:
            raise DimensionMismatch(f"source dimension {self.source.dim} vs target {self.target.dim}")

    def arrays(self) -> "UotArrays":
        return UotArrays.from_problem(self)


@dataclass(frozen=True)
class UotArrays:
    """Matrix form of a problem: cost, Gram matrices and marginal targets."""

    C: np.ndarray
    G1: np.ndarray
    a: np.ndarray
    G2: np.ndarray
    b: np.ndarray
    lambda1: float
    lambda2: float
    q: int = 2
    row_points: np.ndarray | None = None
    col_points: np.ndarray | None = None

    @classmethod
    def from_problem(cls, pb: UotProblem) -> "UotArrays":
        X, Y = pb.source.points, pb.target.points
        if pb.parameterization == STANDARD:
            rows, cols = X, Y
            C = cost_matrix(X, Y, pb.cost)
            G1 = gram(X, X, pb.kernel)
            G2 = gram(Y, Y, pb.kernel)
            a, b = pb.source.weights, pb.target.weights
        else:
            Z = np.vstack([X, Y])
            rows = cols = Z
            C = cost_matrix(Z, Z, pb.cost)
            G1 = G2 = gram(Z, Z, pb.kernel)
            m1, m2 = pb.source.size, pb.target.size
            a = np.concatenate([pb.source.weights, np.zeros(m2)])
            b = np.concatenate([np.zeros(m1), pb.target.weights])
        if pb.cost_override is not None:
            C_over = np.asarray(pb.cost_override, dtype=float)
            if C_over.shape != C.shape:
                raise DimensionMismatch(f"cost override has shape {C_over.shape}, plan has {C.shape}")
            C = C_over
        return cls(C, G1, np.asarray(a), G2, np.asarray(b), pb.lambda1, pb.lambda2, pb.q, rows, cols)

    def __post_init__(self):
        m1, m2 = self.C.shape
        if self.G1.shape != (m1, m1) or self.a.shape != (m1,):
            raise DimensionMismatch("row Gram matrix / target do not match the cost rows")
        if self.G2.shape != (m2, m2) or self.b.shape != (m2,):
            raise DimensionMismatch("column Gram matrix / target do not match the cost columns")
        if not (np.all(np.isfinite(self.C)) and np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise NonFiniteInput("cost or marginal targets contain non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.C.shape

    def residual_forms(self, alpha):
        """Residuals ``r, s`` and their Gram products ``G1 r, G2 s``."""
        r = alpha.sum(axis=1) - self.a
        s = alpha.sum(axis=0) - self.b
        return r, s, self.G1 @ r, self.G2 @ s

    def value_and_grad(self, alpha, lambda1=None, lambda2=None, q=None):
        lam1 = self.lambda1 if lambda1 is None else lambda1
        lam2 = self.lambda2 if lambda2 is None else lambda2
        q = self.q if q is None else q
        r, s, Gr, Gs = self.residual_forms(alpha)
        sq1 = max(float(r @ Gr), 0.0)
        sq2 = max(float(s @ Gs), 0.0)
        cost = float(np.vdot(self.C, alpha))
        if q == 2:
            value = cost + lam1 * sq1 + lam2 * sq2
            grad = self.C + (2.0 * lam1) * Gr[:, None] + (2.0 * lam2) * Gs[None, :]
            return value, grad
        n1, n2 = np.sqrt(sq1), np.sqrt(sq2)
        value = cost + lam1 * n1 + lam2 * n2
        # subgradient 0 for a residual that is exactly zero
        c1 = lam1 / n1 if n1 > 0 else 0.0
        c2 = lam2 / n2 if n2 > 0 else 0.0
        grad = self.C + c1 * Gr[:, None] + c2 * Gs[None, :]
        return value, grad

    def parts(self, alpha):
        """Cost term and the two residual MMDs (un-squared)."""
        r, s, Gr, Gs = self.residual_forms(alpha)
        return (
            float(np.vdot(self.C, alpha)),
            np.sqrt(clamp_squared(r @ Gr)),
            np.sqrt(clamp_squared(s @ Gs)),
        )


@dataclass
class SolveReport:
    """Outcome of a transport solve.

    ``loss_value`` is the solved objective (the p-th power of the lifted
    distance); ``loss_root`` is its ``root_power``-th root.
    ``marginal_residuals`` are ``MMD^q`` of each plan marginal against its
    target measure.
    """

    plan: TransportPlan
    objective_trace: ObjectiveTrace
    cost_term: float
    marginal_residuals: tuple[float, float]
    loss_value: float
    loss_root: float
    lambdas: tuple[float, float] = (0.0, 0.0)
    method: str = ""
    stages: list[float] = field(default_factory=list)
    iterations_total: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.objective_trace.converged


def objective_and_gradient(problem: UotProblem | UotArrays, alpha):
    """Objective value and gradient for the plan ``alpha``."""
    arr = problem.arrays() if isinstance(problem, UotProblem) else problem
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != arr.shape:
        raise DimensionMismatch(f"plan shape {alpha.shape} vs problem {arr.shape}")
    if not np.all(np.isfinite(alpha)):
        raise NonFiniteInput("plan contains non-finite entries")
    return arr.value_and_grad(alpha)


def initial_plan(shape, constraint, mass_source, mass_target):
    """Constant plan with total mass ``sqrt(sigma1 sigma2)`` (or 1 on the simplex)."""
    m1, m2 = shape
    total = 1.0 if constraint == SIMPLEX else np.sqrt(mass_source * mass_target)
    return np.full((m1, m2), total / (m1 * m2))


def random_plan(shape, constraint, mass, rng) -> np.ndarray:
    """Random feasible starting plan (Dirichlet-distributed entries)."""
    x = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    return x if constraint == SIMPLEX else x * mass


def _resolve_method(method, constraint):
    if method == AUTO:
        return MIRROR if constraint == SIMPLEX else PGD
    if method == MIRROR and constraint != SIMPLEX:
        raise ConfigError("mirror descent needs the simplex constraint")
    return method


def run_engine(fun, x0, cfg, constraint, total=1.0, groups=None):
    """Dispatch to the first-order solver matching the feasible set.

    With ``groups`` the entries of each labelled block sum to the matching
    entry of ``total`` (a plan with one marginal held fixed).
    """
    method = _resolve_method(cfg.method, constraint)
    if groups is not None:
        if method == MIRROR:
            return mirror_descent_simplex(fun, x0, cfg, total=total, groups=groups)
        return pgd_simplex(fun, x0, cfg, total=total, groups=groups)
    if constraint == NONNEGATIVE:
        return pgd_nonneg(fun, x0, cfg)
    if method == MIRROR:
        return mirror_descent_simplex(fun, x0, cfg, total=total)
    return pgd_simplex(fun, x0, cfg, total=total)


def continuation_schedule(lam_max, reference, factor):
    """Multipliers ``s_1 < ... < 1`` applied to the penalty weights.

    Starts where the weights balance the cost scale (``reference``) and
    grows by ``factor`` per stage. Empty when no continuation is needed.
    """
    if not (lam_max > 0 and reference > 0) or lam_max <= factor * reference:
        return [1.0]
    s = reference / lam_max
    out = []
    while s < 1.0:
        out.append(s)
        s *= factor
    out.append(1.0)
    return out


def minimize_quadratic(arr: UotArrays, x0, cfg, constraint, total=1.0, groups=None, reference=None):
    """Minimize the ``q = 2`` objective of ``arr``, warm-starting over a weight schedule.

    Returns the plan, the trace of the final (full-weight) stage, the stage
    multipliers and the total iteration count.
    """
    lam_max = max(arr.lambda1, arr.lambda2)
    if reference is None:
        reference = _cost_reference(arr)
    stages = continuation_schedule(lam_max, reference, cfg.continuation_factor) if cfg.continuation else [1.0]
    x = x0
    total_iters = 0
    trace = None
    for s in stages:
        lam1, lam2 = s * arr.lambda1, s * arr.lambda2

        def fun(alpha, lam1=lam1, lam2=lam2):
            return arr.value_and_grad(alpha, lam1, lam2, 2)

        x, trace = run_engine(fun, x, cfg, constraint, total, groups)
        total_iters += trace.iterations_used
    return x, trace, stages, total_iters


def _cost_reference(arr: UotArrays) -> float:
    mass = max(arr.a.sum(), arr.b.sum(), 1e-300)
    return float(np.max(np.abs(arr.C))) / mass


def minimize_unsquared(arr: UotArrays, x0, cfg, constraint, total=1.0, groups=None):
    """Minimize the ``q = 1`` objective.

    Alternates two monotone phases until neither improves:

    * majorize-minimize, using ``|r| <= (|r|^2 / eta + eta) / 2`` with
      ``eta`` the current residual norm, so each round is a ``q = 2``
      problem with weights ``lambda / (2 eta)``; this handles optima where
      a residual vanishes and the objective has a kink;
    * first-order descent on the objective itself, which converges fast
      wherever both residuals stay away from zero.

    The starting point is the solution of the ``q = 2`` problem with
    weights ``lambda / 2``.
    """
    def f1(alpha):
        return arr.value_and_grad(alpha, q=1)[0]

    def fun1(alpha):
        return arr.value_and_grad(alpha, q=1)

    inner = cfg.replace(rel_tol=min(cfg.rel_tol, 1e-12), max_iters=min(cfg.max_iters, 2000))
    reference = _cost_reference(arr)
    seed_arr = _reweighted(arr, 1.0, 1.0)
    x, _, _, total_iters = minimize_quadratic(seed_arr, x0, inner, constraint, total, groups, reference)
    trace = ObjectiveTrace([f1(x)])
    box = None if (constraint == NONNEGATIVE and groups is None) else total
    rounds = 0
    while rounds < cfg.outer_iters:
        start = trace.values[-1]
        # majorize-minimize rounds
        for _ in range(10):
            rounds += 1
            _, n1, n2 = arr.parts(x)
            sub = _reweighted(arr, max(n1, _ETA_FLOOR), max(n2, _ETA_FLOOR))

            def fun(alpha, sub=sub):
                return sub.value_and_grad(alpha, q=2)

            x_new, tr = accelerated_pgd(fun, x, inner, box, groups)
            total_iters += tr.iterations_used
            f_new = f1(x_new)
            if f_new > trace.values[-1]:
                break
            gain = trace.values[-1] - f_new
            x = x_new
            trace.values.append(f_new)
            if gain <= 1e-13 * max(abs(f_new), 1.0):
                break
        # direct descent on the unsquared objective
        x_new, tr = accelerated_pgd(fun1, x, inner, box, groups)
        total_iters += tr.iterations_used
        for v in tr.values[1:]:
            trace.values.append(v)
        x = x_new
        if start - trace.values[-1] <= 1e-10 * max(abs(start), 1.0):
            trace.converged = True
            break
    trace.iterations_used = rounds
    return x, trace, total_iters


def solve_unsquared(arr: UotArrays, x0, cfg, constraint):
    """Minimize the ``q = 1`` objective, including optima on its kinks.

    Where one residual vanishes at the optimum the objective is not
    differentiable there and descent stalls next to the kink. Besides the
    unrestricted solve, the problem is therefore also solved with each
    marginal held exactly at its target (its penalty is then zero and the
    rest is smooth away from the other kink); the best of the candidates
    is returned. Gives ``(plan, trace, iterations, held)`` where ``held``
    names the marginal that was fixed, if any.
    """
    total = 1.0
    best = None
    iters = 0
    m1, m2 = arr.shape
    candidates = [(None, arr, x0, None, total)]
    for side, target in (("row", arr.a), ("col", arr.b)):
        if constraint == SIMPLEX and abs(target.sum() - 1.0) > 1e-9:
            continue
        if side == "row":
            sub = replace(arr, lambda1=0.0)
            other = arr.b
            groups = np.repeat(np.arange(m1)[:, None], m2, axis=1)
        else:
            sub = replace(arr, lambda2=0.0)
            other = arr.a
            groups = np.repeat(np.arange(m2)[None, :], m1, axis=0)
        spread = other / other.sum() if other.sum() > 0 else np.full(other.shape, 1.0 / other.size)
        start = np.outer(target, spread) if side == "row" else np.outer(spread, target)
        candidates.append((side, sub, start, groups, target))
    for side, sub, start, groups, tot in candidates:
        sub_cfg = cfg if groups is None else cfg.replace(method=PGD)
        x, trace, it = minimize_unsquared(sub, start, sub_cfg, constraint, tot, groups)
        iters += it
        f = arr.value_and_grad(x, q=1)[0]
        if best is None or f < best[0]:
            best = (f, x, trace, side)
    f, x, trace, side = best
    return x, trace, iters, side


def _reweighted(arr: UotArrays, eta1, eta2) -> UotArrays:
    return UotArrays(
        arr.C, arr.G1, arr.a, arr.G2, arr.b,
        arr.lambda1 / (2.0 * eta1), arr.lambda2 / (2.0 * eta2), 2,
        arr.row_points, arr.col_points,
    )


def solve(problem: UotProblem, cfg: SolverConfig | None = None, init=None) -> SolveReport:
    """Solve an MMD-regularized UOT problem with first-order methods."""
    cfg = cfg or SolverConfig()
    arr = problem.arrays()
    method = _resolve_method(cfg.method, problem.constraint)
    if init is None:
        x0 = initial_plan(arr.shape, problem.constraint, problem.source.total_mass, problem.target.total_mass)
    else:
        x0 = np.asarray(init, dtype=float)
        if x0.shape != arr.shape:
            raise DimensionMismatch(f"initial plan shape {x0.shape} vs problem {arr.shape}")
    extras = {}
    if arr.lambda1 == 0 and arr.lambda2 == 0 and problem.constraint == NONNEGATIVE:
        # the objective is linear; the empty plan is a minimizer unless some cost is negative
        if np.any(arr.C < 0):
            raise ConfigError("with both penalty weights zero a negative cost makes the problem unbounded")
        alpha = np.zeros(arr.shape)
        trace = ObjectiveTrace([float(np.vdot(arr.C, x0)), 0.0], True, 1)
        report = build_report(arr, alpha, trace, problem.constraint, problem.cost.root_power, method, [1.0], 1)
        return report
    if problem.q == 2:
        alpha, trace, stages, iters = minimize_quadratic(arr, x0, cfg, problem.constraint)
    else:
        alpha, trace, iters, held = solve_unsquared(arr, x0, cfg, problem.constraint)
        stages = []
        extras["held_marginal"] = held
    report = build_report(arr, alpha, trace, problem.constraint, problem.cost.root_power, method, stages, iters)
    report.extras.update(extras)
    return report


def build_report(arr: UotArrays, alpha, trace, constraint, root_power, method="", stages=(), iters=0) -> SolveReport:
    alpha = np.maximum(alpha, 0.0)
    if constraint == SIMPLEX:
        alpha = alpha / alpha.sum()
    plan = TransportPlan(alpha, arr.row_points, arr.col_points, constraint)
    marg = marginals(plan)
    res = []
    for w, target, G in ((marg.row_marginal, arr.a, arr.G1), (marg.col_marginal, arr.b, arr.G2)):
        v = mmd_squared(w, target, G, G, G)
        res.append(v.squared if arr.q == 2 else v.value)
    cost_term = float(np.vdot(arr.C, alpha))
    loss = cost_term + arr.lambda1 * res[0] + arr.lambda2 * res[1]
    return SolveReport(
        plan=plan,
        objective_trace=trace,
        cost_term=cost_term,
        marginal_residuals=(float(res[0]), float(res[1])),
        loss_value=float(loss),
        loss_root=float(max(loss, 0.0) ** (1.0 / root_power)),
        lambdas=(arr.lambda1, arr.lambda2),
        method=method,
        stages=[float(v) for v in stages],
        iterations_total=int(iters),
    )


def lifted_loss(mu, nu, cost: CostSpec, kernel: KernelSpec, lam: float, q: int = 1,
                cfg: SolverConfig | None = None, p: float | None = None) -> float:
    """Lifted distance between ``mu`` and ``nu``: the solved objective's p-th root.

    Both penalty weights equal ``lam``. ``p`` overrides the exponent of a
    Euclidean ``cost``.
    """
    if p is not None:
        cost = CostSpec(cost.ground, p)
    pb = UotProblem(mu, nu, kernel, cost, lam, lam, q)
    return solve(pb, cfg).loss_root


def barycentric_map(plan: TransportPlan | np.ndarray, target_points) -> np.ndarray:
    """Plan-weighted mean of the targets for each source point.

    Rows whose mass is below ``1e-15`` cannot be mapped and come back as
    rows of NaN.
    """
    alpha = plan.alpha if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    Y = np.asarray(target_points, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != alpha.shape[1]:
        raise DimensionMismatch(f"{Y.shape[0]} target points for a plan with {alpha.shape[1]} columns")
    mass = alpha.sum(axis=1)
    out = np.full((alpha.shape[0], Y.shape[1]), np.nan)
    ok = mass >= 1e-15
    out[ok] = (alpha[ok] @ Y) / mass[ok, None]
    return out
