"""Barycenter of several measures under the squared-MMD-regularized transport loss.

Each input ``s_i`` gets a plan ``alpha_i`` from its own support to the
union of all input supports. The barycenter weights on the union are
``beta = sum_j rho_j alpha_j' 1`` and the objective is::

    sum_i rho_i ( <C_i, alpha_i> + lambda1 |alpha_i 1 - s_i|^2_{G_i}
                                 + lambda2 |alpha_i' 1 - beta|^2_G )

``beta`` is never a free variable, so it always equals the weighted column
sums of the current plans.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonFiniteInput
from .kernels import CostSpec, KernelSpec, cost_matrix, gram
from .measures import NONNEGATIVE, SIMPLEX, DiscreteMeasure, TransportPlan
from .mmd_uot import continuation_schedule, run_engine
from .optim import ObjectiveTrace, SolverConfig


@dataclass(frozen=True)
class BarycenterProblem:
    inputs: tuple[DiscreteMeasure, ...]
    rho: np.ndarray
    kernel: KernelSpec
    cost: CostSpec = field(default_factory=CostSpec)
    lambda1: float = 1.0
    lambda2: float = 1.0
    constraint: str = NONNEGATIVE

    def __post_init__(self):
        inputs = tuple(self.inputs)
        if not inputs:
            raise ConfigError("a barycenter needs at least one input measure")
        if len({m.dim for m in inputs}) != 1:
            raise DimensionMismatch("input measures live in different dimensions")
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        if rho.shape != (len(inputs),):
            raise DimensionMismatch(f"{rho.size} interpolation weights for {len(inputs)} inputs")
        if not np.all(np.isfinite(rho)):
            raise NonFiniteInput("interpolation weights must be finite")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise ConfigError("interpolation weights must be non-negative and sum to 1")
        for name in ("lambda1", "lambda2"):
            lam = getattr(self, name)
            if not (np.isfinite(lam) and lam >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {lam}")
        if self.constraint not in (NONNEGATIVE, SIMPLEX):
            raise ConfigError(f"unknown constraint mode {self.constraint!r}")
        rho.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "rho", rho)

    @property
    def union_support(self) -> np.ndarray:
        # duplicates are kept so plan columns map one-to-one onto input points
        return np.vstack([m.points for m in self.inputs])

    def arrays(self) -> "BarycenterArrays":
        return BarycenterArrays.from_problem(self)


@dataclass(frozen=True)
class BarycenterArrays:
    costs: tuple[np.ndarray, ...]
    grams: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    G: np.ndarray
    rho: np.ndarray
    lambda1: float
    lambda2: float

    @classmethod
    def from_problem(cls, pb: BarycenterProblem) -> "BarycenterArrays":
        Z = pb.union_support
        return cls(
            tuple(cost_matrix(m.points, Z, pb.cost) for m in pb.inputs),
            tuple(gram(m.points, m.points, pb.kernel) for m in pb.inputs),
            tuple(np.asarray(m.weights) for m in pb.inputs),
            gram(Z, Z, pb.kernel),
            pb.rho,
            pb.lambda1,
            pb.lambda2,
        )

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [C.shape for C in self.costs]

    def split(self, x) -> list[np.ndarray]:
        out, start = [], 0
        for m_i, m in self.shapes:
            out.append(x[start:start + m_i * m].reshape(m_i, m))
            start += m_i * m
        return out

    def value_and_grad(self, alphas, lambda1=None, lambda2=None):
        lam1 = self.lambda1 if lambda1 is None else lambda1
        lam2 = self.lambda2 if lambda2 is None else lambda2
        beta = barycenter_weights(alphas, self.rho)
        value = 0.0
        grads = []
        for alpha, C, G_i, s_i, rho_i in zip(alphas, self.costs, self.grams, self.targets, self.rho):
            r = alpha.sum(axis=1) - s_i
            t = alpha.sum(axis=0) - beta
            Gr, Gt = G_i @ r, self.G @ t
            value += rho_i * (float(np.vdot(C, alpha)) + lam1 * float(r @ Gr) + lam2 * float(t @ Gt))
            # beta's own dependence on alpha_i drops out because sum(rho) = 1
            grads.append(rho_i * (C + (2.0 * lam1) * Gr[:, None] + (2.0 * lam2) * Gt[None, :]))
        return value, grads

    def flat_value_and_grad(self, x, lambda1=None, lambda2=None):
        value, grads = self.value_and_grad(self.split(x), lambda1, lambda2)
        return value, np.concatenate([g.ravel() for g in grads])


@dataclass
class BarycenterResult:
    plans: list[TransportPlan]
    barycenter_weights: np.ndarray
    union_support: np.ndarray
    objective_trace: ObjectiveTrace
    loss_value: float = 0.0
    stages: list[float] = field(default_factory=list)
    iterations_total: int = 0

    @property
    def converged(self) -> bool:
        return self.objective_trace.converged

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.union_support, self.barycenter_weights)


def barycenter_weights(alphas, rho) -> np.ndarray:
    """``sum_j rho_j alpha_j' 1``."""
    beta = 0.0
    for alpha, r in zip(alphas, rho):
        beta = beta + r * np.asarray(alpha).sum(axis=0)
    return np.asarray(beta, dtype=float)


def barycenter_objective_and_gradient(problem: BarycenterProblem | BarycenterArrays, alphas):
    """Objective value and per-plan gradients for the plans ``alphas``."""
    arr = problem.arrays() if isinstance(problem, BarycenterProblem) else problem
    alphas = [np.asarray(a, dtype=float) for a in alphas]
    if [a.shape for a in alphas] != arr.shapes:
        raise DimensionMismatch(f"plan shapes {[a.shape for a in alphas]} vs {arr.shapes}")
    if not all(np.all(np.isfinite(a)) for a in alphas):
        raise NonFiniteInput("plans contain non-finite entries")
    return arr.value_and_grad(alphas)


def initial_plans(problem: BarycenterProblem) -> list[np.ndarray]:
    """Each input's weights spread evenly over the union support."""
    m = sum(p.size for p in problem.inputs)
    plans = []
    for s in problem.inputs:
        w = s.weights / s.total_mass if problem.constraint == SIMPLEX else s.weights
        plans.append(np.outer(w, np.full(m, 1.0 / m)))
    return plans


def solve_barycenter(problem: BarycenterProblem, cfg: SolverConfig | None = None, init=None) -> BarycenterResult:
    """Minimize jointly over all plans, warm-starting over growing penalty weights."""
    cfg = cfg or SolverConfig()
    arr = problem.arrays()
    plans0 = initial_plans(problem) if init is None else [np.asarray(a, dtype=float) for a in init]
    if [a.shape for a in plans0] != arr.shapes:
        raise DimensionMismatch("initial plans do not match the problem")
    x = np.concatenate([a.ravel() for a in plans0])
    groups = None
    total = 1.0
    if problem.constraint == SIMPLEX:
        groups = np.concatenate([np.full(m_i * m, k) for k, (m_i, m) in enumerate(arr.shapes)])
        total = np.ones(len(arr.shapes))
    lam_max = max(arr.lambda1, arr.lambda2)
    mass = max(max(s.total_mass for s in problem.inputs), 1e-300)
    reference = max(float(np.max(np.abs(C))) for C in arr.costs) / mass
    stages = continuation_schedule(lam_max, reference, cfg.continuation_factor) if cfg.continuation else [1.0]
    trace = None
    iters = 0
    for s in stages:
        def fun(x, s=s):
            return arr.flat_value_and_grad(x, s * arr.lambda1, s * arr.lambda2)

        x, trace = run_engine(fun, x, cfg, problem.constraint, total, groups)
        iters += trace.iterations_used
    alphas = [np.maximum(a, 0.0) for a in arr.split(x)]
    if problem.constraint == SIMPLEX:
        alphas = [a / a.sum() for a in alphas]
    Z = problem.union_support
    plans = [TransportPlan(a, s.points, Z, problem.constraint) for a, s in zip(alphas, problem.inputs)]
    return BarycenterResult(
        plans=plans,
        barycenter_weights=barycenter_weights(alphas, problem.rho),
        union_support=Z,
        objective_trace=trace,
        loss_value=float(arr.value_and_grad(alphas)[0]),
        stages=[float(v) for v in stages],
        iterations_total=iters,
    )
