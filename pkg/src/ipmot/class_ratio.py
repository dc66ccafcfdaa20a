"""Class-ratio estimation by matching a reweighted training set to a test set.

Training point ``i`` of class ``y_i`` carries weight ``z_i = theta[y_i] / n[y_i]``
so that the reweighted training measure has class proportions ``theta``.
The estimate minimizes a transport loss between that measure and the
uniform test measure, alternating a plan step (``theta`` fixed) with a
``theta`` step (plan fixed) until ``theta`` settles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch, EmptyClass, NonFiniteInput
from .kernels import CostSpec, KernelSpec, cost_matrix, gram
from .kl_uot import KlUotProblem, solve_kl_uot
from .measures import SIMPLEX, DiscreteMeasure
from .mmd_uot import FLEXIBLE, STANDARD, SolveReport, UotArrays, build_report, run_engine
from .optim import ObjectiveTrace, SolverConfig, mirror_descent_simplex

logger = logging.getLogger(__name__)

Z_FLOOR = 1e-12
THETA_TOL = 1e-6
OUTER_ROUNDS = 100


@dataclass(frozen=True)
class LabeledDataset:
    """Training points with integer class labels ``0 .. c-1``."""

    points: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if not np.all(np.isfinite(pts)):
            raise NonFiniteInput("training points contain non-finite coordinates")
        labels = np.asarray(self.labels)
        if labels.shape != (pts.shape[0],):
            raise DimensionMismatch(f"{labels.size} labels for {pts.shape[0]} points")
        if labels.size == 0:
            raise EmptyClass("the training set is empty")
        if not np.all(labels == np.round(labels)):
            raise ConfigError("labels must be integers")
        labels = labels.astype(int)
        c = int(labels.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if labels.min() < 0 or labels.max() >= c:
            raise ConfigError(f"labels must lie in 0..{c - 1}")
        counts = np.bincount(labels, minlength=c)
        if np.any(counts == 0):
            raise EmptyClass(f"classes {np.nonzero(counts == 0)[0].tolist()} have no training points")
        for name, value in (("points", pts), ("labels", labels), ("class_counts", counts)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "n_classes", c)

    def membership(self) -> np.ndarray:
        """Matrix ``M`` with ``z(theta) = M theta``."""
        M = np.zeros((self.labels.size, self.n_classes))
        M[np.arange(self.labels.size), self.labels] = 1.0 / self.class_counts[self.labels]
        return M


@dataclass(frozen=True)
class ClassRatio:
    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(th)) or np.any(th < 0) or abs(th.sum() - 1.0) > 1e-9:
            raise ConfigError(f"class ratio must lie on the simplex, got {th}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)


@dataclass
class RatioEstimate:
    ratio: ClassRatio
    report: SolveReport
    joint_trace: ObjectiveTrace
    rounds: int

    def __iter__(self):
        # unpacks as (ratio, report)
        return iter((self.ratio, self.report))


def z_vector(theta, data: LabeledDataset) -> np.ndarray:
    th = theta.theta if isinstance(theta, ClassRatio) else np.asarray(theta, dtype=float)
    if th.shape != (data.n_classes,):
        raise DimensionMismatch(f"{th.size} class weights for {data.n_classes} classes")
    return th[data.labels] / data.class_counts[data.labels]


def _test_points(test_points, dim):
    Y = np.asarray(test_points, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] < 1:
        raise DimensionMismatch("the test set is empty")
    if Y.shape[1] != dim:
        raise DimensionMismatch(f"test dimension {Y.shape[1]} vs training dimension {dim}")
    if not np.all(np.isfinite(Y)):
        raise NonFiniteInput("test points contain non-finite coordinates")
    return Y


def _theta_step(fun, theta, cfg):
    """Minimize ``fun`` over the simplex to high accuracy, starting at ``theta``."""
    if theta.size == 1:
        return theta
    tight = cfg.replace(rel_tol=1e-15, max_iters=20000, monotone_mirror=True)
    theta_new, _ = mirror_descent_simplex(fun, theta, tight)
    return theta_new


def estimate_ratio_mmd(train: LabeledDataset, test_points, kernel: KernelSpec, cost: CostSpec = CostSpec(),
                       lambdas=(1.0, 1.0), cfg: SolverConfig | None = None, parameterization: str = STANDARD,
                       inner_iters: int = 10, normalize_cost: bool = False) -> RatioEstimate:
    """Alternating estimate under the squared-MMD transport loss.

    The plan lives on the simplex and is updated by ``inner_iters`` descent
    steps per round (warm-started); the ``theta`` step minimizes the
    quadratic ``lambda1 |alpha 1 - M theta|^2_G`` over the simplex.
    ``normalize_cost`` divides the cost by its maximum.
    """
    cfg = cfg or SolverConfig()
    lam1, lam2 = (float(v) for v in lambdas)
    if parameterization not in (STANDARD, FLEXIBLE):
        raise ConfigError(f"unknown parameterization {parameterization!r}")
    X = train.points
    Y = _test_points(test_points, X.shape[1])
    m1, m2 = X.shape[0], Y.shape[0]
    M = train.membership()
    b_test = np.full(m2, 1.0 / m2)
    if parameterization == STANDARD:
        C = cost_matrix(X, Y, cost)
        G1, G2 = gram(X, X, kernel), gram(Y, Y, kernel)
        b = b_test
        rows, cols = X, Y
    else:
        Z = np.vstack([X, Y])
        C = cost_matrix(Z, Z, cost)
        G1 = G2 = gram(Z, Z, kernel)
        M = np.vstack([M, np.zeros((m2, train.n_classes))])
        b = np.concatenate([np.zeros(m1), b_test])
        rows = cols = Z
    if normalize_cost and C.max() > 0:
        C = C / C.max()
    Q = M.T @ G1 @ M

    theta = np.full(train.n_classes, 1.0 / train.n_classes)
    alpha = np.full(C.shape, 1.0 / C.size)
    inner = cfg.replace(max_iters=min(cfg.max_iters, int(inner_iters)))

    def arrays(th):
        return UotArrays(C, G1, M @ th, G2, b, lam1, lam2, 2, rows, cols)

    joint = ObjectiveTrace([arrays(theta).value_and_grad(alpha)[0]])
    rounds = 0
    for rounds in range(1, OUTER_ROUNDS + 1):
        arr = arrays(theta)
        alpha, _ = run_engine(arr.value_and_grad, alpha, inner, SIMPLEX, 1.0)
        joint.values.append(arr.value_and_grad(alpha)[0])
        if train.n_classes == 1:
            joint.converged = True
            break
        lin = M.T @ (G1 @ alpha.sum(axis=1))

        def theta_fun(th):
            return lam1 * (th @ Q @ th - 2.0 * lin @ th), lam1 * (2.0 * Q @ th - 2.0 * lin)

        theta_new = _theta_step(theta_fun, theta, cfg)
        change = float(np.max(np.abs(theta_new - theta)))
        theta = theta_new
        joint.values.append(arrays(theta).value_and_grad(alpha)[0])
        if change < THETA_TOL:
            joint.converged = True
            break
    joint.iterations_used = rounds
    arr = arrays(theta)
    report = build_report(arr, alpha, joint, SIMPLEX, cost.root_power, "alternating")
    theta = np.maximum(theta, 0.0)
    return RatioEstimate(ClassRatio(theta / theta.sum()), report, joint, rounds)


def estimate_ratio_kl(train: LabeledDataset, test_points, cost: CostSpec = CostSpec(), lambdas=(1.0, 1.0),
                      epsilon: float = 0.1, cfg: SolverConfig | None = None, normalize_cost: bool = False,
                      floor: float | None = Z_FLOOR, max_iters: int = 10000, tol: float = 1e-9) -> RatioEstimate:
    """Alternating estimate under the KL transport loss.

    The plan step is an entropic scaling solve with first-marginal target
    ``z(theta)`` floored at ``floor``; the ``theta`` step minimizes
    ``lambda1 KL(alpha 1 | z(theta))`` over the simplex. ``floor=None``
    disables flooring, so a training weight that reaches zero raises
    ``SupportViolation`` in the plan step.
    """
    cfg = cfg or SolverConfig()
    lam1, lam2 = (float(v) for v in lambdas)
    X = train.points
    Y = _test_points(test_points, X.shape[1])
    C = cost_matrix(X, Y, cost)
    if normalize_cost and C.max() > 0:
        C = C / C.max()
    target = DiscreteMeasure(Y, np.full(Y.shape[0], 1.0 / Y.shape[0]))
    labels, counts = train.labels, train.class_counts

    def z_of(th):
        z = th[labels] / counts[labels]
        return z if floor is None else np.maximum(z, floor)

    def solve_plan(th):
        source = DiscreteMeasure(X, z_of(th))
        pb = KlUotProblem(source, target, C, lam1, lam2, epsilon, max_iters, tol)
        return pb, solve_kl_uot(pb)

    theta = np.full(train.n_classes, 1.0 / train.n_classes)
    joint = ObjectiveTrace()
    rounds = 0
    pb, report = solve_plan(theta)
    for rounds in range(1, OUTER_ROUNDS + 1):
        if rounds > 1:
            pb, report = solve_plan(theta)
        joint.values.append(report.loss_value)
        if train.n_classes == 1:
            joint.converged = True
            break
        row_mass = report.plan.alpha.sum(axis=1)
        theta_new = kl_theta_step(row_mass, train, theta, lam1, cfg, floor)
        change = float(np.max(np.abs(theta_new - theta)))
        theta = theta_new
        if change < THETA_TOL:
            joint.converged = True
            break
    joint.iterations_used = rounds
    theta = np.maximum(theta, 0.0)
    return RatioEstimate(ClassRatio(theta / theta.sum()), report, joint, rounds)


def kl_theta_step(row_mass, train: LabeledDataset, theta0, lam1=1.0, cfg: SolverConfig | None = None,
                  floor: float | None = Z_FLOOR) -> np.ndarray:
    """Minimize ``lam1 * KL(row_mass | z(theta))`` over the simplex by mirror descent."""
    cfg = cfg or SolverConfig()
    p = np.asarray(row_mass, dtype=float)
    labels, counts = train.labels, train.class_counts
    c = train.n_classes
    if c == 1:
        return np.ones(1)
    lo = 0.0 if floor is None else floor

    def fun(th):
        raw = th[labels] / counts[labels]
        z = np.maximum(raw, lo)
        pos = p > 0
        if np.any(pos & (z <= 0)):
            return np.inf, np.zeros(c)
        value = float(np.sum(p[pos] * np.log(p[pos] / z[pos])) - p.sum() + z.sum())
        # d z_i / d theta_j is 1 / n_j on class j while z_i sits above the floor
        dz = np.where(raw > lo, -p / np.where(z > 0, z, 1.0) + 1.0, 0.0) / counts[labels]
        grad = np.bincount(labels, weights=dz, minlength=c)
        return lam1 * value, lam1 * grad

    return _theta_step(fun, np.asarray(theta0, dtype=float), cfg)
