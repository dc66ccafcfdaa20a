"""Exact optimal transport for small or one-dimensional balanced instances.

Both solvers are finite and exact and share no code with the iterative
solvers; they serve as reference values in tests and as a small-scale EMD
evaluator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MassMismatch, NumericalError, TooLarge
from .measures import DiscreteMeasure, TransportPlan

MAX_CELLS = 36
MAX_PERMUTATION_SIZE = 8
MASS_TOL = 1e-9


@dataclass(frozen=True)
class ExactOtResult:
    cost: float
    plan: TransportPlan


def _check_masses(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if abs(mu.total_mass - nu.total_mass) > MASS_TOL * max(1.0, mu.total_mass, nu.total_mass):
        raise MassMismatch(f"total masses differ: {mu.total_mass!r} vs {nu.total_mass!r}")


def exact_ot_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0) -> ExactOtResult:
    """Monotone (north-west corner) coupling of two measures on the line.

    Optimal for any cost ``|x - y|^p`` with ``p >= 1``.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionMismatch("exact_ot_1d needs one-dimensional supports")
    _check_masses(mu, nu)
    x, y = mu.points[:, 0], nu.points[:, 0]
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    a, b = mu.weights[ix].copy(), nu.weights[iy].copy()
    # the masses may differ by round-off; let the last target absorb it
    b[-1] += a.sum() - b.sum()
    plan = np.zeros((mu.size, nu.size))
    i = j = 0
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        plan[ix[i], iy[j]] += m
        a[i] -= m
        b[j] -= m
        if a[i] <= 0 and i < a.size - 1:
            i += 1
        elif b[j] <= 0 and j < b.size - 1:
            j += 1
        else:
            break
    plan = np.maximum(plan, 0.0)
    C = np.abs(x[:, None] - y[None, :]) ** p
    return ExactOtResult(float(np.sum(plan * C)), TransportPlan(plan, mu.points, nu.points))


def exact_ot_enum(mu: DiscreteMeasure, nu: DiscreteMeasure, cost) -> ExactOtResult:
    """Exact transport for tiny balanced instances.

    Uniform equal-size marginals are solved over all permutations
    (``m <= 8``); anything else (``m1 * m2 <= 36``) by walking the bases of
    the transportation polytope until a dual certificate proves optimality.
    """
    C = np.asarray(cost, dtype=float)
    m1, m2 = mu.size, nu.size
    if C.shape != (m1, m2):
        raise DimensionMismatch(f"cost shape {C.shape} vs supports ({m1}, {m2})")
    _check_masses(mu, nu)
    a, b = mu.weights, nu.weights
    uniform = m1 == m2 and np.ptp(a) == 0 and np.ptp(b) == 0 and np.isclose(a[0], b[0], rtol=1e-12, atol=0)
    if uniform and m1 <= MAX_PERMUTATION_SIZE:
        plan = _by_permutation(C, a[0])
    elif m1 * m2 <= MAX_CELLS:
        plan = _by_bases(C, a, b)
    else:
        raise TooLarge(f"{m1} x {m2} instance exceeds the enumeration bound")
    return ExactOtResult(float(np.sum(plan * C)), TransportPlan(plan, mu.points, nu.points))


def _by_permutation(C, w):
    m = C.shape[0]
    rows = np.arange(m)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(m)):
        total = C[rows, perm].sum()
        if total < best:
            best, best_perm = total, perm
    plan = np.zeros_like(C)
    plan[rows, best_perm] = w
    return plan


def _by_bases(C, a, b):
    """Pivot between spanning-tree bases of the transportation polytope.

    Starts from the north-west corner basis and moves to an adjacent basis
    while some non-basic cell has negative reduced cost (Bland's rule, so
    degenerate pivots cannot cycle). On exit the potentials ``u, v`` satisfy
    ``u_i + v_j <= C_ij`` everywhere, a dual certificate of optimality that
    is checked explicitly.
    """
    m1, m2 = C.shape
    flow, basis = _north_west(a, b)
    scale = max(float(np.max(np.abs(C))), 1.0)
    tol = 1e-12 * scale
    for _ in range(100000):
        u, v = _potentials(C, basis, m1, m2)
        reduced = C - u[:, None] - v[None, :]
        entering = next(((i, j) for i in range(m1) for j in range(m2)
                         if (i, j) not in basis and reduced[i, j] < -tol), None)
        if entering is None:
            if np.any(reduced < -1e-9 * scale):
                raise NumericalError("transport pivoting ended without a dual certificate")
            plan = np.zeros((m1, m2))
            for (i, j), f in flow.items():
                plan[i, j] = max(f, 0.0)
            return plan
        cycle = _cycle(basis, entering, m1)
        minus = cycle[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] == theta)
        for k, c in enumerate(cycle):
            if c == entering:
                flow[c] = theta
            else:
                flow[c] += theta if k % 2 == 0 else -theta
        del flow[leaving]
        basis = set(flow)
    raise NumericalError("transport pivoting did not terminate")


def _north_west(a, b):
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    b[-1] += a.sum() - b.sum()
    flow = {}
    i = j = 0
    while True:
        f = min(a[i], b[j])
        flow[(i, j)] = f
        a[i] -= f
        b[j] -= f
        if i == a.size - 1 and j == b.size - 1:
            break
        # move along exactly one line so the basis stays a spanning tree
        if (a[i] <= b[j] and i < a.size - 1) or j == b.size - 1:
            i += 1
        else:
            j += 1
    return flow, set(flow)


def _potentials(C, basis, m1, m2):
    u = np.full(m1, np.nan)
    v = np.full(m2, np.nan)
    u[0] = 0.0
    pending = set(basis)
    while pending:
        progress = False
        for i, j in list(pending):
            if not np.isnan(u[i]):
                v[j] = C[i, j] - u[i]
            elif not np.isnan(v[j]):
                u[i] = C[i, j] - v[j]
            else:
                continue
            pending.discard((i, j))
            progress = True
        if not progress:
            raise NumericalError("basis is not a spanning tree")
    return u, v


def _cycle(basis, entering, m1):
    """Cells of the unique cycle that ``entering`` closes, starting with it.

    Signs alternate along the list: even positions gain flow, odd lose it.
    """
    adj = {}
    for i, j in basis:
        adj.setdefault(i, []).append(m1 + j)
        adj.setdefault(m1 + j, []).append(i)
    start, goal = m1 + entering[1], entering[0]
    parent = {start: None}
    queue = [start]
    for node in queue:
        if node == goal:
            break
        for nb in adj.get(node, []):
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    # path runs row i -> ... -> column j; turn node pairs into cells
    cells = [entering]
    for x, y in zip(path, path[1:]):
        cells.append((x, y - m1) if x < m1 else (y, x - m1))
    return cells
