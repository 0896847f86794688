"""Exact optimal transport for tiny instances and for measures on the line.

These are test oracles: slow, exact, and independent of the entropic solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .errors import TooLarge
from .measures import Atoms

ORACLE_MAX_SUPPORT = 64


@dataclass(frozen=True, eq=False)
class Coupling:
    source: np.ndarray
    target: np.ndarray
    plan: np.ndarray
    cost: float

    def marginals(self):
        return self.plan.sum(axis=1), self.plan.sum(axis=0)


def _as_atoms(mu):
    if isinstance(mu, Atoms):
        return mu
    if hasattr(mu, "as_atoms"):
        return mu.as_atoms()
    points, weights = mu
    return Atoms(points, weights)


def sq_dist(x, y):
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    return np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)


def _polish(plan, a, b):
    """Re-solve the marginal equations on the support of a vertex plan.

    A basic solution of the transport LP is supported on a forest, so the
    equations have a unique solution there; this removes the solver's
    feasibility slack (~1e-9) without moving the vertex.
    """
    n, m = plan.shape
    support = np.argwhere(plan > 1e-13)
    A = np.zeros((n + m, len(support)))
    for col, (i, j) in enumerate(support):
        A[i, col] = 1.0
        A[n + j, col] = 1.0
    rhs = np.concatenate([a, b])
    vals, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.any(vals < -1e-12) or np.abs(A @ vals - rhs).max() > 1e-13:
        return plan
    out = np.zeros_like(plan)
    out[support[:, 0], support[:, 1]] = np.clip(vals, 0, None)
    return out


def wasserstein2_exact_small(mu, nu):
    """Exact squared W2 and an optimal plan between two small atomic measures.

    Solved as a dense transportation LP with the HiGHS dual simplex, which
    returns a vertex of the coupling polytope.
    """
    mu, nu = _as_atoms(mu), _as_atoms(nu)
    n, m = len(mu), len(nu)
    if n + m > ORACLE_MAX_SUPPORT:
        raise TooLarge(f"combined support {n + m} exceeds oracle limit {ORACLE_MAX_SUPPORT}")
    C = sq_dist(mu.points, nu.points)
    a, b = mu.weights, nu.weights
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    # one marginal equation is redundant; dropping it keeps the LP full rank
    res = linprog(
        C.ravel(),
        A_eq=A_eq[:-1],
        b_eq=np.concatenate([a, b])[:-1],
        bounds=(0, None),
        method="highs-ds",
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = _polish(res.x.reshape(n, m), a, b)
    cost = float(np.sum(plan * C))
    return cost, Coupling(mu.points, nu.points, plan, cost)


def assignment_w2(x, y):
    """Exact squared W2 between two uniform clouds of equal size.

    Returns ``(cost, perm)`` with ``x[i]`` matched to ``y[perm[i]]``.  By
    Birkhoff's theorem an optimal plan between equal uniform clouds is a
    permutation; ties resolve to the lexicographically first assignment
    returned by the Hungarian solver.
    """
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    if len(x) != len(y):
        raise ValueError("clouds must have the same number of points")
    C = sq_dist(x, y)
    rows, perm = linear_sum_assignment(C)
    return float(C[rows, perm].mean()), perm


def _sorted_1d(mu):
    mu = _as_atoms(mu)
    if mu.dim != 1:
        raise ValueError("expected a measure on the line")
    x = mu.points[:, 0]
    order = np.argsort(x, kind="stable")
    return x[order], mu.weights[order]


def monotone_plan_1d(mu, nu):
    """North-west corner plan between sorted atoms: list of (i, j, mass).

    Indices refer to the sorted atoms returned alongside.
    """
    x, a = _sorted_1d(mu)
    y, b = _sorted_1d(nu)
    segs = []
    i = j = 0
    ra, rb = a[0], b[0]
    while i < len(x) and j < len(y):
        m = min(ra, rb)
        if m > 0:
            segs.append((i, j, m))
        ra -= m
        rb -= m
        # advance whichever side is exhausted (tolerance absorbs round-off)
        if ra <= 1e-15 * max(1.0, a[i]):
            i += 1
            ra = a[i] if i < len(x) else 0.0
        if rb <= 1e-15 * max(1.0, b[j]):
            j += 1
            rb = b[j] if j < len(y) else 0.0
    return x, a, y, b, segs


def wasserstein2_1d(mu, nu):
    """Squared W2 on the line by quantile matching."""
    x, _, y, _, segs = monotone_plan_1d(mu, nu)
    return float(sum(m * (x[i] - y[j]) ** 2 for i, j, m in segs))


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Monotone rearrangement from ``mu`` to ``nu`` on the line.

    ``support`` holds the sorted atoms of ``mu``; ``segments`` the monotone
    plan as ``(i, j, mass)``.  When no atom of ``mu`` is split,
    ``values[i]`` is the image of ``support[i]``; otherwise it is the
    barycentric projection.
    """

    support: np.ndarray
    source_weights: np.ndarray
    target: np.ndarray
    target_weights: np.ndarray
    segments: tuple

    @property
    def values(self):
        num = np.zeros(len(self.support))
        for i, j, m in self.segments:
            num[i] += m * self.target[j]
        return num / self.source_weights

    @property
    def is_deterministic(self):
        src = [i for i, _, _ in self.segments]
        return len(src) == len(set(src))

    def pushforward(self):
        w = np.zeros(len(self.target))
        for _, j, m in self.segments:
            w[j] += m
        return Atoms(self.target, w)

    def __call__(self, x):
        """Quantile map ``F_nu^-1(F_mu(x))`` with mid-atom CDF levels."""
        cdf = np.cumsum(self.source_weights) - 0.5 * self.source_weights
        u = np.interp(x, self.support, cdf)
        return quantile(self.target, self.target_weights, u)


def quantile(points, weights, u):
    """Generalized inverse CDF of an atomic measure on the line."""
    order = np.argsort(points, kind="stable")
    p, w = np.asarray(points)[order], np.asarray(weights)[order]
    cdf = np.cumsum(w)
    idx = np.searchsorted(cdf, np.asarray(u) - 1e-15, side="left")
    return p[np.clip(idx, 0, len(p) - 1)]


def monge_map_1d(mu, nu):
    x, a, y, b, segs = monotone_plan_1d(mu, nu)
    return MonotoneMap(x, a, y, b, tuple(segs))
