"""Entropy-regularized optimal transport in the log domain.

Conventions
-----------
The regularized cost is ``W_eps(a, b) = min <C, P> + eps * KL(P | a x b)``
with ``C = |x - y|^2``.  Its dual value at potentials ``(f, g)`` is::

    <f, a> + <g, b> - eps * (mass(P) - 1)

and is what :func:`sinkhorn_distance` reports.  The last update of every
sweep fixes the target marginal exactly, so ``mass(P) = 1`` and the
correction vanishes at return.

With ``debias=True`` (the default) distances are Sinkhorn divergences::

    S_eps(a, b) = W_eps(a, b) - W_eps(a, a) / 2 - W_eps(b, b) / 2

which vanish for ``a == b`` and whose first variation in ``a`` is
``f_ab - f_aa``.

Measures are either :class:`~wspline.measures.DiscreteMeasure` on a shared
grid (the Gibbs kernel is applied separably, one axis at a time) or
:class:`~wspline.measures.Atoms` with a dense cost matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import EpsTooSmall, NoConvergence, NotConverged
from .measures import Atoms, DiscreteMeasure

WEIGHT_FLOOR = 1e-12
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000
_TINY = 1e-280


# --------------------------------------------------------------------------
# Gibbs kernels


class GridKernel:
    """Log-domain Gibbs kernel ``exp(-|x - y|^2 / eps)`` on a grid.

    ``log_apply(h)`` returns ``log sum_b exp(h_b - C_ab / eps)``.  The fast
    path absorbs a separable part of ``h`` into two stabilized 1D kernels
    and contracts the bounded residual with two matrix products; entries
    that underflow there are recomputed with an exact separable
    log-sum-exp.
    """

    def __init__(self, grid, eps):
        self.grid = grid
        self.eps = float(eps)
        self.C = [(ax[:, None] - ax[None, :]) ** 2 / self.eps for ax in (grid.axis(0), grid.axis(1))]
        self.fallbacks = 0

    def log_apply(self, h):
        C1, C2 = self.C
        q1 = h.max(axis=1)
        r = h - q1[:, None]
        q2 = r.max(axis=0)
        R = np.exp(r - q2[None, :])
        E1 = q1[None, :] - C1
        s1 = E1.max(axis=1)
        E2 = q2[None, :] - C2
        s2 = E2.max(axis=1)
        P = np.exp(E1 - s1[:, None]) @ R @ np.exp(E2 - s2[:, None]).T
        if np.all(P > _TINY):
            return s1[:, None] + s2[None, :] + np.log(P)
        self.fallbacks += 1
        return self.log_apply_exact(h)

    def log_apply_exact(self, h):
        C1, C2 = self.C
        inner = logsumexp(h[:, None, :] - C2[None, :, :], axis=-1)
        return logsumexp(inner.T[:, None, :] - C1[None, :, :], axis=-1).T

    log_apply_T = log_apply


class DenseKernel:
    """Log-domain Gibbs kernel between two explicit point sets."""

    def __init__(self, x, y, eps):
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        self.eps = float(eps)
        self.C = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1) / self.eps

    def log_apply(self, h):
        """Map a log-vector on the target points to the source points."""
        return logsumexp(h[None, :] - self.C, axis=1)

    def log_apply_T(self, h):
        return logsumexp(h[:, None] - self.C, axis=0)


def apply_gibbs_kernel(values, eps, grid):
    """Apply ``exp(-|x - y|^2 / eps)`` to a cell array (no log domain).

    Separable: one 1D kernel per axis, truncated at the grid boundary.
    """
    v = np.asarray(values, dtype=float)
    K1, K2 = (np.exp(-((ax[:, None] - ax[None, :]) ** 2) / eps) for ax in (grid.axis(0), grid.axis(1)))
    return K1 @ v @ K2.T


def _support(mu):
    if isinstance(mu, DiscreteMeasure):
        return ("grid", mu.grid)
    if isinstance(mu, Atoms):
        return ("atoms", mu.points)
    if hasattr(mu, "as_atoms"):
        return ("atoms", mu.as_atoms().points)
    raise TypeError(f"unsupported measure type {type(mu).__name__}")


def _weights(mu):
    if isinstance(mu, DiscreteMeasure):
        return mu.weights
    if not isinstance(mu, Atoms):
        mu = mu.as_atoms()
    return mu.weights


def make_kernel(mu, nu, eps):
    kind_a, sa = _support(mu)
    kind_b, sb = _support(nu)
    if kind_a == "grid" and kind_b == "grid":
        if sa != sb:
            raise ValueError("grid measures must share their grid")
        return GridKernel(sa, eps)
    if kind_a != kind_b:
        raise TypeError("cannot mix grid and atomic measures")
    return DenseKernel(sa, sb, eps)


def floored_log_weights(w, floor=WEIGHT_FLOOR):
    """Floor weights, renormalize, and return ``(log weights, floored mask)``."""
    w = np.asarray(w, dtype=float)
    mask = w < floor
    wf = np.where(mask, floor, w)
    wf = wf / wf.sum()
    return np.log(wf), mask


# --------------------------------------------------------------------------
# Sinkhorn iterations


@dataclass
class SinkhornState:
    """Potentials and diagnostics of one regularized transport problem.

    ``f``, ``g`` are the (log-domain) dual potentials in squared-length
    units.  ``history`` holds the L-infinity source-marginal violation after
    every sweep.  ``f_self``/``g_self`` are the symmetric potentials of the
    two self-transport problems when the divergence is debiased.
    """

    eps: float
    f: np.ndarray
    g: np.ndarray
    n_iter: int
    violation: float
    converged: bool
    history: list = field(default_factory=list)
    raw_cost: float = float("nan")
    debiased: bool = False
    f_self: np.ndarray | None = None
    g_self: np.ndarray | None = None
    self_costs: tuple = (0.0, 0.0)
    source_floored: np.ndarray | None = None
    target_floored: np.ndarray | None = None
    kernel: object = field(default=None, repr=False)
    log_a: np.ndarray | None = field(default=None, repr=False)
    log_b: np.ndarray | None = field(default=None, repr=False)

    @property
    def cost(self):
        if self.debiased:
            return self.raw_cost - 0.5 * (self.self_costs[0] + self.self_costs[1])
        return self.raw_cost


def _eps_ladder(eps, eps_start, factor=0.5):
    out = []
    e = eps_start
    while e > eps:
        out.append(e)
        e *= factor
    out.append(eps)
    return out


def _sinkhorn_loop(kernel, log_a, log_b, eps, tol, max_iter, f, g):
    """Alternating log-domain updates; returns potentials and history."""
    history = []
    n = 0
    violation = np.inf
    while n < max_iter:
        f_new = -eps * kernel.log_apply(g / eps + log_b)
        # source marginal of the current plan is a * exp((f - f_new) / eps)
        if n > 0:
            violation = float(np.max(np.abs(np.expm1((f - f_new) / eps)) * np.exp(log_a)))
            history.append(violation)
            if violation <= tol:
                break
        f = f_new
        g = -eps * kernel.log_apply_T(f / eps + log_a)
        n += 1
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise EpsTooSmall(f"non-finite potentials at eps={eps:g}")
    return f, g, n, violation, history


def _symmetric_loop(kernel, log_a, eps, tol, max_iter, f):
    """Averaged fixed-point iteration for ``W_eps(a, a)``."""
    history = []
    violation = np.inf
    n = 0
    while n < max_iter:
        t = -eps * kernel.log_apply(f / eps + log_a)
        violation = float(np.max(np.abs(np.expm1((f - t) / eps)) * np.exp(log_a)))
        history.append(violation)
        if violation <= tol:
            break
        f = 0.5 * (f + t)
        n += 1
        if not np.all(np.isfinite(f)):
            raise EpsTooSmall(f"non-finite symmetric potential at eps={eps:g}")
    return f, n, violation, history


def _default_eps_start(kernel, eps):
    if isinstance(kernel, GridKernel):
        d2 = kernel.grid.diameter2
    else:
        d2 = float(kernel.C.max() * kernel.eps)
    return max(d2, eps)


def sinkhorn_potentials(mu, nu, eps, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, init=None,
                        eps_scaling=None, kernel=None):
    """Solve one (non-debiased) regularized problem; returns a state.

    ``init`` may be a previous :class:`SinkhornState` or a ``(f, g)`` pair
    to warm-start from.  Without a warm start the solve anneals ``eps``
    geometrically from the squared diameter (``eps_scaling=None`` means
    "anneal only on cold starts").
    """
    kernel = kernel or make_kernel(mu, nu, eps)
    log_a, mask_a = floored_log_weights(_weights(mu))
    log_b, mask_b = floored_log_weights(_weights(nu))
    if init is None:
        f = np.zeros_like(log_a)
        g = np.zeros_like(log_b)
    elif isinstance(init, SinkhornState):
        f, g = init.f.copy(), init.g.copy()
    else:
        f, g = (np.array(v, dtype=float) for v in init)
    if eps_scaling is None:
        eps_scaling = init is None
    total = 0
    history = []
    if eps_scaling:
        for e in _eps_ladder(eps, _default_eps_start(kernel, eps))[:-1]:
            k = make_kernel(mu, nu, e) if not isinstance(kernel, GridKernel) else GridKernel(kernel.grid, e)
            f, g, n, _, _ = _sinkhorn_loop(k, log_a, log_b, e, max(tol, 1e-3 * e), max_iter, f, g)
            total += n
    f, g, n, viol, hist = _sinkhorn_loop(kernel, log_a, log_b, eps, tol, max_iter, f, g)
    total += n
    history.extend(hist)
    a, b = np.exp(log_a), np.exp(log_b)
    # mass(P) = 1 exactly after the final target update
    raw = float(np.sum(f * a) + np.sum(g * b))
    state = SinkhornState(
        eps=eps, f=f, g=g, n_iter=total, violation=viol, converged=viol <= tol,
        history=history, raw_cost=raw, source_floored=mask_a, target_floored=mask_b,
        kernel=kernel, log_a=log_a, log_b=log_b,
    )
    if not state.converged:
        raise NoConvergence(max_iter, state)
    return state


def self_potential(mu, eps, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, init=None, kernel=None):
    """Symmetric potential ``f`` with ``W_eps(mu, mu) = 2 <f, mu>``."""
    kernel = kernel or make_kernel(mu, mu, eps)
    log_a, _ = floored_log_weights(_weights(mu))
    if init is None:
        # one-shot c-transform of zero is already a decent start
        f = -eps * kernel.log_apply(log_a)
    else:
        f = np.array(init, dtype=float)
    f, n, viol, hist = _symmetric_loop(kernel, log_a, eps, tol, max_iter, f)
    if viol > tol:
        raise NoConvergence(max_iter, None, f"symmetric Sinkhorn did not converge ({viol:.2e})")
    cost = float(2 * np.sum(f * np.exp(log_a)))
    return f, cost


def sinkhorn_distance(mu, nu, eps, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, debias=True,
                      init=None, self_init=(None, None)):
    """Regularized transport cost between two measures.

    Returns ``(cost, state)``; ``cost`` is the Sinkhorn divergence when
    ``debias`` is set and the raw ``W_eps`` otherwise.

    Raises
    ------
    NoConvergence
        If the marginal violation is still above ``tol`` after ``max_iter``
        sweeps; the exception carries the last state.
    EpsTooSmall
        If the potentials overflow.
    """
    state = sinkhorn_potentials(mu, nu, eps, tol, max_iter, init=init)
    if debias:
        # a grid kernel serves all three problems; dense ones differ per pair
        k = state.kernel if isinstance(state.kernel, GridKernel) else None
        fa, ca = self_potential(mu, eps, tol, max_iter, init=self_init[0], kernel=k)
        if nu is mu:
            fb, cb = fa, ca
        else:
            fb, cb = self_potential(nu, eps, tol, max_iter, init=self_init[1], kernel=k)
        state.debiased = True
        state.f_self, state.g_self = fa, fb
        state.self_costs = (ca, cb)
    return state.cost, state


def sinkhorn_grad_weights(state, side="source", zero_floored=True):
    """Gradient of the reported cost with respect to one marginal's weights.

    The first variation (debiased: ``f - f_self``) centered to zero mean so
    that it is tangent to the simplex.  Cells that were floored before the
    solve report 0 when ``zero_floored``.
    """
    if not state.converged:
        raise NotConverged("gradient requested from an unconverged state")
    if side == "source":
        pot, selfpot, mask = state.f, state.f_self, state.source_floored
    elif side == "target":
        pot, selfpot, mask = state.g, state.g_self, state.target_floored
    else:
        raise ValueError("side must be 'source' or 'target'")
    grad = pot - selfpot if state.debiased else pot.copy()
    grad = grad - grad.mean()
    if zero_floored and mask is not None:
        grad = np.where(mask, 0.0, grad)
    return grad


def transport_plan(state):
    """Dense plan for atomic measures (or small grids)."""
    k = state.kernel
    a, b = np.exp(state.log_a).ravel(), np.exp(state.log_b).ravel()
    if isinstance(k, DenseKernel):
        C = k.C
    else:
        pts = k.grid.centers().reshape(-1, 2)
        C = np.sum((pts[:, None] - pts[None]) ** 2, axis=-1) / k.eps
    logP = state.f.ravel()[:, None] / state.eps + state.g.ravel()[None, :] / state.eps - C
    return np.exp(logP) * a[:, None] * b[None, :]


# --------------------------------------------------------------------------
# Barycenters


@dataclass
class EntropicBarycenter:
    weights: tuple
    result: DiscreteMeasure
    potentials: dict
    residual: float
    n_iter: int
    debiased: bool = True


def entropic_barycenter(mu1, mu2, t, eps, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, debias=True,
                        init=None):
    """Fixed-support entropic barycenter with weights ``(1 - t, t)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return entropic_barycenter_multi([mu1, mu2], [1.0 - t, t], eps, tol, max_iter, debias, init)


def entropic_barycenter_multi(measures, lambdas, eps, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                              debias=True, init=None):
    """Iterative Bregman projections for a grid barycenter.

    With ``debias`` the extra self-transport scaling ``d`` of the debiased
    scheme is updated jointly, so that a single input with weight one is
    its own barycenter.  All scalings are kept as logarithms.
    """
    grid = measures[0].grid
    if any(m.grid != grid for m in measures):
        raise ValueError("barycenter inputs must share a grid")
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam < 0) or abs(lam.sum() - 1) > 1e-12:
        raise ValueError("barycenter weights must be nonnegative and sum to 1")
    kernel = GridKernel(grid, eps)
    logp = [floored_log_weights(m.weights)[0] for m in measures]
    active = [k for k in range(len(measures)) if lam[k] > 0]
    if init is None:
        log_b = [np.zeros(grid.shape) for _ in measures]
        log_d = np.zeros(grid.shape)
    else:
        log_b = [x.copy() for x in init["log_b"]]
        log_d = init["log_d"].copy()
    residual = np.inf
    n = 0
    log_a_prev = None
    while n < max_iter:
        Kb = [kernel.log_apply(log_b[k]) for k in range(len(measures))]
        log_a = [logp[k] - Kb[k] for k in range(len(measures))]
        Ka = [kernel.log_apply_T(log_a[k]) for k in range(len(measures))]
        log_q = sum(lam[k] * Ka[k] for k in active)
        if debias:
            log_q = log_q + log_d
        for k in range(len(measures)):
            log_b[k] = log_q - Ka[k]
        if debias:
            Kd = kernel.log_apply(log_d)
            d_res = float(np.max(np.abs(np.exp(log_d + Kd) - np.exp(log_q))))
            log_d = 0.5 * (log_d + log_q - Kd)
        else:
            d_res = 0.0
        # input-side marginal mismatch of the previous scalings
        if log_a_prev is not None:
            res_in = max(float(np.max(np.abs(np.exp(log_a_prev[k] + Kb[k]) - np.exp(logp[k])))) for k in active)
            residual = max(res_in, d_res)
            if residual <= tol:
                break
        log_a_prev = log_a
        n += 1
        if not np.all(np.isfinite(log_q)):
            raise EpsTooSmall(f"non-finite barycenter at eps={eps:g}")
    q = np.exp(log_q - log_q.max())
    result = DiscreteMeasure(grid, q)
    bary = EntropicBarycenter(
        weights=tuple(lam), result=result,
        potentials={"log_b": log_b, "log_d": log_d}, residual=residual, n_iter=n, debiased=debias,
    )
    if residual > tol:
        raise NoConvergence(max_iter, bary)
    return bary
