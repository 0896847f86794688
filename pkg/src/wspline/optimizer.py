"""Minimization of the discrete spline objective over free frames.

Grid mode
---------
Free frames are weight arrays on the shared grid.  The objective is a
weighted sum of debiased Sinkhorn divergences between pairs of frames::

    J = sum_(i,j) w_ij S_eps(mu_i, mu_j)

whose gradient in ``mu_k`` is ``sum w_kj (f_kj - f_kk)``.  Two spline terms
are available:

``"polarization"`` (default)
    ``W2(b, Bar(a, c)) ~ W2(a,b)/2 + W2(b,c)/2 - W2(a,c)/4``.  Exact in flat
    families (diagonal Gaussians, translates), and every frame receives the
    gradient of every term it appears in.
``"frozen"``
    ``S_eps(mu_k, rho_k)`` with ``rho_k = Bar_eps(mu_{k-1}, mu_{k+1})``
    recomputed every ``refresh_every`` iterations and held fixed in between;
    only ``mu_k`` receives the gradient of its own term.

Each iteration takes one inertial step for all free frames at once: a
mirror (multiplicative) or projected gradient step with a per-frame step
size proportional to the inverse of its total term weight, heavy-ball
momentum ``beta`` and backtracking.  A step is accepted only if the
objective does not increase; on rejection the momentum is dropped first
and the step halved after that.  The regularization ``eps`` follows a
decreasing ladder, warm-starting weights and potentials.

Point-cloud mode
----------------
Free frames are clouds of ``M`` equally weighted atoms.  With optimal
assignments frozen, the objective is a convex quadratic in the atom
positions and is minimized exactly by a sparse linear solve; assignments
are then recomputed.  A new iterate is accepted only if the true objective
decreases.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConfigError, NoProgress, SingularSystem, WSplineError
from .measures import DiscreteMeasure, PointCloud
from .ot_exact import assignment_w2
from .sinkhorn import (
    entropic_barycenter,
    entropic_barycenter_multi,
    self_potential,
    sinkhorn_potentials,
)
from .spline import ExactSmallBackend, SinkhornBackend, SplineProblem, full_objective


# --------------------------------------------------------------------------
# Configuration and trace


@dataclass
class OptimizerConfig:
    """Knobs of the spline solvers.

    ``eps_ladder`` lists the regularizations visited in order (the last one
    should equal ``eps``); ``None`` builds a halving ladder from ``16 eps``.
    ``max_outer`` bounds the iterations per ladder stage.
    """

    max_outer: int = 200
    eps: float = 5e-4
    eps_ladder: tuple | None = None
    sinkhorn_tol: float = 1e-7
    sinkhorn_max_iter: int = 10_000
    beta: float = 0.8
    refresh_every: int = 10
    step_rule: str = "backtracking"
    step: float | None = None
    stop_tol: float = 1e-6
    seed: int = 0
    debias: bool = True
    spline_term: str = "polarization"
    geometry: str = "entropic"
    max_backtracks: int = 30
    threads: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta", "must lie in [0, 1)")
        if int(self.refresh_every) != self.refresh_every or self.refresh_every < 1:
            raise ConfigError("refresh_every", "must be a positive integer")
        if self.step is not None and self.step <= 0:
            raise ConfigError("step", "must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ConfigError("step_rule", "must be 'fixed' or 'backtracking'")
        if self.step_rule == "fixed" and self.step is None:
            raise ConfigError("step", "a fixed step rule needs a step size")
        if self.eps <= 0:
            raise ConfigError("eps", "must be positive")
        if self.max_outer < 1:
            raise ConfigError("max_outer", "must be positive")
        if self.spline_term not in ("polarization", "frozen"):
            raise ConfigError("spline_term", "must be 'polarization' or 'frozen'")
        if self.geometry not in ("entropic", "euclidean"):
            raise ConfigError("geometry", "must be 'entropic' or 'euclidean'")
        if self.eps_ladder is not None:
            self.eps_ladder = tuple(float(e) for e in self.eps_ladder)
            if any(e <= 0 for e in self.eps_ladder):
                raise ConfigError("eps_ladder", "entries must be positive")

    def ladder(self):
        if self.eps_ladder is not None:
            return list(self.eps_ladder)
        return [self.eps * 2.0**j for j in range(4, 0, -1)] + [self.eps]

    def n_threads(self):
        if self.threads is not None:
            return max(1, int(self.threads))
        return max(1, int(os.environ.get("WSPLINE_THREADS", "1")))

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizerTrace:
    """Append-only record of accepted iterations.

    ``stage`` indexes the regularization ladder; the objective is
    non-increasing within a stage (between barycenter refreshes for the
    frozen scheme, which start new surrogates and are marked in
    ``refresh``).
    """

    objective: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    stage: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    refresh: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    final_objective: float | None = None

    def append(self, obj, steps, stage, eps, refresh, backtracks, t):
        self.objective.append(float(obj))
        self.steps.append([float(s) for s in steps])
        self.stage.append(int(stage))
        self.eps.append(float(eps))
        self.refresh.append(bool(refresh))
        self.backtracks.append(int(backtracks))
        self.wall_time.append(float(t))

    def __len__(self):
        return len(self.objective)

    def rows(self):
        for i in range(len(self)):
            yield {
                "iter": i,
                "stage": self.stage[i],
                "eps": self.eps[i],
                "objective": self.objective[i],
                "refresh": int(self.refresh[i]),
                "backtracks": self.backtracks[i],
                "min_step": min(self.steps[i]) if self.steps[i] else 0.0,
                "max_step": max(self.steps[i]) if self.steps[i] else 0.0,
                "wall_time": self.wall_time[i],
            }

    def is_monotone(self, rtol=0.0):
        """Objective non-increasing inside every stage/refresh segment."""
        for i in range(1, len(self)):
            if self.stage[i] != self.stage[i - 1] or self.refresh[i]:
                continue
            if self.objective[i] > self.objective[i - 1] + rtol * abs(self.objective[i - 1]):
                return False
        return True


# --------------------------------------------------------------------------
# Simplex projection


def simplex_project(weights):
    """Euclidean projection onto the probability simplex (sort-based).

    Works on the flattened input and returns the original shape.
    """
    w = np.asarray(weights, dtype=float)
    v = w.ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0).reshape(w.shape)


# --------------------------------------------------------------------------
# Grid mode


def _pair_weights(K, bc, delta, spline_term):
    """Weights of the divergence terms as ``{(i, j): w}`` plus frozen terms.

    Frame ``K`` is identified with frame ``0`` under periodic conditions.
    """
    n = K if bc == "periodic" else K + 1
    wrap = (lambda k: k % K) if bc == "periodic" else (lambda k: k)
    pairs = {}
    frozen = []

    def add(i, j, w):
        i, j = wrap(i), wrap(j)
        if i == j:
            return
        key = (min(i, j), max(i, j))
        pairs[key] = pairs.get(key, 0.0) + w

    triples = range(1, K + 1) if bc == "periodic" else range(1, K)
    for k in triples:
        if spline_term == "polarization":
            add(k - 1, k, 2.0 * K**3)
            add(k, k + 1, 2.0 * K**3)
            add(k - 1, k + 1, -1.0 * K**3)
        else:
            frozen.append((wrap(k - 1), wrap(k), wrap(k + 1)))
    if delta > 0:
        for k in range(K):
            add(k, k + 1, delta * K)
    return n, pairs, frozen


class _GridObjective:
    """Evaluates the pair objective and its gradient with warm starts."""

    def __init__(self, grid, K, n, pairs, frozen, pinned, config):
        self.grid = grid
        self.K = K
        self.n = n
        self.pairs = pairs
        self.frozen = frozen
        self.pinned = pinned
        self.cfg = config
        self.eps = None
        self.cross = {}
        self.selfpot = {}
        self.rho = {}
        self.rho_init = {}
        self.rho_self = {}
        self.pool = ThreadPoolExecutor(config.n_threads()) if config.n_threads() > 1 else None

    def set_eps(self, eps):
        self.eps = eps

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def refresh_barycenters(self, frames):
        def solve(triple):
            a, k, c = triple
            init = self.rho_init.get(k)
            bar = entropic_barycenter(
                frames[a], frames[c], 0.5, self.eps, self.cfg.sinkhorn_tol, self.cfg.sinkhorn_max_iter,
                self.cfg.debias, init=init,
            )
            return k, bar

        for k, bar in self._map(solve, self.frozen):
            self.rho[k] = bar.result
            self.rho_init[k] = bar.potentials
            self.rho_self.pop(k, None)

    def evaluate(self, frames):
        """Objective, per-frame gradients, and the potentials to :meth:`commit`."""
        cfg = self.cfg
        eps = self.eps
        need_self = sorted({i for key in self.pairs for i in key} | {k for _, k, _ in self.frozen})

        def self_solve(i):
            init = self.selfpot.get(i)
            f, c = self_potential(frames[i], eps, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter,
                                  init=None if init is None else init[0])
            return i, (f, c)

        def pair_solve(key):
            i, j = key
            prev = self.cross.get(key)
            st = sinkhorn_potentials(
                frames[i], frames[j], eps, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter,
                init=prev, eps_scaling=prev is None,
            )
            return key, st

        def rho_solve(k):
            prev = self.cross.get(("rho", k))
            st = sinkhorn_potentials(
                frames[k], self.rho[k], eps, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter,
                init=prev, eps_scaling=prev is None,
            )
            init = self.rho_self.get(k)
            f, c = self_potential(self.rho[k], eps, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter,
                                  init=None if init is None else init[0])
            return k, st, (f, c)

        selfs = dict(self._map(self_solve, need_self))
        crosses = dict(self._map(pair_solve, list(self.pairs)))
        rhos = {k: (st, sf) for k, st, sf in self._map(rho_solve, [k for _, k, _ in self.frozen])}

        total = 0.0
        grads = {i: np.zeros(self.grid.shape) for i in range(self.n) if i not in self.pinned}
        debias = cfg.debias
        for (i, j), w in self.pairs.items():
            st = crosses[(i, j)]
            fi, ci = selfs[i]
            fj, cj = selfs[j]
            val = st.raw_cost - (0.5 * (ci + cj) if debias else 0.0)
            total += w * val
            if i in grads:
                grads[i] += w * (st.f - fi if debias else st.f)
            if j in grads:
                grads[j] += w * (st.g - fj if debias else st.g)
        wf = 4.0 * self.K**3
        for _, k, _ in self.frozen:
            st, (fr, cr) = rhos[k]
            fk, ck = selfs[k]
            val = st.raw_cost - (0.5 * (ck + cr) if debias else 0.0)
            total += wf * val
            if k in grads:
                grads[k] += wf * (st.f - fk if debias else st.f)
        return total, grads, (selfs, crosses, rhos)

    def commit(self, payload):
        selfs, crosses, rhos = payload
        self.selfpot.update(selfs)
        self.cross.update(crosses)
        for k, (st, sf) in rhos.items():
            self.cross[("rho", k)] = st
            self.rho_self[k] = sf

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _initial_frames(problem: SplineProblem, eps, config):
    """Piecewise entropic displacement interpolation between keyframes."""
    K = problem.K
    pins = problem.pins()
    frames = [None] * (K + 1)
    for k, mu in pins.items():
        frames[k] = mu
    known = sorted(pins)
    for k in range(K + 1):
        if frames[k] is not None:
            continue
        left = [i for i in known if i < k]
        right = [i for i in known if i > k]
        if not left:
            frames[k] = pins[right[0]].with_weights(pins[right[0]].weights.copy())
        elif not right:
            frames[k] = pins[left[-1]].with_weights(pins[left[-1]].weights.copy())
        else:
            a, b = left[-1], right[0]
            t = (k - a) / (b - a)
            bar = entropic_barycenter(pins[a], pins[b], t, eps, config.sinkhorn_tol,
                                      config.sinkhorn_max_iter, config.debias)
            frames[k] = bar.result
    return frames


def solve_grid_spline(problem: SplineProblem, config: OptimizerConfig | None = None, init=None):
    """Minimize the entropic spline objective over the free grid frames.

    Returns
    -------
    (SplineSolution, OptimizerTrace)
        The solution carries the objective recomputed with fresh entropic
        barycenters at the final ``eps``.

    Raises
    ------
    NoProgress
        If not a single step could be accepted.
    """
    cfg = config or OptimizerConfig()
    if not all(isinstance(m, DiscreteMeasure) for m in problem.keyframes):
        raise TypeError("grid mode needs DiscreteMeasure keyframes")
    K = problem.K
    grid = problem.keyframes[0].grid
    ladder = cfg.ladder()
    n, pairs, frozen = _pair_weights(K, problem.bc, problem.delta, cfg.spline_term)
    pins = problem.pins()
    pinned = {k % n if problem.bc == "periodic" else k for k in pins}
    frames = list(init) if init is not None else _initial_frames(problem, ladder[0], cfg)
    frames = frames[:n]
    free = [k for k in range(n) if k not in pinned]

    # per-frame scale: sum of absolute term weights touching the frame
    scale = {k: 0.0 for k in free}
    for (i, j), w in pairs.items():
        for k in (i, j):
            if k in scale:
                scale[k] += abs(w)
    for _, k, _ in frozen:
        if k in scale:
            scale[k] += 4.0 * K**3
    for k in free:
        scale[k] = max(scale[k], 1e-300)

    obj = _GridObjective(grid, K, n, pairs, frozen, pinned, cfg)
    trace = OptimizerTrace()
    t0 = time.perf_counter()
    any_accepted = False
    W = {k: np.array(frames[k].weights) for k in free}
    W_prev = {k: W[k].copy() for k in free}
    try:
        for stage, eps in enumerate(ladder):
            obj.set_eps(eps)
            if frozen:
                obj.refresh_barycenters(frames)
            J, G, payload = obj.evaluate(frames)
            obj.commit(payload)
            trace.append(J, [], stage, eps, bool(frozen), 0, time.perf_counter() - t0)
            tau = cfg.step if cfg.step is not None else _initial_step(G, scale, cfg.geometry, W)
            since_refresh = 0
            for it in range(cfg.max_outer):
                if frozen and since_refresh >= cfg.refresh_every:
                    obj.refresh_barycenters(frames)
                    J, G, payload = obj.evaluate(frames)
                    obj.commit(payload)
                    trace.append(J, [], stage, eps, True, 0, time.perf_counter() - t0)
                    since_refresh = 0
                accepted = False
                beta = cfg.beta
                n_back = 0
                while n_back <= cfg.max_backtracks:
                    W_new = {
                        k: _step(W[k], W_prev[k], G[k], tau / scale[k], beta, cfg.geometry) for k in free
                    }
                    cand = list(frames)
                    for k in free:
                        cand[k] = frames[k].with_weights(W_new[k])
                    J_new, G_new, payload = obj.evaluate(cand)
                    if J_new <= J:
                        accepted = True
                        break
                    n_back += 1
                    if cfg.step_rule == "fixed" and beta == 0:
                        break
                    if beta > 0:
                        beta = 0.0
                    else:
                        tau *= 0.5
                if not accepted:
                    break
                any_accepted = True
                obj.commit(payload)
                rel = (J - J_new) / max(abs(J), 1e-300)
                W_prev, W = W, {k: np.array(cand[k].weights) for k in free}
                frames = cand
                J, G = J_new, G_new
                since_refresh += 1
                trace.append(J, [tau / scale[k] for k in free], stage, eps, False, n_back,
                             time.perf_counter() - t0)
                if cfg.step_rule == "backtracking" and n_back == 0:
                    tau *= 1.25
                if rel < cfg.stop_tol:
                    break
            # momentum does not carry across regularization levels
            W_prev = {k: W[k].copy() for k in free}
    except WSplineError as exc:
        exc.trace = trace
        raise
    finally:
        obj.close()
    if not any_accepted and free:
        raise NoProgress("no step was accepted; backtracking floor reached", trace)
    if problem.bc == "periodic":
        frames = frames + [frames[0]]
    backend = SinkhornBackend(eps=ladder[-1], tol=cfg.sinkhorn_tol, max_iter=cfg.sinkhorn_max_iter,
                              debias=cfg.debias)
    solution = full_objective(problem, frames, backend)
    trace.final_objective = solution.total
    return solution, trace


def _initial_step(G, scale, geometry, W):
    """Step with a largest per-frame move of order one (relative)."""
    worst = 0.0
    for k, g in G.items():
        gc = g - np.sum(W[k] * g) if geometry == "entropic" else g - g.mean()
        mag = np.abs(gc).max() / scale[k]
        if geometry == "euclidean":
            mag = mag / max(W[k].max(), 1e-300)
        worst = max(worst, mag)
    return 1.0 / worst if worst > 0 else 1.0


def _step(w, w_prev, g, tau, beta, geometry):
    if geometry == "entropic":
        lw = np.log(np.maximum(w, 1e-300))
        lp = np.log(np.maximum(w_prev, 1e-300))
        z = lw - tau * g + beta * (lw - lp)
        z -= z.max()
        out = np.exp(z)
        return out / out.sum()
    return simplex_project(w - tau * g + beta * (w - w_prev))


def displacement_interpolation(mu0, mu1, K, eps, tol=1e-7, max_iter=10_000):
    """Entropic barycenters ``Bar^{k/K}(mu0, mu1)`` for ``k = 0..K``."""
    out = [mu0]
    for k in range(1, K):
        out.append(entropic_barycenter_multi([mu0, mu1], [1 - k / K, k / K], eps, tol, max_iter).result)
    out.append(mu1)
    return out


# --------------------------------------------------------------------------
# Point-cloud mode


def _cloud_init(problem: SplineProblem):
    K = problem.K
    pins = problem.pins()
    known = sorted(pins)
    frames = [None] * (K + 1)
    for k in known:
        frames[k] = pins[k].points.copy()
    for k in range(K + 1):
        if frames[k] is not None:
            continue
        left = [i for i in known if i < k]
        right = [i for i in known if i > k]
        if not left:
            frames[k] = pins[right[0]].points.copy()
        elif not right:
            frames[k] = pins[left[-1]].points.copy()
        else:
            a, b = left[-1], right[0]
            _, perm = assignment_w2(pins[a].points, pins[b].points)
            t = (k - a) / (b - a)
            frames[k] = (1 - t) * pins[a].points + t * pins[b].points[perm]
    return frames


def _cloud_terms(X, K, bc, delta):
    """Frozen-assignment quadratic terms.

    Each term is ``(coef, [(frame, index array, alpha), ...])`` standing for
    ``coef / M * sum_i |sum alpha X_frame[index[i]]|^2``.
    """
    M = len(X[0])
    ident = np.arange(M)
    terms = []
    wrap = (lambda k: k % K) if bc == "periodic" else (lambda k: k)
    triples = range(1, K + 1) if bc == "periodic" else range(1, K)
    for k in triples:
        a, b, c = wrap(k - 1), wrap(k), wrap(k + 1)
        _, s_ac = assignment_w2(X[a], X[c])
        bar = 0.5 * (X[a] + X[c][s_ac])
        _, s_b = assignment_w2(X[b], bar)
        terms.append((4.0 * K**3, [(b, ident, 1.0), (a, s_b, -0.5), (c, s_ac[s_b], -0.5)]))
    if delta > 0:
        for k in range(K):
            a, b = wrap(k), wrap(k + 1)
            _, s = assignment_w2(X[a], X[b])
            terms.append((delta * K, [(a, ident, 1.0), (b, s, -1.0)]))
    return terms


def _solve_quadratic(X, terms, free, n):
    """Exact minimizer of the frozen quadratic in the free frames."""
    M, d = X[0].shape
    col = {k: i for i, k in enumerate(free)}
    rows, cols, vals = [], [], []
    rhs = []
    r = 0
    for coef, parts in terms:
        s = np.sqrt(coef / M)
        const = np.zeros((M, d))
        for frame, idx, alpha in parts:
            if frame in col:
                rows.append(r + np.arange(M))
                cols.append(col[frame] * M + idx)
                vals.append(np.full(M, s * alpha))
            else:
                const += s * alpha * X[frame][idx]
        rhs.append(-const)
        r += M
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(r, len(free) * M))
    b = np.vstack(rhs)
    H = (A.T @ A).tocsc()
    try:
        sol = spsolve(H, A.T @ b)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    sol = np.asarray(sol).reshape(len(free) * M, d)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("point-cloud system is singular; pin more frames or use delta > 0")
    out = list(X)
    for k in free:
        out[k] = sol[col[k] * M:(col[k] + 1) * M]
    return out


def solve_pointcloud_spline(problem: SplineProblem, config: OptimizerConfig | None = None):
    """Minimize the spline objective over atom locations of free clouds.

    Returns
    -------
    (SplineSolution, OptimizerTrace)
    """
    cfg = config or OptimizerConfig()
    if not all(isinstance(m, PointCloud) for m in problem.keyframes):
        raise TypeError("point-cloud mode needs PointCloud keyframes")
    sizes = {len(m) for m in problem.keyframes}
    if len(sizes) != 1:
        raise ValueError("all keyframe clouds must have the same number of points")
    K = problem.K
    bc = problem.bc
    n = K if bc == "periodic" else K + 1
    pins = problem.pins()
    pinned = {k % n if bc == "periodic" else k for k in pins}
    free = [k for k in range(n) if k not in pinned]
    X = _cloud_init(problem)[:n]
    backend = ExactSmallBackend()

    def clouds(Y):
        out = [pins.get(k) if k in pinned else PointCloud(Y[k]) for k in range(n)]
        if bc == "periodic":
            out.append(out[0])
        return out

    def true_objective(Y):
        return full_objective(problem, clouds(Y), backend)

    trace = OptimizerTrace()
    t0 = time.perf_counter()
    sol = true_objective(X)
    trace.append(sol.total, [], 0, 0.0, True, 0, time.perf_counter() - t0)
    if not free:
        trace.final_objective = sol.total
        return sol, trace
    for _ in range(cfg.max_outer):
        terms = _cloud_terms(X, K, bc, problem.delta)
        Y = _solve_quadratic(X, terms, free, n)
        cand = true_objective(Y)
        if cand.total > sol.total:
            break
        rel = (sol.total - cand.total) / max(abs(sol.total), 1e-300)
        X, sol = Y, cand
        # steps are accepted on the true objective, so the whole trace is one segment
        trace.append(sol.total, [1.0] * len(free), 0, 0.0, False, 0, time.perf_counter() - t0)
        if rel <= cfg.stop_tol:
            break
    trace.final_objective = sol.total
    return sol, trace
