"""Discrete path and spline energies of measure tuples.

A tuple ``mu_0..mu_K`` sampled at ``t_k = k / K`` has

* path energy ``E = K sum_{k<K} W2(mu_k, mu_{k+1})``,
* spline energy ``F = 4 K^3 sum_{0<k<K} W2(mu_k, Bar(mu_{k-1}, mu_{k+1}))``
  with ``Bar`` the midpoint of the geodesic between the neighbours,
* generalized spline energy ``F_G``, which replaces ``Bar`` by the
  midpoint taken through the optimal maps out of ``mu_k``,
* and the regularized objective ``F + delta * E``.

Distances and barycenters come from a backend, so the same code runs on
exact small atomic measures, measures on the line, Gaussians and grid
measures (entropic).  Periodic tuples identify ``mu_K`` with ``mu_0`` and
add the wraparound spline term at ``k = K``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import gaussian as gs
from .curves import BOUNDARY_CONDITIONS
from .errors import BackendMismatch, ConstraintViolated
from .measures import Atoms, DiscreteMeasure, Gaussian, PointCloud
from .ot_exact import assignment_w2, monotone_plan_1d, wasserstein2_1d, wasserstein2_exact_small
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, entropic_barycenter, sinkhorn_distance

# --------------------------------------------------------------------------
# Backends


class Backend:
    """Squared distances and (generalized) barycenters for one measure kind."""

    name = "abstract"
    kinds: tuple = ()
    has_generalized = False

    def check(self, mu):
        if not isinstance(mu, self.kinds):
            raise BackendMismatch(f"backend {self.name!r} cannot handle {type(mu).__name__}")

    def distance2(self, mu, nu):
        raise NotImplementedError

    def barycenter(self, mu, nu, t=0.5):
        raise NotImplementedError

    def gen_barycenter(self, base, mu, nu, t=0.5):
        raise BackendMismatch(f"backend {self.name!r} has no generalized barycenter")


class GaussianBackend(Backend):
    name = "gaussian"
    kinds = (Gaussian,)
    has_generalized = True

    def distance2(self, mu, nu):
        return gs.bures_distance2(mu, nu)

    def barycenter(self, mu, nu, t=0.5):
        return gs.gaussian_barycenter(mu, nu, t)

    def gen_barycenter(self, base, mu, nu, t=0.5):
        return gs.gaussian_gen_barycenter(base, mu, nu, t)


class LineBackend(Backend):
    """Atomic measures on the line; monotone rearrangement is optimal."""

    name = "1d"
    kinds = (Atoms, PointCloud)
    has_generalized = True

    def check(self, mu):
        super().check(mu)
        if mu.dim != 1:
            raise BackendMismatch("the 1d backend needs measures on the line")

    def distance2(self, mu, nu):
        return wasserstein2_1d(_atoms(mu), _atoms(nu))

    def barycenter(self, mu, nu, t=0.5):
        x, _, y, _, segs = monotone_plan_1d(_atoms(mu), _atoms(nu))
        pts = np.array([(1 - t) * x[i] + t * y[j] for i, j, _ in segs])
        return Atoms(pts, np.array([m for _, _, m in segs]))

    def gen_barycenter(self, base, mu, nu, t=0.5):
        # on the line every optimal multi-coupling is comonotone, so the
        # base point does not change the result
        return self.barycenter(mu, nu, t)


class ExactSmallBackend(Backend):
    """Exact linear programming (or assignment for equal uniform clouds)."""

    name = "exact-small"
    kinds = (Atoms, PointCloud)

    def distance2(self, mu, nu):
        if isinstance(mu, PointCloud) and isinstance(nu, PointCloud) and len(mu) == len(nu):
            return assignment_w2(mu.points, nu.points)[0]
        return wasserstein2_exact_small(_atoms(mu), _atoms(nu))[0]

    def barycenter(self, mu, nu, t=0.5):
        if isinstance(mu, PointCloud) and isinstance(nu, PointCloud) and len(mu) == len(nu):
            _, perm = assignment_w2(mu.points, nu.points)
            return PointCloud((1 - t) * mu.points + t * nu.points[perm])
        _, cp = wasserstein2_exact_small(_atoms(mu), _atoms(nu))
        idx = np.argwhere(cp.plan > 0)
        pts = (1 - t) * cp.source[idx[:, 0]] + t * cp.target[idx[:, 1]]
        return Atoms(pts, cp.plan[idx[:, 0], idx[:, 1]])


@dataclass
class SinkhornBackend(Backend):
    """Debiased entropic distances and fixed-support barycenters on a grid."""

    eps: float = 1e-3
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    debias: bool = True

    name = "sinkhorn"
    kinds = (DiscreteMeasure,)

    def distance2(self, mu, nu):
        return sinkhorn_distance(mu, nu, self.eps, self.tol, self.max_iter, self.debias)[0]

    def barycenter(self, mu, nu, t=0.5):
        return entropic_barycenter(mu, nu, t, self.eps, self.tol, self.max_iter, self.debias).result


def _atoms(mu):
    return mu.as_atoms() if isinstance(mu, PointCloud) else mu


def get_backend(name=None, sample=None, **kwargs):
    """Backend by name, or inferred from a sample measure."""
    if isinstance(name, Backend):
        return name
    if name is None:
        if isinstance(sample, Gaussian):
            name = "gaussian"
        elif isinstance(sample, DiscreteMeasure):
            name = "sinkhorn"
        elif isinstance(sample, (Atoms, PointCloud)):
            name = "1d" if sample.dim == 1 else "exact-small"
        else:
            raise BackendMismatch(f"no backend for {type(sample).__name__}")
    table = {
        "gaussian": GaussianBackend,
        "1d": LineBackend,
        "exact-small": ExactSmallBackend,
        "sinkhorn": SinkhornBackend,
    }
    if name not in table:
        raise BackendMismatch(f"unknown backend {name!r}")
    return table[name](**kwargs)


# --------------------------------------------------------------------------
# Energies


@dataclass
class EnergyTerms:
    """Scaled total of a discrete energy and its unscaled per-step terms."""

    total: float
    terms: np.ndarray
    scale: float
    backend: str

    def __float__(self):
        return float(self.total)


def _prepare(measures, backend, bc):
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}")
    measures = list(measures)
    if len(measures) < 2:
        raise ValueError("need at least two measures")
    backend = get_backend(backend, measures[0])
    for mu in measures:
        backend.check(mu)
    return measures, len(measures) - 1, backend


def _spline_triples(K, bc):
    """``(k-1, k, k+1)`` index triples of the spline terms."""
    if bc == "periodic":
        return [((k - 1) % K, k % K, (k + 1) % K) for k in range(1, K + 1)]
    return [(k - 1, k, k + 1) for k in range(1, K)]


def path_terms(measures, backend):
    return np.array([backend.distance2(measures[k], measures[k + 1]) for k in range(len(measures) - 1)])


def spline_terms(measures, backend, bc="natural", kind="barycenter"):
    K = len(measures) - 1
    out = []
    for a, b, c in _spline_triples(K, bc):
        if kind == "barycenter":
            out.append(backend.distance2(measures[b], backend.barycenter(measures[a], measures[c], 0.5)))
        elif kind == "generalized":
            bar = backend.gen_barycenter(measures[b], measures[a], measures[c], 0.5)
            out.append(backend.distance2(measures[b], bar))
        elif kind == "polarization":
            out.append(
                0.5 * backend.distance2(measures[a], measures[b])
                + 0.5 * backend.distance2(measures[b], measures[c])
                - 0.25 * backend.distance2(measures[a], measures[c])
            )
        else:
            raise ValueError(f"unknown spline term kind {kind!r}")
    return np.array(out)


def discrete_path_energy(measures, backend=None, bc="natural"):
    """``K sum_k W2(mu_k, mu_{k+1})`` over a tuple of ``K + 1`` measures."""
    measures, K, backend = _prepare(measures, backend, bc)
    terms = path_terms(measures, backend)
    return EnergyTerms(float(K * terms.sum()), terms, float(K), backend.name)


def discrete_spline_energy(measures, backend=None, bc="natural"):
    """``4 K^3 sum_k W2(mu_k, Bar(mu_{k-1}, mu_{k+1}))``."""
    measures, K, backend = _prepare(measures, backend, bc)
    terms = spline_terms(measures, backend, bc, "barycenter")
    return EnergyTerms(float(4 * K**3 * terms.sum()), terms, float(4 * K**3), backend.name)


def discrete_gen_spline_energy(measures, backend=None, bc="natural"):
    """Spline energy with barycenters taken through maps out of ``mu_k``."""
    measures, K, backend = _prepare(measures, backend, bc)
    if not backend.has_generalized:
        raise BackendMismatch(f"backend {backend.name!r} has no generalized barycenter")
    terms = spline_terms(measures, backend, bc, "generalized")
    return EnergyTerms(float(4 * K**3 * terms.sum()), terms, float(4 * K**3), backend.name)


def polarization_spline_energy(measures, backend=None, bc="natural"):
    """Spline energy with each term replaced by its distance-only surrogate."""
    measures, K, backend = _prepare(measures, backend, bc)
    terms = spline_terms(measures, backend, bc, "polarization")
    return EnergyTerms(float(4 * K**3 * terms.sum()), terms, float(4 * K**3), backend.name)


# --------------------------------------------------------------------------
# Problems and solutions


def same_measure(a, b):
    """Bitwise equality of two measures of the same kind."""
    if type(a) is not type(b):
        return False
    if isinstance(a, DiscreteMeasure):
        return a.grid == b.grid and np.array_equal(a.weights, b.weights)
    if isinstance(a, Gaussian):
        return np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    if isinstance(a, Atoms):
        return np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)
    if isinstance(a, PointCloud):
        return np.array_equal(a.points, b.points)
    return a is b


@dataclass
class SplineProblem:
    """Keyframe interpolation problem on ``K + 1`` uniform time steps.

    Parameters
    ----------
    K : int
    times : sequence of float
        Strictly increasing keyframe times with ``K * t`` integral.
    keyframes : sequence of measures
    delta : float
        Weight of the path energy.
    eps : float, optional
        Entropic regularization for grid measures.
    bc : {"natural", "hermite", "periodic"}
    end_frames : dict, optional
        Hermite conditions: the measures pinned at indices ``1`` and
        ``K - 1`` (they encode the end velocities).
    """

    K: int
    times: tuple
    keyframes: tuple
    delta: float = 0.0
    eps: float | None = None
    bc: str = "natural"
    end_frames: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = tuple(float(t) for t in self.times)
        self.keyframes = tuple(self.keyframes)
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def violations(self):
        """Human-readable list of everything that makes the problem invalid."""
        out = []
        K = self.K
        if int(K) != K or K < 2:
            out.append(f"K must be an integer >= 2 (got {K})")
            return out
        if self.bc not in BOUNDARY_CONDITIONS:
            out.append(f"unknown boundary condition {self.bc!r}")
        if len(self.times) != len(self.keyframes):
            out.append("times and keyframes differ in length")
        if len(self.times) < 2:
            out.append("need at least two keyframes")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            out.append("keyframe times must be strictly increasing")
        for t in self.times:
            if not 0.0 <= t <= 1.0:
                out.append(f"time {t:g} outside [0, 1]")
            elif abs(K * t - round(K * t)) > 1e-9:
                out.append(f"K*t not integral for t={t:g} (K={K})")
        if self.delta < 0:
            out.append("delta must be nonnegative")
        if self.eps is not None and self.eps <= 0:
            out.append("eps must be positive")
        if self.bc == "hermite":
            if not self.times or self.times[0] != 0.0 or self.times[-1] != 1.0:
                out.append("hermite conditions need keyframes at t=0 and t=1")
            missing = [k for k in (1, K - 1) if k not in self.end_frames]
            if missing:
                out.append(f"hermite conditions need frames pinned at indices {missing}")
        if self.bc == "periodic" and self.times and self.times[-1] == 1.0 and self.times[0] == 0.0:
            if not same_measure(self.keyframes[0], self.keyframes[-1]):
                out.append("periodic keyframes at t=0 and t=1 must coincide")
        kinds = {type(m) for m in self.keyframes} | {type(m) for m in self.end_frames.values()}
        if len(kinds) > 1:
            out.append("keyframes mix measure kinds")
        return out

    @property
    def indices(self):
        return [int(round(t * self.K)) for t in self.times]

    def pins(self):
        """Pinned time indices mapped to their measures."""
        out = dict(zip(self.indices, self.keyframes))
        out.update({int(k): v for k, v in self.end_frames.items()})
        if self.bc == "periodic":
            if 0 in out:
                out.setdefault(self.K, out[0])
            if self.K in out:
                out.setdefault(0, out[self.K])
        return out

    def free_indices(self):
        pins = self.pins()
        return [k for k in range(self.K + 1) if k not in pins]


@dataclass
class SplineSolution:
    """A measure tuple with its energy decomposition.

    ``total = 4 K^3 sum(spline_terms) + delta K sum(path_terms)``.
    """

    measures: list
    spline_terms: np.ndarray
    path_terms: np.ndarray
    K: int
    delta: float
    backend: str
    eps: float | None = None
    spline_kind: str = "barycenter"

    @property
    def spline_energy(self):
        return float(4 * self.K**3 * np.sum(self.spline_terms))

    @property
    def path_energy(self):
        return float(self.K * np.sum(self.path_terms))

    @property
    def total(self):
        return self.spline_energy + self.delta * self.path_energy

    def to_dict(self):
        return {
            "total": self.total,
            "spline_energy": self.spline_energy,
            "path_energy": self.path_energy,
            "spline_terms": [float(v) for v in self.spline_terms],
            "path_terms": [float(v) for v in self.path_terms],
            "backend": self.backend,
            "spline_kind": self.spline_kind,
            "K": self.K,
            "delta": self.delta,
            "eps": self.eps,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def check_constraints(problem: SplineProblem, measures):
    if len(measures) != problem.K + 1:
        raise ValueError(f"expected {problem.K + 1} measures, got {len(measures)}")
    for k, mu in problem.pins().items():
        if not same_measure(measures[k], mu):
            raise ConstraintViolated(k)
    if problem.bc == "periodic" and not same_measure(measures[0], measures[problem.K]):
        raise ConstraintViolated(problem.K, "periodic tuple must repeat its first frame")


def full_objective(problem: SplineProblem, measures, backend=None, spline_kind="barycenter"):
    """Evaluate the regularized spline objective with its breakdown.

    Raises
    ------
    ConstraintViolated
        If a pinned index does not hold its keyframe.
    """
    measures = list(measures)
    check_constraints(problem, measures)
    if backend is None and isinstance(measures[0], DiscreteMeasure):
        backend = SinkhornBackend(eps=problem.eps if problem.eps is not None else 1e-3)
    measures, K, backend = _prepare(measures, backend, problem.bc)
    s = spline_terms(measures, backend, problem.bc, spline_kind)
    p = path_terms(measures, backend)
    return SplineSolution(measures, s, p, K, problem.delta, backend.name, problem.eps, spline_kind)
