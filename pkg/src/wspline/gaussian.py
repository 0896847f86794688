"""Closed-form optimal transport between Gaussians.

A Gaussian is parameterized by its mean ``m`` and the symmetric positive
definite square root ``sigma`` of its covariance.  For commuting (e.g.
diagonal) standard deviations the Wasserstein geometry is flat in
``(m, sigma)``, which turns Gaussian splines into Euclidean splines of the
means and of the eigenvalues of ``sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import PPoly
from scipy.optimize import lsq_linear

from .curves import (
    PiecewiseCubic,
    cubic_spline_interpolate,
    discrete_euclidean_spline,
    first_difference_matrix,
    second_difference_matrix,
)
from .errors import InfeasibleConstraint, NotSPD
from .measures import Gaussian

LAMBDA_MIN = 1e-4


# --------------------------------------------------------------------------
# Matrix square roots


def sqrt2x2_spd(sigma):
    """Square root of a 2x2 SPD matrix, ``(S + sqrt(det S) I) / sqrt(tr S + 2 sqrt(det S))``."""
    s = np.asarray(sigma, dtype=float)
    if s.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    tr = s[0, 0] + s[1, 1]
    if det <= 0 or tr <= 0:
        raise NotSPD(f"matrix is not positive definite (det={det:g}, tr={tr:g})")
    rd = np.sqrt(det)
    return (s + rd * np.eye(2)) / np.sqrt(tr + 2 * rd)


def sqrtm_spd(s):
    """Principal square root of an SPD matrix.

    Uses the explicit formula for 2x2, the entrywise root for diagonal
    input, and an eigendecomposition otherwise.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    d = s.shape[0]
    if d == 1:
        if s[0, 0] <= 0:
            raise NotSPD("nonpositive variance")
        return np.sqrt(s)
    if np.count_nonzero(s - np.diag(np.diag(s))) == 0:
        if np.any(np.diag(s) <= 0):
            raise NotSPD("nonpositive diagonal entry")
        return np.diag(np.sqrt(np.diag(s)))
    if d == 2:
        return sqrt2x2_spd(0.5 * (s + s.T))
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    if vals.min() <= 0:
        raise NotSPD("matrix is not positive definite")
    return (vecs * np.sqrt(vals)) @ vecs.T


def _sym(a):
    return 0.5 * (a + a.T)


# --------------------------------------------------------------------------
# Distances, maps, barycenters


def bures_distance2(g1: Gaussian, g2: Gaussian):
    """Squared Wasserstein distance between two Gaussians."""
    if g1.dim != g2.dim:
        raise ValueError("dimension mismatch")
    s1, s2 = g1.std, g2.std
    cross = sqrtm_spd(_sym(s1 @ s2 @ s2 @ s1))
    dm = g1.mean - g2.mean
    val = float(dm @ dm + np.trace(s1 @ s1 + s2 @ s2 - 2 * cross))
    return max(val, 0.0)


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> A x + b``."""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.b

    def push(self, g: Gaussian):
        """Image of a Gaussian under the map (``A`` symmetric positive definite)."""
        cov = _sym(self.A @ g.cov @ self.A.T)
        return Gaussian(self.A @ g.mean + self.b, sqrtm_spd(cov))


def gaussian_monge_map(g1: Gaussian, g2: Gaussian):
    """Optimal affine map pushing ``g1`` to ``g2``."""
    inv = np.linalg.inv(g1.std)
    A = _sym(inv @ sqrtm_spd(_sym(g1.std @ g2.cov @ g1.std)) @ inv)
    return AffineMap(A, g2.mean - A @ g1.mean)


def _std_from_factor(M):
    return sqrtm_spd(_sym(M @ M.T))


def gaussian_barycenter(g1: Gaussian, g2: Gaussian, t):
    """Point at time ``t`` on the geodesic from ``g1`` to ``g2``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        return g1
    if t == 1.0:
        return g2
    A = gaussian_monge_map(g1, g2).A
    d = g1.dim
    M = ((1 - t) * np.eye(d) + t * A) @ g1.std
    return Gaussian((1 - t) * g1.mean + t * g2.mean, _std_from_factor(M))


def gaussian_gen_barycenter(base: Gaussian, g1: Gaussian, g3: Gaussian, t):
    """Barycenter of ``g1``, ``g3`` through the optimal maps from ``base``.

    Averages the two maps out of ``base`` and pushes ``base`` forward.  For
    commuting standard deviations it equals :func:`gaussian_barycenter`.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    A1 = gaussian_monge_map(base, g1).A
    A3 = gaussian_monge_map(base, g3).A
    M = ((1 - t) * A1 + t * A3) @ base.std
    return Gaussian((1 - t) * g1.mean + t * g3.mean, _std_from_factor(M))


def polarization_term(g_prev, g_mid, g_next):
    """``W2(a,b)/2 + W2(b,c)/2 - W2(a,c)/4``, the flat-space midpoint deviation."""
    return (
        0.5 * bures_distance2(g_prev, g_mid)
        + 0.5 * bures_distance2(g_mid, g_next)
        - 0.25 * bures_distance2(g_prev, g_next)
    )


# --------------------------------------------------------------------------
# Curves of Gaussians


@dataclass(frozen=True, eq=False)
class GaussianCurveSample:
    """Gaussians ``(m_k, sigma_k)`` at the uniform times ``t_k = k / K``."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.means, dtype=float)
        s = np.asarray(self.stds, dtype=float)
        if s.ndim == 2:
            s = np.stack([np.diag(r) for r in s])
        if m.ndim == 1:
            m = m[:, None]
        if s.shape[0] != m.shape[0] or s.shape[1:] != (m.shape[1], m.shape[1]):
            raise ValueError("means and stds disagree in shape")
        for k, sk in enumerate(s):
            if np.linalg.eigvalsh(_sym(sk)).min() <= 0:
                raise NotSPD(f"std at step {k} is not positive definite")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def K(self):
        return len(self.means) - 1

    @property
    def times(self):
        return np.arange(self.K + 1) / self.K

    def gaussians(self):
        return [Gaussian(m, s) for m, s in zip(self.means, self.stds)]

    @classmethod
    def from_gaussians(cls, gs):
        return cls(np.array([g.mean for g in gs]), np.array([g.std for g in gs]))

    @classmethod
    def from_curve(cls, mean_fn, std_fn, K):
        """Sample callables ``mean_fn(t)`` and ``std_fn(t)`` (matrix or diagonal)."""
        t = np.arange(K + 1) / K
        m = np.array([np.atleast_1d(mean_fn(tk)) for tk in t], dtype=float)
        s = []
        for tk in t:
            sk = np.asarray(std_fn(tk), dtype=float)
            s.append(np.diag(np.atleast_1d(sk)) if sk.ndim <= 1 else sk)
        return cls(m, np.array(s))


@dataclass(frozen=True, eq=False)
class DiagGaussianPath:
    """Diagonal Gaussian curve: cubic mean path and cubic std-eigenvalue paths."""

    mean: PiecewiseCubic
    eig: PiecewiseCubic
    basis: np.ndarray | None = None

    def std(self, t):
        lam = np.atleast_2d(self.eig(np.atleast_1d(t)))
        Q = self.basis if self.basis is not None else np.eye(lam.shape[1])
        return np.einsum("ij,kj,lj->kil", Q, lam, Q)

    def sample(self, K):
        t = np.arange(K + 1) / K
        return GaussianCurveSample(np.atleast_2d(self.mean(t)).reshape(K + 1, -1), self.std(t))

    def min_eigenvalue(self):
        """Exact minimum of the eigenvalue paths over ``[0, 1]``."""
        pp = self.eig.pp
        cands = [pp.x]
        d1 = pp.derivative()
        for j in range(pp.c.shape[2] if pp.c.ndim > 2 else 1):
            c = d1.c[:, :, j] if d1.c.ndim > 2 else d1.c
            cands.append(PPoly(c, d1.x).roots(extrapolate=False))
        t = np.concatenate(cands)
        return float(np.min(self.eig(t)))

    def spline_energy(self):
        return self.mean.acceleration_energy() + self.eig.acceleration_energy()

    def path_energy(self):
        return self.mean.velocity_energy() + self.eig.velocity_energy()


def diag_spline_energy(path):
    """``int |m''|^2 + |sigma''|_F^2`` of a diagonal Gaussian curve.

    Exact for :class:`DiagGaussianPath`; for a smooth curve given as
    :class:`SmoothDiagCurve` it uses adaptive quadrature.
    """
    return path.spline_energy()


@dataclass(frozen=True)
class SmoothDiagCurve:
    """Smooth diagonal Gaussian curve given by callables.

    ``mean(t, nu)`` and ``std(t, nu)`` return the ``nu``-th time derivative
    of the mean vector and of the diagonal of ``sigma``.
    """

    mean: object
    std: object

    def sample(self, K):
        return GaussianCurveSample.from_curve(lambda t: self.mean(t, 0), lambda t: self.std(t, 0), K)

    def _energy(self, nu):
        def integrand(t):
            return np.sum(np.asarray(self.mean(t, nu)) ** 2) + np.sum(np.asarray(self.std(t, nu)) ** 2)

        val, _ = quad_vec(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
        return float(val)

    def path_energy(self):
        return self._energy(1)

    def spline_energy(self):
        return self._energy(2)


# --------------------------------------------------------------------------
# Gaussian E-splines


@dataclass
class GaussianESpline:
    """Result of :func:`gaussian_espline`.

    ``regime`` is ``"spline"`` when the continuous cubic splines stayed
    above the positivity floor, ``"discrete"`` for an unconstrained
    discrete solve and ``"constrained"`` when the floor was active.
    """

    sample: GaussianCurveSample
    path: DiagGaussianPath | None
    regime: str
    active: np.ndarray | None = None


def common_basis(stds, tol=1e-10):
    """Orthonormal basis diagonalizing all given SPD matrices, or ``None``."""
    stds = [np.asarray(s, dtype=float) for s in stds]
    if all(np.count_nonzero(s - np.diag(np.diag(s))) == 0 for s in stds):
        return np.eye(stds[0].shape[0])
    # a generic combination has simple eigenvalues
    weights = 1.0 + 0.1 * np.sqrt(np.arange(1, len(stds) + 1))
    _, Q = np.linalg.eigh(sum(w * s for w, s in zip(weights, stds)))
    for s in stds:
        r = Q.T @ s @ Q
        if np.abs(r - np.diag(np.diag(r))).max() > tol * max(1.0, np.abs(s).max()):
            return None
    return Q


def _knot_indices(times, K):
    idx = []
    for t in times:
        k = round(t * K)
        if abs(k - t * K) > 1e-9:
            raise ValueError(f"K*t = {K * t:g} is not an integer")
        idx.append(int(k))
    return idx


def _box_spline(K, pins, lower, delta, bc):
    """Discrete Euclidean spline of a scalar sequence with ``x >= lower``.

    Solved as a bounded linear least-squares problem (exact active set).
    Returns ``(x, active mask)``.
    """
    n = K if bc == "periodic" else K + 1
    pins = {k % n if bc == "periodic" else k: float(v) for k, v in pins.items()}
    rows = [np.sqrt(4.0 * K**3) * second_difference_matrix(K, bc)]
    if delta > 0:
        rows.append(np.sqrt(delta * K) * first_difference_matrix(K, bc))
    A = np.vstack(rows)
    fixed = sorted(pins)
    free = [k for k in range(n) if k not in pins]
    x = np.zeros(n)
    x[fixed] = [pins[k] for k in fixed]
    res = lsq_linear(A[:, free], -A[:, fixed] @ x[fixed], bounds=(lower, np.inf), method="bvls",
                     tol=1e-14, lsmr_tol="auto")
    x[free] = res.x
    active = np.zeros(n, dtype=bool)
    active[free] = res.x <= lower * (1 + 1e-12)
    if bc == "periodic":
        x = np.append(x, x[0])
        active = np.append(active, active[0])
    return x, active


def gaussian_espline(keyframes, K, bc="natural", lam_min=LAMBDA_MIN, delta=0.0, discrete=False,
                     slopes=None):
    """Spline interpolation of diagonal (or commuting) Gaussian keyframes.

    Parameters
    ----------
    keyframes : sequence of ``(t, Gaussian)``
        Times must satisfy ``K * t`` integral.
    K : int
        Number of time steps of the returned sample.
    bc : {"natural", "hermite", "periodic"}
    lam_min : float
        Positivity floor for the std eigenvalues.
    delta : float
        Weight of the path-energy regularizer in the discrete problem.
    discrete : bool
        Solve the discrete problem (with ``delta``) even when the continuous
        cubic splines are admissible.
    slopes : pair of ``(mean', std-diagonal')`` for hermite end conditions.

    Returns
    -------
    GaussianESpline
    """
    times = np.array([t for t, _ in keyframes], dtype=float)
    gs = [g for _, g in keyframes]
    if len(gs) < 2:
        raise ValueError("need at least two keyframes")
    Q = common_basis([g.std for g in gs])
    if Q is None:
        raise ValueError("keyframe standard deviations do not commute")
    lam = np.array([np.diag(Q.T @ g.std @ Q) for g in gs])
    if np.any(lam < lam_min):
        bad = int(np.argmin(lam.min(axis=1)))
        raise InfeasibleConstraint(f"keyframe {bad} has std eigenvalue below {lam_min:g}")
    means = np.array([g.mean for g in gs])
    idx = _knot_indices(times, K)

    if bc == "periodic":
        if not (np.allclose(means[0], means[-1]) and np.allclose(lam[0], lam[-1])):
            raise ValueError("periodic keyframes must repeat the first frame at t = 1")
    if not discrete:
        sl_m = sl_l = None
        if bc == "hermite":
            if slopes is None:
                raise ValueError("hermite end conditions need end slopes")
            (m0, l0), (m1, l1) = slopes
            sl_m, sl_l = (m0, m1), (l0, l1)
        mp = cubic_spline_interpolate(times, means, bc, sl_m)
        lp = cubic_spline_interpolate(times, lam, bc, sl_l)
        path = DiagGaussianPath(mp, lp, None if np.allclose(Q, np.eye(len(Q))) else Q)
        if path.min_eigenvalue() >= lam_min:
            return GaussianESpline(path.sample(K), path, "spline")

    pins_m = {k: means[i] for i, k in enumerate(idx)}
    pins_l = [{k: lam[i, j] for i, k in enumerate(idx)} for j in range(lam.shape[1])]
    if bc == "hermite":
        if slopes is None:
            raise ValueError("hermite end conditions need end slopes")
        (m0, l0), (m1, l1) = slopes
        pins_m[1] = means[0] + np.asarray(m0) / K
        pins_m[K - 1] = means[-1] - np.asarray(m1) / K
        for j in range(lam.shape[1]):
            pins_l[j][1] = lam[0, j] + np.atleast_1d(l0)[j] / K
            pins_l[j][K - 1] = lam[-1, j] - np.atleast_1d(l1)[j] / K
    dbc = "natural" if bc == "hermite" else bc
    m_k = discrete_euclidean_spline(K, pins_m, delta, dbc)
    cols, actives = [], []
    for j in range(lam.shape[1]):
        x = discrete_euclidean_spline(K, pins_l[j], delta, dbc)
        act = np.zeros(K + 1, dtype=bool)
        if x.min() < lam_min:
            x, act = _box_spline(K, pins_l[j], lam_min, delta, dbc)
        cols.append(x)
        actives.append(act)
    l_k = np.stack(cols, axis=1)
    active = np.stack(actives, axis=1)
    regime = "constrained" if active.any() else "discrete"
    stds = np.einsum("ij,kj,lj->kil", Q, l_k, Q)
    return GaussianESpline(GaussianCurveSample(m_k, stds), None, regime, active)


def clipped_spline_sample(keyframes, K, bc="natural", lam_min=LAMBDA_MIN):
    """Sample the unconstrained cubic splines and clip eigenvalues at ``lam_min``.

    A naive baseline for the constrained eigenvalue problem.
    """
    times = np.array([t for t, _ in keyframes])
    lam = np.array([np.diag(g.std) for _, g in keyframes])
    means = np.array([g.mean for _, g in keyframes])
    t = np.arange(K + 1) / K
    m = cubic_spline_interpolate(times, means, bc)(t)
    lk = np.maximum(cubic_spline_interpolate(times, lam, bc)(t), lam_min)
    return GaussianCurveSample(m, lk)
