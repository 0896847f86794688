"""Classical curves: cubic splines, discrete Euclidean splines, and the
midpoint extension of a knot tuple to a C^1 curve.

Everything here is vector-valued along trailing axes: a knot tuple is an
array of shape ``(K + 1, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

from .errors import SingularSystem

BOUNDARY_CONDITIONS = ("natural", "hermite", "periodic")


# --------------------------------------------------------------------------
# Piecewise cubics


@dataclass(frozen=True, eq=False)
class PiecewiseCubic:
    """A C^2 (or C^1) piecewise cubic curve wrapping :class:`scipy.interpolate.PPoly`."""

    pp: PPoly

    @property
    def breaks(self):
        return self.pp.x

    def __call__(self, t, nu=0):
        return self.pp(np.asarray(t, dtype=float), nu)

    def _pieces(self):
        h = np.diff(self.pp.x)
        # PPoly stores the highest power first
        c3, c2, c1 = self.pp.c[0], self.pp.c[1], self.pp.c[2]
        shape = (-1,) + (1,) * (c3.ndim - 1)
        return h.reshape(shape), c1, c2, c3

    def acceleration_energy(self):
        """Exact ``int |y''|^2 dt`` summed over pieces (and components)."""
        h, _, c2, c3 = self._pieces()
        per = 4 * c2**2 * h + 12 * c2 * c3 * h**2 + 12 * c3**2 * h**3
        return float(np.sum(per))

    def velocity_energy(self):
        """Exact ``int |y'|^2 dt`` summed over pieces (and components)."""
        h, c1, c2, c3 = self._pieces()
        # y' = c1 + 2 c2 s + 3 c3 s^2 squared and integrated over [0, h]
        per = (
            c1**2 * h
            + 2 * c1 * c2 * h**2
            + (4 * c2**2 + 6 * c1 * c3) * h**3 / 3
            + 3 * c2 * c3 * h**4
            + 9 * c3**2 * h**5 / 5
        )
        return float(np.sum(per))


def cubic_spline_interpolate(t, y, bc="natural", slopes=None):
    """Interpolating cubic spline through ``(t_i, y_i)``.

    Parameters
    ----------
    t : array_like, shape (I,)
        Strictly increasing knot times.
    y : array_like, shape (I, ...)
        Knot values.
    bc : {"natural", "hermite", "clamped", "periodic"}
        ``hermite``/``clamped`` need ``slopes=(y'(t_0), y'(t_I))``.
        ``periodic`` needs ``y[0] == y[-1]``.

    For natural end conditions the result minimizes ``int |y''|^2`` among
    all C^2 interpolants.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("need at least two knots")
    if np.any(np.diff(t) <= 0):
        raise SingularSystem("knot times must be strictly increasing")
    if bc == "natural":
        bc_type = "natural"
    elif bc in ("hermite", "clamped"):
        if slopes is None:
            raise ValueError("hermite end conditions need end slopes")
        s0, s1 = (np.asarray(s, dtype=float) for s in slopes)
        bc_type = ((1, s0), (1, s1))
    elif bc == "periodic":
        bc_type = "periodic"
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    if len(t) == 2 and bc == "natural":
        # scipy needs three knots for the natural system; two knots give a line
        slope = (y[1] - y[0]) / (t[1] - t[0])
        bc_type = ((1, slope), (1, slope))
    try:
        cs = CubicSpline(t, y, axis=0, bc_type=bc_type)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(cs.c)):
        raise SingularSystem("spline system is singular")
    return PiecewiseCubic(PPoly(cs.c, cs.x))


# --------------------------------------------------------------------------
# Discrete Euclidean splines


def second_difference_matrix(K, bc="natural"):
    """Rows ``x_k - (x_{k-1} + x_{k+1}) / 2`` of the spline terms.

    Interior ``k = 1..K-1``; periodic adds the wraparound term at ``k = K``
    (with ``x_K`` identified with ``x_0``).
    """
    if bc == "periodic":
        D = np.zeros((K, K))
        for k in range(K):
            D[k, k] += 1.0
            D[k, (k - 1) % K] -= 0.5
            D[k, (k + 1) % K] -= 0.5
        return D
    D = np.zeros((K - 1, K + 1))
    for k in range(1, K):
        D[k - 1, k - 1:k + 2] = (-0.5, 1.0, -0.5)
    return D


def first_difference_matrix(K, bc="natural"):
    if bc == "periodic":
        D = np.zeros((K, K))
        for k in range(K):
            D[k, k] -= 1.0
            D[k, (k + 1) % K] += 1.0
        return D
    D = np.zeros((K, K + 1))
    for k in range(K):
        D[k, k:k + 2] = (-1.0, 1.0)
    return D


def euclidean_spline_hessian(K, delta=0.0, bc="natural"):
    """Hessian of ``4K^3 sum |D2 x|^2 + delta K sum |D1 x|^2`` (factor 2 included)."""
    D2 = second_difference_matrix(K, bc)
    D1 = first_difference_matrix(K, bc)
    return 2 * (4 * K**3 * D2.T @ D2 + delta * K * D1.T @ D1)


def discrete_euclidean_spline(K, pins, delta=0.0, bc="natural"):
    """Closed-form minimizer of the discrete Euclidean spline energy.

    Minimizes ``4K^3 sum_k |x_k - (x_{k-1}+x_{k+1})/2|^2 + delta K sum_k
    |x_{k+1} - x_k|^2`` subject to ``x_k = pins[k]``.  Under periodic
    conditions the unknowns are ``x_0..x_{K-1}`` and ``x_K = x_0`` is
    appended on return.

    Returns an array of shape ``(K + 1, ...)``.
    """
    pins = {int(k): np.asarray(v, dtype=float) for k, v in pins.items()}
    n = K if bc == "periodic" else K + 1
    if bc == "periodic":
        pins = {k % K: v for k, v in pins.items()}
    shape = next(iter(pins.values())).shape
    H = euclidean_spline_hessian(K, delta, bc)
    fixed = sorted(pins)
    free = [k for k in range(n) if k not in pins]
    x = np.zeros((n,) + shape)
    for k in fixed:
        x[k] = pins[k]
    if free:
        A = H[np.ix_(free, fixed)]
        rhs = -np.tensordot(A, x[fixed], axes=(1, 0))
        Hff = H[np.ix_(free, free)]
        try:
            x[free] = np.linalg.solve(Hff, rhs.reshape(len(free), -1)).reshape((len(free),) + shape)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("spline system is singular; add pins or delta > 0") from exc
    if bc == "periodic":
        x = np.concatenate([x, x[:1]], axis=0)
    return x


def discrete_euclidean_energies(x, K, bc="natural"):
    """``(spline terms, path terms)`` of a Euclidean knot tuple ``x``.

    Spline terms are ``|x_k - (x_{k-1}+x_{k+1})/2|^2`` and path terms
    ``|x_{k+1} - x_k|^2``, unscaled.
    """
    x = np.asarray(x, dtype=float)
    xs = x[:K] if bc == "periodic" else x
    flat = xs.reshape(len(xs), -1)
    s = np.sum((second_difference_matrix(K, bc) @ flat) ** 2, axis=1)
    p = np.sum((first_difference_matrix(K, bc) @ flat) ** 2, axis=1)
    return s, p


# --------------------------------------------------------------------------
# Temporal extension


@dataclass(frozen=True, eq=False)
class TemporalExtension:
    """C^1 extension of knots ``s_0..s_K`` sampled at ``t_k = k / K``.

    Linear on ``[0, t_{1/2}]`` and ``[t_{K-1/2}, 1]``; on each
    ``[t_{k-1/2}, t_{k+1/2}]`` the quadratic with value ``(s_{k-1}+s_k)/2``,
    slope ``K (s_k - s_{k-1})`` at the left end and constant second
    derivative ``K^2 (s_{k+1} - 2 s_k + s_{k-1})``.  Its value at ``t_k`` is
    ``(s_{k-1} + 6 s_k + s_{k+1}) / 8``.
    """

    knots: np.ndarray

    @property
    def K(self):
        return len(self.knots) - 1

    def _locate(self, t):
        K = self.K
        t = np.asarray(t, dtype=float)
        # piece index 0 = first half interval, 1..K-1 = midpoint pieces, K = last half
        k = np.clip(np.floor(t * K + 0.5).astype(int), 0, K)
        return t, k

    def _eval(self, t, order):
        s = self.knots
        K = self.K
        t, k = self._locate(t)
        out = np.zeros(t.shape + s.shape[1:])
        extra = (slice(None),) + (None,) * (s.ndim - 1)
        first = k == 0
        last = k == K
        mid = ~(first | last)
        if np.any(first):
            tt = t[first][extra]
            vals = [s[0] + (s[1] - s[0]) * K * tt, (s[1] - s[0]) * K + 0 * tt, 0 * tt + 0 * s[0]]
            out[first] = vals[order]
        if np.any(last):
            tt = t[last][extra]
            vals = [s[K - 1] + (s[K] - s[K - 1]) * K * (tt - (K - 1) / K),
                    (s[K] - s[K - 1]) * K + 0 * tt, 0 * tt + 0 * s[0]]
            out[last] = vals[order]
        if np.any(mid):
            kk = k[mid]
            u = (t[mid] - (kk - 0.5) / K)[extra]
            d1 = s[kk] - s[kk - 1]
            d2 = s[kk + 1] - 2 * s[kk] + s[kk - 1]
            if order == 0:
                out[mid] = 0.5 * (s[kk - 1] + s[kk]) + d1 * K * u + d2 * K**2 * u**2 / 2
            elif order == 1:
                out[mid] = d1 * K + d2 * K**2 * u
            else:
                out[mid] = d2 * K**2 + 0 * u
        return out

    def __call__(self, t):
        return self._eval(np.atleast_1d(t), 0)

    def derivative(self, t, order=1):
        return self._eval(np.atleast_1d(t), order)

    def velocity_energy(self):
        """Exact ``int |eta'|^2 dt``."""
        s = self.knots.reshape(len(self.knots), -1)
        K = self.K
        half = 0.5 / K
        total = half * (np.sum(((s[1] - s[0]) * K) ** 2) + np.sum(((s[K] - s[K - 1]) * K) ** 2))
        for k in range(1, K):
            a = (s[k] - s[k - 1]) * K
            b = (s[k + 1] - s[k]) * K
            # eta' is linear from a to b over a piece of length 1/K
            total += np.sum(a * a + a * b + b * b) / (3 * K)
        return float(total)

    def acceleration_energy(self):
        """Exact ``int |eta''|^2 dt``."""
        s = self.knots.reshape(len(self.knots), -1)
        K = self.K
        d2 = s[2:] - 2 * s[1:-1] + s[:-2]
        return float(np.sum((d2 * K**2) ** 2) / K)


def temporal_extension(knots):
    knots = np.asarray(knots, dtype=float)
    if len(knots) < 3:
        raise ValueError("temporal extension needs K >= 2")
    return TemporalExtension(knots)
