"""Grid geometry and the measure types shared by every solver.

All measures live on the unit square.  A :class:`Grid2` with ``M x N`` cells
carries one atom per cell, located at the cell center; weights are stored as
an ``(M, N)`` array indexed ``[i, j]`` with ``x = (i + 1/2) / M`` and
``y = (j + 1/2) / N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllZero, DegenerateRaster, NegativeMass, NotSPD

MASS_TOL = 1e-12
_SILENT_RENORM = 1e-6
_LOG_TINY = np.log(np.finfo(float).tiny)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid2:
    M: int
    N: int

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 3 or self.N < 3:
            raise ValueError(f"grid needs integer M, N >= 3, got {self.M}x{self.N}")

    @property
    def shape(self):
        return (self.M, self.N)

    @property
    def size(self):
        return self.M * self.N

    @property
    def cell_width(self):
        return max(1.0 / self.M, 1.0 / self.N)

    def axis(self, k):
        n = self.shape[k]
        return (np.arange(n) + 0.5) / n

    def centers(self):
        """Cell centers as an ``(M, N, 2)`` array."""
        X, Y = np.meshgrid(self.axis(0), self.axis(1), indexing="ij")
        return np.stack([X, Y], axis=-1)

    @property
    def diameter2(self):
        """Squared diameter of the set of cell centers."""
        x, y = self.axis(0), self.axis(1)
        return (x[-1] - x[0]) ** 2 + (y[-1] - y[0]) ** 2


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability weights on the cells of a :class:`Grid2`.

    ``renormalized`` is set when the input mass was off by more than 1e-6
    and had to be rescaled.
    """

    grid: Grid2
    weights: np.ndarray
    renormalized: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.grid.shape:
            raise ValueError(f"weights shape {w.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise NegativeMass("negative weight")
        total = w.sum()
        if total <= 0:
            raise AllZero("measure has no mass")
        flag = self.renormalized or abs(total - 1.0) > _SILENT_RENORM
        w = w / total
        assert abs(w.sum() - 1.0) <= MASS_TOL
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "renormalized", bool(flag))

    @property
    def flat(self):
        return self.weights.ravel()

    def with_weights(self, weights):
        return DiscreteMeasure(self.grid, weights)


@dataclass(frozen=True, eq=False)
class Atoms:
    """Weighted point masses in R^d (``points`` has shape ``(n, d)``)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if p.shape[0] != w.shape[0] or p.shape[0] == 0:
            raise ValueError("points and weights disagree in length")
        if not np.all(np.isfinite(p)):
            raise ValueError("atom coordinates must be finite")
        if np.any(w < 0):
            raise NegativeMass("negative weight")
        if w.sum() <= 0:
            raise AllZero("measure has no mass")
        w = w / w.sum()
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, points):
        p = np.asarray(points, dtype=float)
        return cls(p, np.full(len(p), 1.0 / len(p)))

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``M`` equally weighted atoms in R^d."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("point cloud needs at least one point")
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(p))

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def as_atoms(self):
        return Atoms.uniform(self.points)


@dataclass(frozen=True, eq=False)
class Gaussian:
    """``N(mean, std @ std)`` with ``std`` symmetric positive definite."""

    mean: np.ndarray
    std: np.ndarray = field(repr=True)

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        s = np.asarray(self.std, dtype=float)
        d = m.shape[0]
        if s.ndim == 0:
            s = np.eye(d) * s
        elif s.ndim == 1:
            s = np.diag(s)
        if s.shape != (d, d):
            raise ValueError(f"std shape {s.shape} does not match mean dimension {d}")
        if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max())):
            raise NotSPD("std matrix is not symmetric")
        s = 0.5 * (s + s.T)
        if np.linalg.eigvalsh(s).min() <= 0:
            raise NotSPD("std matrix is not positive definite")
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "std", _frozen(s))

    @classmethod
    def diag(cls, mean, stds):
        return cls(mean, np.diag(np.atleast_1d(np.asarray(stds, dtype=float))))

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def cov(self):
        return self.std @ self.std

    @property
    def is_diagonal(self):
        return np.count_nonzero(self.std - np.diag(np.diag(self.std))) == 0

    def pdf(self, x):
        """Density at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        inv = np.linalg.inv(self.std)
        z = (x - self.mean) @ inv.T
        norm = (2 * np.pi) ** (-d / 2) / np.linalg.det(self.std)
        return norm * np.exp(-0.5 * np.sum(z * z, axis=-1))


def measure_from_density_grid(raw, grid=None):
    """Normalize a nonnegative ``(M, N)`` array of raw cell masses."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("raw density must be a 2D array")
    if np.any(raw < 0):
        raise NegativeMass("raw density has negative entries")
    if not np.any(raw > 0):
        raise AllZero("raw density is identically zero")
    grid = grid or Grid2(*raw.shape)
    return DiscreteMeasure(grid, raw)


def rasterize_gaussian(g, grid):
    """Sample the density of a 2D Gaussian at cell centers and normalize."""
    if g.dim != 2:
        raise ValueError("rasterize_gaussian needs a 2D Gaussian")
    x = grid.centers() - g.mean
    inv = np.linalg.inv(g.std)
    z = x @ inv.T
    logp = -0.5 * np.sum(z * z, axis=-1) - np.log(2 * np.pi * abs(np.linalg.det(g.std)))
    top = logp.max()
    if not np.isfinite(top) or top < _LOG_TINY:
        raise DegenerateRaster("Gaussian density underflows on every cell")
    # normalized after a shift by the max, so the kept cells lose no precision
    w = np.exp(logp - top)
    return DiscreteMeasure(grid, w)


def moments(mu):
    """Mean and covariance of a grid measure (or of :class:`Atoms`)."""
    if isinstance(mu, DiscreteMeasure):
        x = mu.grid.centers().reshape(-1, 2)
        w = mu.flat
    else:
        x, w = mu.points, mu.weights
    mean = w @ x
    xc = x - mean
    cov = (xc * w[:, None]).T @ xc
    return mean, cov


def std_from_cov(cov):
    """Symmetric positive semidefinite square root of a covariance matrix."""
    vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T
