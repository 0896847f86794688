"""Sample-wise spline baseline (T-splines).

Samples of the first keyframe are pushed through the chain of optimal maps
between consecutive keyframes; each sample's chain of positions is then
interpolated by an ordinary cubic spline in time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .curves import cubic_spline_interpolate
from .measures import Gaussian, PointCloud
from .ot_exact import assignment_w2, quantile


@dataclass
class TSplineResult:
    """Trajectories of the pushed samples.

    ``chains[s, i]`` is sample ``s`` at keyframe ``i``; ``trajectories[s, q]``
    its spline evaluated at ``query_times[q]``.  ``mean``/``std`` summarize
    the pushforward at each query time.
    """

    keyframe_times: np.ndarray
    query_times: np.ndarray
    chains: np.ndarray
    trajectories: np.ndarray

    @property
    def mean(self):
        return self.trajectories.mean(axis=0)

    @property
    def std(self):
        return self.trajectories.std(axis=0)


def stratified_normal(n):
    """Standard normal quantiles at the bin midpoints ``(i + 1/2) / n``."""
    return norm.ppf((np.arange(n) + 0.5) / n)


def _quantile(mu, u):
    if isinstance(mu, Gaussian):
        return mu.mean[0] + mu.std[0, 0] * norm.ppf(u)
    atoms = mu.as_atoms() if isinstance(mu, PointCloud) else mu
    return quantile(atoms.points[:, 0], atoms.weights, u)


def t_spline_1d(keyframes, times, n_samples=512, query_times=None, bc="natural"):
    """T-spline through 1D keyframes (Gaussians or atomic measures).

    Parameters
    ----------
    keyframes : sequence of Gaussian or Atoms on the line
    times : sequence of float
    n_samples : int
        Number of stratified samples of the first keyframe.
    query_times : array_like, optional
        Defaults to 101 uniform times on ``[times[0], times[-1]]``.
    """
    times = np.asarray(times, dtype=float)
    if len(keyframes) != len(times) or len(times) < 2:
        raise ValueError("need matching keyframes and times (at least two)")
    for mu in keyframes:
        if mu.dim != 1:
            raise ValueError("t_spline_1d needs measures on the line")
    q = np.linspace(times[0], times[-1], 101) if query_times is None else np.asarray(query_times, float)
    # on the line the composed monotone maps send the sample at level u to
    # the u-quantile of every later keyframe; tracking u also splits atoms
    # of the source correctly
    u = (np.arange(n_samples) + 0.5) / n_samples
    chains = np.stack([_quantile(mu, u) for mu in keyframes], axis=1)
    spline = cubic_spline_interpolate(times, chains.T, bc)
    traj = spline(q).T
    return TSplineResult(times, q, chains, traj)


def t_spline_pointcloud(keyframes, times, query_times=None, bc="natural"):
    """T-spline through equal-size point clouds via optimal assignments."""
    times = np.asarray(times, dtype=float)
    clouds = [np.asarray(c.points, dtype=float) for c in keyframes]
    q = np.linspace(times[0], times[-1], 101) if query_times is None else np.asarray(query_times, float)
    chain = [clouds[0]]
    for nxt in clouds[1:]:
        _, perm = assignment_w2(chain[-1], nxt)
        chain.append(nxt[perm])
    chains = np.stack(chain, axis=1)  # (n, I, d)
    spline = cubic_spline_interpolate(times, np.moveaxis(chains, 1, 0), bc)
    traj = np.moveaxis(spline(q), 0, 1)  # (n, Q, d)
    return TSplineResult(times, q, chains, traj)
