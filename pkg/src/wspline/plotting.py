"""Figures written alongside the CLI outputs (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_frames(frames, path, pinned=(), title=None):
    """Montage of grid frames; pinned frames get a colored border."""
    n = len(frames)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9))
    axes = np.atleast_1d(axes)
    for k, (ax, mu) in enumerate(zip(axes, frames)):
        ax.imshow(mu.weights.T, origin="lower", cmap="magma", extent=(0, 1, 0, 1))
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(f"k={k}", fontsize=8)
        if k in pinned:
            for side in ax.spines.values():
                side.set_color("tab:orange")
                side.set_linewidth(2)
    if title:
        fig.suptitle(title, fontsize=9)
    return _save(fig, path)


def plot_trajectory(means, path, stds=None, pinned=()):
    """Centers of mass over time, with optional one-std ellipse axes."""
    means = np.asarray(means)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(means[:, 0], means[:, 1], "-o", ms=3, color="tab:blue")
    for k in pinned:
        ax.plot(*means[k, :2], "s", color="tab:orange", ms=6)
    if stds is not None:
        for m, s in zip(means, np.asarray(stds)):
            ax.add_patch(Ellipse(m[:2], 2 * s[0], 2 * s[1], fill=False, lw=0.6, alpha=0.6))
    ax.set_aspect("equal")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title("center of mass", fontsize=9)
    return _save(fig, path)


def plot_objective(trace, path):
    fig, ax = plt.subplots(figsize=(5, 3))
    obj = np.asarray(trace.objective)
    stage = np.asarray(trace.stage)
    for s in np.unique(stage):
        idx = np.nonzero(stage == s)[0]
        ax.plot(idx, obj[idx], "-", lw=1, label=f"eps={trace.eps[idx[0]]:.2g}")
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("objective")
    if np.all(obj > 0):
        ax.set_yscale("log")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_std_curves(t, curves, path, keyframes=None, ylabel="std"):
    """Overlay named curves, e.g. T-spline versus E-spline standard deviations."""
    fig, ax = plt.subplots(figsize=(5, 3))
    for name, y in curves.items():
        ax.plot(t, y, label=name)
    if keyframes is not None:
        kt, ky = keyframes
        ax.plot(kt, ky, "ko", ms=4, label="keyframes")
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_clouds(frames, path):
    """Point clouds over time, colored by time step."""
    fig, ax = plt.subplots(figsize=(4, 4))
    cmap = plt.get_cmap("viridis")
    n = len(frames)
    for k, pts in enumerate(frames):
        pts = np.asarray(pts)
        y = pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts))
        ax.scatter(pts[:, 0], y, s=4, color=cmap(k / max(n - 1, 1)))
    ax.set_title("point clouds over time", fontsize=9)
    return _save(fig, path)
