"""JSON run configurations for the command line driver.

A configuration looks like::

    {
      "mode": "grid",
      "problem": {
        "K": 8, "delta": 0.1, "eps": 5e-4, "bc": "natural", "grid": [65, 65],
        "keyframes": [
          {"t": 0.0, "file": "start.csv"},
          {"t": 0.5, "mean": [0.5, 0.6], "std": [0.1, 0.07]},
          {"t": 1.0, "file": "end.pgm"}
        ]
      },
      "optimizer": {"max_outer": 100, "beta": 0.8},
      "output": {"directory": "out", "formats": ["csv", "pgm"], "summary": true, "figures": true}
    }

Relative paths are resolved against the directory of the configuration
file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .io import load_density, read_csv
from .measures import Gaussian, Grid2, PointCloud, rasterize_gaussian
from .optimizer import OptimizerConfig
from .spline import SplineProblem

MODES = ("grid", "gaussian", "pointcloud", "tspline", "energy", "extend")
_OPT_KEYS = {f.name for f in fields(OptimizerConfig)}
_FORMATS = ("csv", "pgm")


@dataclass
class RunConfig:
    mode: str
    problem: dict
    optimizer: OptimizerConfig
    output: dict
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    @property
    def out_dir(self):
        return self.resolve(self.output.get("directory", "out"))

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def read_config(path):
    """Parse a JSON file; raises :class:`ConfigError` on unreadable input."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    return raw, os.path.dirname(os.path.abspath(path))


def _keyframe_kind(kf):
    if "file" in kf:
        return "file"
    if "mean" in kf and "std" in kf:
        return "gaussian"
    if "points" in kf or "points_file" in kf:
        return "points"
    return None


def validate_raw(raw, base_dir="."):
    """All problems found in a raw configuration, as ``(key, message)`` pairs."""
    out = []
    mode = raw.get("mode")
    if mode not in MODES:
        out.append(("mode", f"must be one of {', '.join(MODES)} (got {mode!r})"))
        return out
    prob = raw.get("problem")
    if not isinstance(prob, dict):
        return out + [("problem", "missing problem block")]
    opt = raw.get("optimizer", {})
    if not isinstance(opt, dict):
        out.append(("optimizer", "must be an object"))
    else:
        unknown = sorted(set(opt) - _OPT_KEYS)
        for key in unknown:
            out.append((f"optimizer.{key}", "unknown key"))
        try:
            OptimizerConfig(**{k: v for k, v in opt.items() if k in _OPT_KEYS})
        except ConfigError as exc:
            out.append((f"optimizer.{exc.key}", str(exc).split(": ", 1)[-1]))
        except TypeError as exc:
            out.append(("optimizer", str(exc)))
    output = raw.get("output", {})
    for fmt in output.get("formats", ["csv"]):
        if fmt not in _FORMATS:
            out.append(("output.formats", f"unknown format {fmt!r}"))

    def path_ok(key, p):
        full = p if os.path.isabs(p) else os.path.join(base_dir, p)
        if not os.path.exists(full):
            out.append((key, f"file not found: {p}"))

    if mode == "extend":
        knots = prob.get("knots")
        if not isinstance(knots, list) or len(knots) < 3:
            out.append(("problem.knots", "need a list of at least three knots"))
        return out
    if mode == "energy":
        frames = prob.get("frames")
        if not isinstance(frames, list) or len(frames) < 2:
            out.append(("problem.frames", "need a list of at least two frames"))
        else:
            for i, f in enumerate(frames):
                if isinstance(f, str):
                    path_ok(f"problem.frames[{i}]", f)
        return out

    K = prob.get("K")
    if mode != "tspline" and (not isinstance(K, int) or K < 2):
        out.append(("problem.K", "must be an integer >= 2"))
        K = None
    kfs = prob.get("keyframes")
    if not isinstance(kfs, list) or len(kfs) < 2:
        return out + [("problem.keyframes", "need at least two keyframes")]
    times = []
    for i, kf in enumerate(kfs):
        key = f"problem.keyframes[{i}]"
        if not isinstance(kf, dict) or "t" not in kf:
            out.append((key, "keyframe needs a time 't'"))
            continue
        t = float(kf["t"])
        times.append(t)
        if not 0.0 <= t <= 1.0:
            out.append((f"{key}.t", f"time {t:g} outside [0, 1]"))
        if K is not None and abs(K * t - round(K * t)) > 1e-9:
            out.append((f"{key}.t", f"K*t not integral (K={K}, t={t:g})"))
        kind = _keyframe_kind(kf)
        if kind is None:
            out.append((key, "needs 'file', 'mean'/'std' or 'points'"))
        elif kind == "file":
            path_ok(f"{key}.file", kf["file"])
        elif kind == "points" and "points_file" in kf:
            path_ok(f"{key}.points_file", kf["points_file"])
        if mode == "gaussian" and kind != "gaussian":
            out.append((key, "gaussian mode needs inline mean/std keyframes"))
        if mode == "pointcloud" and kind != "points":
            out.append((key, "pointcloud mode needs point keyframes"))
    if any(b <= a for a, b in zip(times, times[1:])):
        out.append(("problem.keyframes", "times must be strictly increasing"))
    bc = prob.get("bc", "natural")
    if bc not in ("natural", "hermite", "periodic"):
        out.append(("problem.bc", f"unknown boundary condition {bc!r}"))
    if bc == "hermite" and K is not None:
        if not times or times[0] != 0.0 or times[-1] != 1.0:
            out.append(("problem.bc", "hermite conditions need keyframes at t=0 and t=1"))
        ends = prob.get("end_frames", {})
        if mode == "gaussian":
            if "slopes" not in prob:
                out.append(("problem.slopes", "hermite conditions need end slopes"))
        else:
            missing = [k for k in (1, K - 1) if str(k) not in ends]
            if missing:
                out.append(("problem.end_frames", f"hermite conditions need frames pinned at indices {missing}"))
    delta = prob.get("delta", 0.0)
    if not isinstance(delta, (int, float)) or delta < 0:
        out.append(("problem.delta", "must be a nonnegative number"))
    eps = prob.get("eps")
    if eps is not None and (not isinstance(eps, (int, float)) or eps <= 0):
        out.append(("problem.eps", "must be positive"))
    grid = prob.get("grid")
    if grid is not None and (not isinstance(grid, list) or len(grid) != 2 or min(grid) < 3):
        out.append(("problem.grid", "must be [M, N] with M, N >= 3"))
    return out


def load_run_config(path):
    """Read and validate; raises :class:`ConfigError` naming the first bad key."""
    raw, base = read_config(path)
    problems = validate_raw(raw, base)
    if problems:
        key, msg = problems[0]
        raise ConfigError(key, msg)
    opt = OptimizerConfig(**raw.get("optimizer", {}))
    return RunConfig(raw["mode"], raw["problem"], opt, raw.get("output", {}), base, raw)


def _grid(cfg: RunConfig):
    g = cfg.problem.get("grid")
    return Grid2(*g) if g else None


def load_keyframe(cfg: RunConfig, kf, grid=None):
    """Build the measure described by one keyframe entry."""
    kind = _keyframe_kind(kf)
    if kind == "file":
        mu = load_density(cfg.resolve(kf["file"]))
        if grid is not None and mu.grid != grid:
            raise ConfigError("problem.grid", f"frame {kf['file']} has shape {mu.grid.shape}, expected {grid.shape}")
        return mu
    if kind == "gaussian":
        g = Gaussian(kf["mean"], np.asarray(kf["std"], dtype=float))
        if cfg.mode in ("grid", "energy"):
            return rasterize_gaussian(g, grid or Grid2(65, 65))
        return g
    if "points_file" in kf:
        return PointCloud(read_csv(cfg.resolve(kf["points_file"])))
    return PointCloud(np.asarray(kf["points"], dtype=float))


def build_problem(cfg: RunConfig):
    """:class:`SplineProblem` for the grid, gaussian and pointcloud modes."""
    prob = cfg.problem
    grid = _grid(cfg)
    if grid is None and cfg.mode == "grid":
        shapes = [load_keyframe(cfg, kf).grid for kf in prob["keyframes"] if _keyframe_kind(kf) == "file"]
        grid = shapes[0] if shapes else Grid2(65, 65)
    kfs = [load_keyframe(cfg, kf, grid) for kf in prob["keyframes"]]
    ends = {int(k): load_keyframe(cfg, v, grid) for k, v in prob.get("end_frames", {}).items()}
    try:
        return SplineProblem(
            K=prob["K"],
            times=[kf["t"] for kf in prob["keyframes"]],
            keyframes=kfs,
            delta=float(prob.get("delta", 0.0)),
            eps=prob.get("eps"),
            bc=prob.get("bc", "natural"),
            end_frames=ends,
        )
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from exc
