"""Command line driver: ``wspline run|validate|oracle|gaussian|tspline``.

Exit status is 0 on success, 2 for configuration errors (the message names
the offending key) and 3 for solver failures (the optimizer trace is still
written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import spline as spl
from .baselines import t_spline_1d
from .config import RunConfig, build_problem, load_keyframe, load_run_config, read_config, validate_raw
from .curves import discrete_euclidean_energies, temporal_extension
from .errors import ConfigError, WSplineError
from .gaussian import gaussian_espline
from .io import save_measure, write_csv
from .measures import Atoms, DiscreteMeasure, Gaussian, Grid2, PointCloud, moments
from .optimizer import OptimizerTrace, solve_grid_spline, solve_pointcloud_spline

log = logging.getLogger("wspline")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


# --------------------------------------------------------------------------
# Output helpers


def _write_rows(path, rows):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
    return path


def write_trace(out_dir, trace: OptimizerTrace):
    return _write_rows(os.path.join(out_dir, "trace.csv"), trace.rows())


def _stats(mu):
    """Mean and std (square root of the covariance) of any measure kind."""
    if isinstance(mu, Gaussian):
        return mu.mean, mu.std
    if isinstance(mu, PointCloud):
        mu = mu.as_atoms()
    m, C = moments(mu)
    vals, vecs = np.linalg.eigh(C)
    return m, (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def summary_rows(measures, K):
    for k, mu in enumerate(measures):
        m, s = _stats(mu)
        row = {"k": k, "t": k / K}
        for i, v in enumerate(m):
            row[f"mean_{i}"] = float(v)
        for i in range(len(m)):
            row[f"std_{i}"] = float(s[i, i])
        for i in range(len(m)):
            for j in range(i + 1, len(m)):
                row[f"std_{i}{j}"] = float(s[i, j])
        yield row


def _figures_on(cfg: RunConfig):
    return bool(cfg.output.get("figures", True))


def _formats(cfg: RunConfig):
    return cfg.output.get("formats", ["csv"])


# --------------------------------------------------------------------------
# Modes


def run_grid(cfg: RunConfig, out):
    problem = build_problem(cfg)
    opt = cfg.optimizer
    if problem.eps is not None and "eps" not in cfg.raw.get("optimizer", {}):
        opt.eps = float(problem.eps)
    log.info("grid mode: K=%d, grid %s, eps ladder %s", problem.K, problem.keyframes[0].grid.shape, opt.ladder())
    try:
        sol, trace = solve_grid_spline(problem, opt)
    except WSplineError as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            write_trace(out, trace)
        raise
    for k, mu in enumerate(sol.measures):
        for fmt in _formats(cfg):
            save_measure(os.path.join(out, f"frame_{k:03d}.{fmt}"), mu)
    energies = sol.to_dict()
    energies["surrogate"] = opt.spline_term
    energies["surrogate_objective"] = trace.objective[-1] if len(trace) else None
    _write_json(os.path.join(out, "energies.json"), energies)
    write_trace(out, trace)
    if cfg.output.get("summary", True):
        _write_rows(os.path.join(out, "summary.csv"), summary_rows(sol.measures, problem.K))
    if _figures_on(cfg):
        from . import plotting

        pinned = set(problem.pins())
        plotting.plot_frames(sol.measures, os.path.join(out, "frames.png"), pinned)
        stats = [_stats(mu) for mu in sol.measures]
        plotting.plot_trajectory(np.array([m for m, _ in stats]), os.path.join(out, "trajectory.png"),
                                 np.array([np.diag(s) for _, s in stats]), sorted(pinned))
        plotting.plot_objective(trace, os.path.join(out, "objective.png"))
    return energies


def run_pointcloud(cfg: RunConfig, out):
    problem = build_problem(cfg)
    try:
        sol, trace = solve_pointcloud_spline(problem, cfg.optimizer)
    except WSplineError as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            write_trace(out, trace)
        raise
    for k, mu in enumerate(sol.measures):
        write_csv(os.path.join(out, f"frame_{k:03d}.csv"), mu.points)
    energies = sol.to_dict()
    _write_json(os.path.join(out, "energies.json"), energies)
    write_trace(out, trace)
    if cfg.output.get("summary", True):
        _write_rows(os.path.join(out, "summary.csv"), summary_rows(sol.measures, problem.K))
    if _figures_on(cfg):
        from . import plotting

        plotting.plot_clouds([mu.points for mu in sol.measures], os.path.join(out, "clouds.png"))
    return energies


def _gaussian_keyframes(cfg):
    return [(float(kf["t"]), load_keyframe(cfg, kf)) for kf in cfg.problem["keyframes"]]


def run_gaussian(cfg: RunConfig, out):
    prob = cfg.problem
    kfs = _gaussian_keyframes(cfg)
    K = int(prob["K"])
    slopes = prob.get("slopes")
    if slopes is not None:
        slopes = ((np.asarray(slopes[0][0]), np.asarray(slopes[0][1])),
                  (np.asarray(slopes[1][0]), np.asarray(slopes[1][1])))
    res = gaussian_espline(
        kfs, K, bc=prob.get("bc", "natural"), lam_min=float(prob.get("lam_min", 1e-4)),
        delta=float(prob.get("delta", 0.0)), discrete=bool(prob.get("discrete", False)), slopes=slopes,
    )
    gs = res.sample.gaussians()
    bc = prob.get("bc", "natural")
    bc_energy = "natural" if bc == "hermite" else bc
    delta = float(prob.get("delta", 0.0))
    F = spl.discrete_spline_energy(gs, "gaussian", bc_energy)
    E = spl.discrete_path_energy(gs, "gaussian", bc_energy)
    energies = {
        "total": F.total + delta * E.total,
        "spline_energy": F.total,
        "path_energy": E.total,
        "spline_terms": [float(v) for v in F.terms],
        "path_terms": [float(v) for v in E.terms],
        "backend": "gaussian",
        "regime": res.regime,
        "K": K,
        "delta": delta,
        "eps": None,
    }
    if res.path is not None:
        energies["continuous_spline_energy"] = res.path.spline_energy()
        energies["continuous_path_energy"] = res.path.path_energy()
    _write_json(os.path.join(out, "energies.json"), energies)
    _write_rows(os.path.join(out, "summary.csv"), summary_rows(gs, K))
    if _figures_on(cfg):
        from . import plotting

        t = res.sample.times
        d = res.sample.means.shape[1]
        curves = {f"std_{i}": res.sample.stds[:, i, i] for i in range(d)}
        curves.update({f"mean_{i}": res.sample.means[:, i] for i in range(d)})
        plotting.plot_std_curves(t, curves, os.path.join(out, "gaussian_spline.png"), ylabel="value")
    return energies


def run_tspline(cfg: RunConfig, out):
    prob = cfg.problem
    kfs = _gaussian_keyframes(cfg)
    times = [t for t, _ in kfs]
    measures = [g if isinstance(g, Gaussian) else g.as_atoms() for _, g in kfs]
    K = int(prob.get("K", 64))
    q = np.arange(K + 1) / K
    n = int(prob.get("n_samples", 512))
    bc = prob.get("bc", "natural")
    res = t_spline_1d(measures, times, n, q, bc)
    rows = []
    e_std = e_mean = None
    regime = None
    if all(isinstance(g, Gaussian) for g in measures) and all(abs(K * t - round(K * t)) < 1e-9 for t in times):
        e = gaussian_espline(kfs, K, bc=bc, lam_min=float(prob.get("lam_min", 1e-4)))
        e_std, e_mean, regime = e.sample.stds[:, 0, 0], e.sample.means[:, 0], e.regime
    for i, t in enumerate(q):
        row = {"t": t, "t_mean": res.mean[i], "t_std": res.std[i]}
        if e_std is not None:
            row.update({"e_mean": e_mean[i], "e_std": e_std[i], "std_gap": res.std[i] - e_std[i]})
        rows.append(row)
    _write_rows(os.path.join(out, "tspline.csv"), rows)
    traj = np.column_stack([q, res.trajectories.T])
    header = "t," + ",".join(f"s{i}" for i in range(res.trajectories.shape[0]))
    np.savetxt(os.path.join(out, "trajectories.csv"), traj, delimiter=",", fmt="%.17g", header=header, comments="")
    report = {"n_samples": n, "K": K, "e_regime": regime}
    if e_std is not None:
        report["max_std_gap"] = float(np.max(np.abs(res.std - e_std)))
    _write_json(os.path.join(out, "tspline.json"), report)
    if _figures_on(cfg):
        from . import plotting

        curves = {"T-spline std": res.std}
        if e_std is not None:
            curves["E-spline std"] = e_std
        kstd = [g.std[0, 0] if isinstance(g, Gaussian) else np.sqrt(moments(g)[1][0, 0]) for g in measures]
        plotting.plot_std_curves(q, curves, os.path.join(out, "tspline_std.png"), (times, kstd))
    return report


def _energy_frames(cfg: RunConfig):
    grid = cfg.problem.get("grid")
    grid = None if grid is None else Grid2(*grid)
    out = []
    for f in cfg.problem["frames"]:
        out.append(load_keyframe(cfg, {"file": f} if isinstance(f, str) else f, grid))
    return out


def energy_report(measures, bc="natural", delta=0.0, eps=None):
    """All discrete energies of a tuple, as written to ``energies.json``."""
    if isinstance(measures[0], DiscreteMeasure):
        backend = spl.SinkhornBackend(eps=eps if eps is not None else 1e-3)
    else:
        backend = spl.get_backend(None, measures[0])
    E = spl.discrete_path_energy(measures, backend, bc)
    F = spl.discrete_spline_energy(measures, backend, bc)
    rep = {
        "total": F.total + delta * E.total,
        "spline_energy": F.total,
        "path_energy": E.total,
        "spline_terms": [float(v) for v in F.terms],
        "path_terms": [float(v) for v in E.terms],
        "backend": backend.name,
        "K": len(measures) - 1,
        "delta": delta,
        "eps": eps if isinstance(measures[0], DiscreteMeasure) else None,
    }
    if backend.has_generalized:
        rep["gen_spline_energy"] = spl.discrete_gen_spline_energy(measures, backend, bc).total
    rep["polarization_spline_energy"] = spl.polarization_spline_energy(measures, backend, bc).total
    return rep


def run_energy(cfg: RunConfig, out):
    measures = _energy_frames(cfg)
    rep = energy_report(measures, cfg.problem.get("bc", "natural"), float(cfg.problem.get("delta", 0.0)),
                        cfg.problem.get("eps"))
    _write_json(os.path.join(out, "energies.json"), rep)
    if cfg.output.get("summary", True) and not isinstance(measures[0], Atoms):
        _write_rows(os.path.join(out, "summary.csv"), summary_rows(measures, len(measures) - 1))
    return rep


def run_extend(cfg: RunConfig, out):
    knots = np.asarray(cfg.problem["knots"], dtype=float)
    K = len(knots) - 1
    eta = temporal_extension(knots)
    n = int(cfg.problem.get("samples", 201))
    t = np.linspace(0, 1, n)
    vals = eta(t).reshape(n, -1)
    write_csv(os.path.join(out, "extension.csv"), np.column_stack([t, vals]))
    s, p = discrete_euclidean_energies(knots, K)
    rep = {
        "K": K,
        "continuous_spline_energy": eta.acceleration_energy(),
        "continuous_path_energy": eta.velocity_energy(),
        "discrete_spline_energy": float(4 * K**3 * s.sum()),
        "discrete_path_energy": float(K * p.sum()),
    }
    _write_json(os.path.join(out, "energies.json"), rep)
    if _figures_on(cfg):
        from . import plotting

        curves = {f"eta_{i}": vals[:, i] for i in range(vals.shape[1])}
        kt = np.arange(K + 1) / K
        plotting.plot_std_curves(t, curves, os.path.join(out, "extension.png"),
                                 (kt, knots.reshape(K + 1, -1)[:, 0]), ylabel="value")
    return rep


RUNNERS = {
    "grid": run_grid,
    "gaussian": run_gaussian,
    "pointcloud": run_pointcloud,
    "tspline": run_tspline,
    "energy": run_energy,
    "extend": run_extend,
}


# --------------------------------------------------------------------------
# Commands


def run(config_path, mode=None):
    """Run a configuration; returns the process exit status."""
    try:
        cfg = load_run_config(config_path)
        if mode is not None and cfg.mode != mode:
            raise ConfigError("mode", f"expected mode {mode!r} for this command, got {cfg.mode!r}")
        out = cfg.out_dir
        os.makedirs(out, exist_ok=True)
        runner = RUNNERS[cfg.mode]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = runner(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WSplineError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if isinstance(result, dict) and "total" in result:
        print(f"total={result['total']:.12g}")
    print(f"outputs written to {out}")
    return 0


def validate(config_path):
    """List every problem of a configuration without running it."""
    try:
        raw, base = read_config(config_path)
    except ConfigError as exc:
        return [(exc.key, str(exc).split(": ", 1)[-1])]
    problems = validate_raw(raw, base)
    if problems:
        return problems
    # also build the problem (loads files, checks pins) when everything parsed
    try:
        cfg = load_run_config(config_path)
        if cfg.mode in ("grid", "pointcloud"):
            build_problem(cfg)
    except (ConfigError, WSplineError, ValueError) as exc:
        key = getattr(exc, "key", "problem")
        return [(key, str(exc).split(": ", 1)[-1])]
    return []


def oracle(seed=0, n_instances=10):
    """Cross-check the exact solvers against each other and Sinkhorn."""
    from .ot_exact import wasserstein2_1d, wasserstein2_exact_small
    from .sinkhorn import sinkhorn_distance

    rng = np.random.default_rng(seed)
    ok = True
    print("instance,lp,quantile,sinkhorn,eps")
    for i in range(n_instances):
        n, m = rng.integers(2, 6, size=2)
        mu = Atoms(rng.random((n, 1)), rng.random(n) + 0.1)
        nu = Atoms(rng.random((m, 1)), rng.random(m) + 0.1)
        lp, _ = wasserstein2_exact_small(mu, nu)
        q = wasserstein2_1d(mu, nu)
        pts = np.concatenate([mu.points, nu.points])
        eps = 1e-3 * float(np.ptp(pts)) ** 2
        sk, _ = sinkhorn_distance(mu, nu, eps)
        print(f"{i},{lp:.10g},{q:.10g},{sk:.10g},{eps:.3g}")
        tol = max(1e-3, 3 * eps * np.log(max(n, m)))
        ok &= abs(lp - q) <= 1e-10 and abs(sk - lp) <= tol
    print("oracle agreement:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="wspline", description="Spline interpolation of probability measures.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a JSON configuration")
    p.add_argument("config")
    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("config")
    p = sub.add_parser("oracle", help="cross-check exact solvers and Sinkhorn on random instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=10)
    for mode in ("gaussian", "tspline"):
        p = sub.add_parser(mode, help=f"run a {mode}-mode configuration")
        p.add_argument("config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        return run(args.config)
    if args.command == "validate":
        problems = validate(args.config)
        for key, msg in problems:
            print(f"{key}: {msg}")
        if not problems:
            print("OK")
        return EXIT_CONFIG if problems else 0
    if args.command == "oracle":
        return oracle(args.seed, args.instances)
    return run(args.config, mode=args.command)


if __name__ == "__main__":
    sys.exit(main())
