"""Command-line entry point: ``patchflow simulate|sweep|invariants|oracle-test``."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import diagnostics
from .config import parse_config
from .driver import ConfigError, TrajectoryError, TrajectoryRunError, load_trajectory, run
from .field_grid import SnapshotError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _err(msg):
    print(f"patchflow: {msg}", file=sys.stderr)


def _load_experiment(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _write_text(path, text):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    exp = _load_experiment(args.config)
    out = os.path.join(exp.output, exp.run.name)
    traj = run(exp.run, out)
    bad = sum(not s.converged for s in traj.states)
    if bad:
        _err(f"warning: {bad} stored steps have an unconverged projection")
    print(out)
    return EXIT_OK


def _d_label(D):
    return f"D_{D!r}"


def _sweep_job(job):
    cfg, out = job
    try:
        run(cfg, out)
    except TrajectoryRunError as exc:
        return str(exc)
    return None


def _workers(default):
    env = os.environ.get("PATCHFLOW_WORKERS")
    if env is None:
        return default
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"PATCHFLOW_WORKERS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("PATCHFLOW_WORKERS must be at least 1")
    return n


def cmd_sweep(args) -> int:
    exp = _load_experiment(args.config)
    if exp.sweep is None:
        raise ConfigError("sweep.D_values is required for a sweep")
    workers = _workers(exp.sweep.workers)
    root = os.path.join(exp.output, exp.run.name)
    values = list(dict.fromkeys((0.0,) + exp.sweep.D_values))  # reference first, no duplicates
    jobs = []
    for D in values:
        nutrient = dataclasses.replace(exp.run.nutrient, D=D)
        cfg = dataclasses.replace(exp.run, nutrient=nutrient, name=f"{exp.run.name}-{_d_label(D)}")
        jobs.append((cfg, os.path.join(root, _d_label(D))))
    if workers == 1:
        errors = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(_sweep_job, jobs))
    failed = [(D, e) for D, e in zip(values, errors) if e is not None]
    for D, e in failed:
        _err(f"run with D={D!r} failed: {e}")
    if failed:
        return EXIT_FAIL
    trajs = {D: load_trajectory(out) for D, (_, out) in zip(values, jobs)}
    runs = [(D, trajs[D]) for D in exp.sweep.D_values]
    with_ref = [(0.0, trajs[0.0])] + [r for r in runs if r[0] != 0.0]
    tol = exp.run.projection.tol_orth
    h_rows = diagnostics.hausdorff_convergence_report(with_ref, exp.sweep.times, tol)
    h1_rows = diagnostics.h1_convergence_report(with_ref)
    h_rows = _order_rows(h_rows, exp.sweep.D_values, exp.sweep.times)
    h1_rows = [next(r for r in h1_rows if r.D == D) for D in exp.sweep.D_values]
    _write_text(os.path.join(root, "hausdorff.csv"), diagnostics.hausdorff_csv(h_rows))
    _write_text(os.path.join(root, "h1.csv"), diagnostics.h1_csv(h1_rows))
    print(root)
    return EXIT_OK


def _order_rows(rows, D_values, times):
    out = []
    for D in D_values:
        for t in times:
            out.append(next(r for r in rows if r.D == D and r.t == t))
    return out


def cmd_invariants(args) -> int:
    traj = load_trajectory(args.trajectory)
    if not traj.valid:
        _err(f"trajectory is marked invalid; checking the {len(traj.states)} complete steps")
    report = diagnostics.check_run(traj)
    _write_text(os.path.join(args.trajectory, "invariants.csv"), report.to_csv())
    failures = report.failures()
    for e in failures:
        _err(f"failed: {e.name} measured={e.measured:.17g} bound={e.bound:.17g} tolerance={e.tolerance:.17g}")
    return EXIT_OK if (traj.valid and not failures) else EXIT_FAIL


def cmd_oracle_test(args) -> int:
    summary = diagnostics.oracle_equivalence(args.seed, args.count, args.inject_c_transform_scale)
    print(summary.line())
    return EXIT_OK if summary.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchflow", description="Congested tumor-growth simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one simulation and write its trajectory")
    p.add_argument("config")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("sweep", help="run a diffusion sweep plus the D = 0 reference")
    p.add_argument("config")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("invariants", help="check a stored trajectory")
    p.add_argument("trajectory")
    p.set_defaults(func=cmd_invariants)
    p = sub.add_parser("oracle-test", help="randomized oracle comparisons")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--inject-c-transform-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_oracle_test)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except (TrajectoryError, TrajectoryRunError, SnapshotError, OSError, RuntimeError, ValueError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
