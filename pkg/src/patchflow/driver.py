"""Time stepping for the two projection schemes, trajectories and their storage."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .field_grid import (
    EPS_CLIP,
    Grid2D,
    ScalarField,
    gradient,
    integrate,
    lp_norm,
    read_snapshot,
    write_snapshot,
)
from .geometry import support_radius
from .nutrient import (
    FarFieldError,
    NutrientConfig,
    far_field_guard,
    scheme1_nutrient_step,
    scheme2_interval_solve,
)
from .projection import ProjectionConfig, project

SERIES_HEADER = ("t", "mass", "max_rho", "p_l2", "grad_p_l2", "support_radius", "n_min")
_SNAP = re.compile(r"snap_(\d+)_(rho|n|p)\.tpf$")


class ConfigError(ValueError):
    """Invalid run configuration."""


class TrajectoryError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    rho: ScalarField
    n: ScalarField
    p: ScalarField
    step_index: int
    rho_prev: ScalarField | None = None  # density driving the next interval (scheme II)
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True


@dataclass(frozen=True)
class RunConfig:
    grid: Grid2D
    tau: float
    T: float
    scheme: str = "I"
    projection: ProjectionConfig | None = None
    nutrient: NutrientConfig = field(default_factory=NutrientConfig)
    initial_density: str = "disk:0.2"
    initial_nutrient: float | str = 1.0
    snapshot_every: int = 1
    seed: int = 0
    b: float = 0.0
    name: str = "run"
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.T >= self.tau * (1 - 1e-12):
            raise ConfigError("T must be at least tau")
        if self.scheme not in ("I", "II"):
            raise ConfigError(f"scheme must be I or II, got {self.scheme!r}")
        if self.b != 0:
            raise ConfigError("only the model without death term (b = 0) is supported")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be at least 1")
        if self.projection is None:
            object.__setattr__(self, "projection", ProjectionConfig(tau=self.tau))
        elif self.projection.tau != self.tau:
            object.__setattr__(self, "projection", replace(self.projection, tau=self.tau))

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.tau - 1e-9))


# ---------------------------------------------------------------------------
# initial data


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def rasterize_density(spec: str, grid: Grid2D) -> ScalarField:
    """Binary initial density from ``disk:r[@x,y]``, ``annulus:r1,r2[@x,y]``,
    ``disks:x,y,r;x,y,r;...`` or ``file:<path>``."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip()
    if kind == "file":
        with open(arg.strip(), "rb") as fh:
            f, _, _ = read_snapshot(fh, origin=grid.origin)
        if f.grid != grid:
            raise ConfigError(f"snapshot grid {f.grid} does not match the configured grid")
        return f
    shape, _, at = arg.partition("@")
    center = tuple(_parse_floats(at)) if at else (0.0, 0.0)
    try:
        if kind == "disk":
            (r,) = _parse_floats(shape)
            bits = grid.wrapped_distance(center) < r
        elif kind == "annulus":
            r1, r2 = _parse_floats(shape)
            d = grid.wrapped_distance(center)
            bits = (d >= r1) & (d < r2)
        elif kind == "disks":
            bits = np.zeros(grid.shape, dtype=bool)
            for item in shape.split(";"):
                x, y, r = _parse_floats(item)
                bits |= grid.wrapped_distance((x, y)) < r
        else:
            raise ConfigError(f"unknown initial density kind {kind!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed initial density {spec!r}") from exc
    return ScalarField(grid, bits.astype(np.float64))


def initial_nutrient(spec, grid: Grid2D) -> ScalarField:
    if isinstance(spec, str) and spec.startswith("file:"):
        with open(spec[5:].strip(), "rb") as fh:
            f, _, _ = read_snapshot(fh, origin=grid.origin)
        if f.grid != grid:
            raise ConfigError("nutrient snapshot grid does not match the configured grid")
        return f
    return ScalarField.constant(grid, float(spec))


def growth_radius_bound(r0: float, n_sup: float, t: float, d: int = 2) -> float:
    """Support radius bound ``r0 * exp(t * n_sup / d)`` for the growing patch."""
    return r0 * math.exp(t * n_sup / d)


def check_box(cfg: RunConfig, rho0: ScalarField, n0: ScalarField) -> float:
    """Reject boxes too small to contain the support up to ``T``; returns the bound."""
    r0 = support_radius(rho0, cfg.center, 0.0) + 0.5 * cfg.grid.h
    bound = growth_radius_bound(r0, float(n0.values.max()), cfg.T)
    half = 0.5 * min(cfg.grid.lx, cfg.grid.ly)
    if half <= bound:
        raise ConfigError(
            f"box half-width {half:.4g} does not exceed the support radius bound "
            f"R(T) = {bound:.4g}"
        )
    return bound


def initial_state(cfg: RunConfig) -> SimState:
    rho0 = rasterize_density(cfg.initial_density, cfg.grid)
    n0 = initial_nutrient(cfg.initial_nutrient, cfg.grid)
    if rho0.values.min() < -EPS_CLIP or rho0.values.max() > 1 + EPS_CLIP:
        raise ConfigError("initial density must lie in [0, 1]")
    if n0.values.min() < 0:
        raise ConfigError("initial nutrient must be non-negative")
    check_box(cfg, rho0, n0)
    return SimState(0.0, rho0, n0, ScalarField.zeros(cfg.grid), 0, rho_prev=rho0)


# ---------------------------------------------------------------------------
# stepping


def step(state: SimState, cfg: RunConfig) -> SimState:
    """Advance one time step of the configured scheme."""
    tau = cfg.tau
    rho, n = state.rho, state.n
    mu = rho.with_values(rho.values * (1.0 + tau * n.values))
    res = project(mu, cfg.projection)
    if cfg.scheme == "I":
        n_next = scheme1_nutrient_step(n, res.rho_next, tau, cfg.nutrient)
    else:
        lagged = state.rho_prev if state.rho_prev is not None else rho
        n_next = scheme2_interval_solve(n, lagged, tau, cfg.nutrient)
    guard = far_field_guard(n_next, cfg.nutrient)
    if not guard.passed:
        raise FarFieldError(
            f"nutrient on the box boundary fell to {guard.minimum:.6g} "
            f"(threshold {guard.threshold:.6g}); enlarge the box or shorten T",
            guard.minimum,
        )
    k = state.step_index + 1
    return SimState(
        k * tau,
        res.rho_next,
        n_next,
        res.pressure,
        k,
        rho_prev=rho,
        iterations=res.iterations,
        residual=res.residual,
        converged=res.converged,
    )


def series_row(state: SimState, cfg: RunConfig) -> tuple:
    gx, gy = gradient(state.p)
    grad_l2 = math.sqrt(state.p.grid.cell_area * float(np.sum(gx.values**2 + gy.values**2)))
    return (
        state.t,
        integrate(state.rho),
        float(state.rho.values.max()),
        lp_norm(state.p, 2),
        grad_l2,
        support_radius(state.rho, cfg.center),
        float(state.n.values.min()),
    )


@dataclass
class Trajectory:
    cfg: RunConfig
    states: list = field(default_factory=list)
    series: list = field(default_factory=list)
    valid: bool = True
    error: str = ""

    @property
    def times(self):
        return [s.t for s in self.states]


def snapshot_steps(cfg: RunConfig) -> list[int]:
    steps = list(range(0, cfg.n_steps + 1, cfg.snapshot_every))
    if steps[-1] != cfg.n_steps:
        steps.append(cfg.n_steps)
    return steps


def run(cfg: RunConfig, out_dir=None, progress=None) -> Trajectory:
    """Run ``ceil(T / tau)`` steps; keep every ``snapshot_every``-th state.

    When ``out_dir`` is given the trajectory is written there as it is
    produced.  A failing step stops the run and marks the trajectory invalid.
    """
    traj = Trajectory(cfg)
    keep = set(snapshot_steps(cfg))
    writer = _TrajectoryWriter(out_dir, cfg) if out_dir is not None else None
    state = initial_state(cfg)
    try:
        _record(traj, state, cfg, keep, writer)
        for _ in range(cfg.n_steps):
            state = step(state, cfg)
            _record(traj, state, cfg, keep, writer)
            if progress is not None:
                progress(state)
    except Exception as exc:  # noqa: BLE001 - recorded, then re-raised
        traj.valid = False
        traj.error = f"{type(exc).__name__}: {exc}"
        if writer is not None:
            writer.close(traj)
        raise TrajectoryRunError(traj.error, traj) from exc
    if writer is not None:
        writer.close(traj)
    return traj


class TrajectoryRunError(RuntimeError):
    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def _record(traj, state, cfg, keep, writer):
    traj.series.append(series_row(state, cfg))
    if state.step_index in keep:
        traj.states.append(state)
        if writer is not None:
            writer.snapshot(state)
    if writer is not None:
        writer.series(traj.series[-1])


def interpolant(traj: Trajectory, t: float) -> SimState:
    """Stored state with the largest time not exceeding ``t``."""
    T = traj.states[-1].t
    if t < 0 or t > T * (1 + 1e-12) + 1e-15:
        raise ValueError(f"time {t} outside [0, {T}]")
    k = int(math.floor(t / traj.cfg.tau + 1e-9))
    best = traj.states[0]
    for s in traj.states:
        if s.step_index <= k:
            best = s
        else:
            break
    return best


# ---------------------------------------------------------------------------
# storage


def format_row(values) -> str:
    return ",".join(f"{float(v):.17g}" for v in values)


class _TrajectoryWriter:
    def __init__(self, out_dir, cfg):
        from .config import serialize_run_config  # local import: config depends on driver

        self.dir = os.fspath(out_dir)
        os.makedirs(self.dir, exist_ok=True)
        for name in os.listdir(self.dir):
            if _SNAP.match(name) or name in ("series.csv", "status.txt"):
                os.remove(os.path.join(self.dir, name))
        with open(os.path.join(self.dir, "run.cfg"), "w", encoding="ascii", newline="\n") as fh:
            fh.write(serialize_run_config(cfg))
        self.fh = open(os.path.join(self.dir, "series.csv"), "w", encoding="ascii", newline="\n")
        self.fh.write(",".join(SERIES_HEADER) + "\n")

    def snapshot(self, state):
        for role, f in (("rho", state.rho), ("n", state.n), ("p", state.p)):
            tag = {"rho": "density", "n": "nutrient", "p": "pressure"}[role]
            with open(os.path.join(self.dir, f"snap_{state.step_index:06d}_{role}.tpf"), "wb") as fh:
                write_snapshot(f, tag, state.t, fh)

    def series(self, row):
        self.fh.write(format_row(row) + "\n")

    def close(self, traj):
        self.fh.close()
        with open(os.path.join(self.dir, "status.txt"), "w", encoding="ascii", newline="\n") as fh:
            fh.write("valid\n" if traj.valid else f"invalid\n{traj.error}\n")


def load_trajectory(path) -> Trajectory:
    """Read a trajectory directory written by :func:`run`."""
    from .config import parse_run_config

    path = os.fspath(path)
    cfg_path = os.path.join(path, "run.cfg")
    if not os.path.exists(cfg_path):
        raise TrajectoryError(f"{path}: no run.cfg")
    with open(cfg_path, encoding="ascii") as fh:
        cfg = parse_run_config(fh.read())
    files = {}
    for name in os.listdir(path):
        m = _SNAP.match(name)
        if m:
            files.setdefault(int(m.group(1)), set()).add(m.group(2))
    expected = snapshot_steps(cfg)
    status_path = os.path.join(path, "status.txt")
    valid = True
    if os.path.exists(status_path):
        with open(status_path, encoding="ascii") as fh:
            valid = fh.readline().strip() == "valid"
    if valid:
        for k in expected:
            missing = {"rho", "n", "p"} - files.get(k, set())
            if missing:
                raise TrajectoryError(f"snapshot for step {k} is missing ({', '.join(sorted(missing))})")
        steps = expected
    else:
        steps = sorted(k for k, roles in files.items() if roles == {"rho", "n", "p"})
    traj = Trajectory(cfg, valid=valid)
    prev = (None, None)
    for k in steps:
        fields = {}
        for role in ("rho", "n", "p"):
            with open(os.path.join(path, f"snap_{k:06d}_{role}.tpf"), "rb") as fh:
                f, _, t = read_snapshot(fh, origin=cfg.grid.origin)
            fields[role] = f
        # the lagged density is only known when the previous step was stored
        lagged = fields["rho"] if k == 0 else (prev[1] if prev[0] == k - 1 else None)
        traj.states.append(SimState(t, fields["rho"], fields["n"], fields["p"], k, rho_prev=lagged))
        prev = (k, fields["rho"])
    series_path = os.path.join(path, "series.csv")
    if os.path.exists(series_path):
        with open(series_path, encoding="ascii") as fh:
            next(fh)
            traj.series = [tuple(float(v) for v in line.split(",")) for line in fh if line.strip()]
    return traj
