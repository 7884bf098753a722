"""Plain ``key=value`` experiment configuration.

Keys are grouped by prefix (``grid.``, ``run.``, ``projection.``,
``nutrient.``, ``sweep.``).  ``#`` starts a comment.  Unknown or repeated
keys are errors.  Real values accept a fraction such as ``1/256``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .driver import ConfigError, RunConfig
from .field_grid import Grid2D
from .nutrient import NutrientConfig
from .projection import ProjectionConfig


def _real(text):
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _int(text):
    return int(text.strip())


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text):
    return text.strip()


def _reals(text):
    return tuple(_real(v) for v in text.split(",") if v.strip())


# key -> (parser, default); None default means derived or required
SCHEMA = {
    "grid.n": (_int, 128),
    "grid.half_width": (_real, 1.0),
    "run.name": (_str, "run"),
    "run.output": (_str, "run"),
    "run.tau": (_real, 1.0 / 256),
    "run.T": (_real, 0.5),
    "run.scheme": (_str, "I"),
    "run.initial_density": (_str, "disk:0.2"),
    "run.initial_nutrient": (_str, "1.5"),
    "run.snapshot_every": (_int, 1),
    "run.seed": (_int, 0),
    "run.b": (_real, 0.0),
    "run.center": (_reals, (0.0, 0.0)),
    "projection.tol_mass": (_real, 1e-8),
    "projection.tol_constraint": (_real, 1e-6),
    "projection.tol_orth": (_real, 1e-6),
    "projection.max_iterations": (_int, 500),
    "projection.step_size_initial": (_real, 1.0),
    "projection.preconditioner": (_str, "free-set-laplacian"),
    "projection.patience": (_int, 25),
    "projection.smoothing": (_real, 5e-3),
    "projection.strict": (_bool, False),
    "nutrient.D": (_real, 0.0),
    "nutrient.substeps": (_int, 4),
    "nutrient.far_field": (_real, None),
    "nutrient.boundary_guard_tol": (_real, 0.01),
    "sweep.D_values": (_reals, None),
    "sweep.times": (_reals, None),
    "sweep.workers": (_int, 1),
}

RUN_SECTIONS = ("grid.", "run.", "projection.", "nutrient.")


@dataclass(frozen=True)
class SweepConfig:
    D_values: tuple
    times: tuple
    workers: int = 1


@dataclass(frozen=True)
class Experiment:
    run: RunConfig
    output: str
    sweep: SweepConfig | None
    values: dict


def parse_pairs(text: str) -> dict:
    """Split config text into a ``{key: raw_value}`` dict."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        pairs[key] = value
    return pairs


def _typed(pairs: dict) -> dict:
    out = {}
    for key, (parse, default) in SCHEMA.items():
        if key in pairs:
            try:
                out[key] = parse(pairs[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {pairs[key]!r} ({exc})") from None
        else:
            out[key] = default
    return out


def _nutrient_value(raw):
    if raw.startswith("file:"):
        return raw
    try:
        return _real(raw)
    except ValueError:
        raise ConfigError(f"bad value for run.initial_nutrient: {raw!r}") from None


def build_run_config(v: dict) -> RunConfig:
    try:
        grid = Grid2D.box(v["grid.n"], v["grid.half_width"])
        n0 = _nutrient_value(v["run.initial_nutrient"])
        far = v["nutrient.far_field"]
        if far is None:
            if isinstance(n0, str):
                raise ConfigError("nutrient.far_field is required when the initial nutrient is a file")
            far = n0
        tau = v["run.tau"]
        projection = ProjectionConfig(
            tau=tau,
            tol_mass=v["projection.tol_mass"],
            tol_constraint=v["projection.tol_constraint"],
            tol_orth=v["projection.tol_orth"],
            max_iterations=v["projection.max_iterations"],
            step_size_initial=v["projection.step_size_initial"],
            preconditioner=v["projection.preconditioner"],
            patience=v["projection.patience"],
            smoothing=v["projection.smoothing"],
            strict=v["projection.strict"],
        )
        nutrient = NutrientConfig(
            D=v["nutrient.D"],
            substeps=v["nutrient.substeps"],
            far_field=far,
            boundary_guard_tol=v["nutrient.boundary_guard_tol"],
        )
        center = v["run.center"]
        if len(center) != 2:
            raise ConfigError("run.center needs two coordinates")
        return RunConfig(
            grid=grid,
            tau=tau,
            T=v["run.T"],
            scheme=v["run.scheme"],
            projection=projection,
            nutrient=nutrient,
            initial_density=v["run.initial_density"],
            initial_nutrient=n0,
            snapshot_every=v["run.snapshot_every"],
            seed=v["run.seed"],
            b=v["run.b"],
            name=v["run.name"],
            center=tuple(center),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str) -> Experiment:
    pairs = parse_pairs(text)
    v = _typed(pairs)
    run = build_run_config(v)
    sweep = None
    if v["sweep.D_values"] is not None:
        if not v["sweep.D_values"]:
            raise ConfigError("sweep.D_values must not be empty")
        if any(d < 0 for d in v["sweep.D_values"]):
            raise ConfigError("sweep.D_values must be non-negative")
        times = v["sweep.times"] if v["sweep.times"] is not None else (run.T,)
        if any(t < 0 or t > run.T for t in times):
            raise ConfigError("sweep.times must lie in [0, T]")
        if v["sweep.workers"] < 1:
            raise ConfigError("sweep.workers must be at least 1")
        sweep = SweepConfig(tuple(v["sweep.D_values"]), tuple(times), v["sweep.workers"])
    return Experiment(run, v["run.output"], sweep, v)


def parse_run_config(text: str) -> RunConfig:
    return parse_config(text).run


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(float(x)) for x in value)
    return str(value)


def _box_half_width(g: Grid2D) -> float:
    # 0.5*n*h can miss the stored origin by an ulp, so try the neighbouring floats
    hw = 0.5 * g.nx * g.h
    up = [math.nextafter(hw, math.inf)]
    down = [math.nextafter(hw, -math.inf)]
    up.append(math.nextafter(up[0], math.inf))
    down.append(math.nextafter(down[0], -math.inf))
    for cand in (hw, up[0], down[0], up[1], down[1]):
        if Grid2D.box(g.nx, cand) == g:
            return cand
    raise ConfigError("grid is not a box centered at the origin")


def run_values(cfg: RunConfig, output: str = "run") -> dict:
    p, nu, g = cfg.projection, cfg.nutrient, cfg.grid
    if g.nx != g.ny:
        raise ConfigError("only square grids can be serialized")
    n0 = cfg.initial_nutrient
    return {
        "grid.n": g.nx,
        "grid.half_width": _box_half_width(g),
        "run.name": cfg.name,
        "run.output": output,
        "run.tau": float(cfg.tau),
        "run.T": float(cfg.T),
        "run.scheme": cfg.scheme,
        "run.initial_density": cfg.initial_density,
        "run.initial_nutrient": n0 if isinstance(n0, str) else repr(float(n0)),
        "run.snapshot_every": cfg.snapshot_every,
        "run.seed": cfg.seed,
        "run.b": float(cfg.b),
        "run.center": tuple(cfg.center),
        "projection.tol_mass": float(p.tol_mass),
        "projection.tol_constraint": float(p.tol_constraint),
        "projection.tol_orth": float(p.tol_orth),
        "projection.max_iterations": p.max_iterations,
        "projection.step_size_initial": float(p.step_size_initial),
        "projection.preconditioner": p.preconditioner,
        "projection.patience": p.patience,
        "projection.smoothing": float(p.smoothing),
        "projection.strict": p.strict,
        "nutrient.D": float(nu.D),
        "nutrient.substeps": nu.substeps,
        "nutrient.far_field": float(nu.far_field),
        "nutrient.boundary_guard_tol": float(nu.boundary_guard_tol),
    }


def serialize(values: dict) -> str:
    lines = []
    for key in SCHEMA:
        if key in values and values[key] is not None:
            lines.append(f"{key}={_fmt(values[key])}")
    return "\n".join(lines) + "\n"


def serialize_run_config(cfg: RunConfig, output: str = "run") -> str:
    text = serialize(run_values(cfg, output))
    lag = "scheme II: the interval after step k is driven by the density of step k-1 (rho_0 first)"
    return f"# {lag}\n" + text if cfg.scheme == "II" else text


def serialize_experiment(exp: Experiment) -> str:
    values = run_values(exp.run, exp.output)
    if exp.sweep is not None:
        values["sweep.D_values"] = exp.sweep.D_values
        values["sweep.times"] = exp.sweep.times
        values["sweep.workers"] = exp.sweep.workers
    return serialize(values)
