"""Executable checks on trajectories, and an independent 1-D projection oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .driver import Trajectory, interpolant
from .field_grid import EPS_CLIP, Grid2D, ScalarField, gradient, integrate, total_variation
from .nutrient import far_field_guard
from .projection import ProjectionConfig, c_transform, project
from .geometry import (
    extract_boundary,
    extract_patch,
    hausdorff_distance,
    pressure_threshold,
    support_radius,
)

REPORT_HEADER = ("name", "measured", "bound", "tolerance", "pass", "anchor")


@dataclass(frozen=True)
class Entry:
    name: str
    measured: float
    bound: float
    tolerance: float
    passed: bool | None  # None marks an informational trend entry
    anchor: str
    kind: str = "upper"


def _entry(name, measured, bound, tolerance, anchor, kind="upper"):
    if kind == "upper":
        ok = measured <= bound + tolerance
    elif kind == "lower":
        ok = measured >= bound - tolerance
    elif kind == "equal":
        ok = abs(measured - bound) <= tolerance
    elif kind == "info":
        ok = None
    else:
        raise ValueError(kind)
    return Entry(name, float(measured), float(bound), float(tolerance), ok, anchor, kind)


@dataclass
class InvariantReport:
    entries: list = field(default_factory=list)

    def add(self, *args, **kwargs):
        self.entries.append(_entry(*args, **kwargs))

    def __getitem__(self, name) -> Entry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def checks(self):
        return [e for e in self.entries if e.passed is not None]

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.checks)

    def failures(self):
        return [e for e in self.checks if not e.passed]

    def to_csv(self) -> str:
        lines = [",".join(REPORT_HEADER)]
        for e in self.entries:
            flag = "info" if e.passed is None else ("true" if e.passed else "false")
            lines.append(f"{e.name},{e.measured:.17g},{e.bound:.17g},{e.tolerance:.17g},{flag},{e.anchor}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# trajectory checks


def _nominal_radius(traj: Trajectory) -> float:
    cfg = traj.cfg
    kind, _, arg = cfg.initial_density.partition(":")
    shape, _, at = arg.partition("@")
    if kind == "disk":
        center = tuple(float(v) for v in at.split(",")) if at else (0.0, 0.0)
        if np.allclose(center, cfg.center):
            return float(shape)
    return support_radius(traj.states[0].rho, cfg.center, 0.0) + cfg.grid.h / math.sqrt(2.0)


def _grad_sq(f):
    gx, gy = gradient(f)
    return f.grid.cell_area * float(np.sum(gx.values**2 + gy.values**2))


def check_run(traj: Trajectory, cfg=None, tol_orth=None) -> InvariantReport:
    """Evaluate the growth, regularity and nutrient bounds along a trajectory."""
    cfg = cfg or traj.cfg
    states = traj.states
    rep = InvariantReport()
    s0 = states[0]
    n_sup = float(s0.n.values.max())
    lam = float(s0.n.values.min())
    m0 = integrate(s0.rho)
    tau, h = cfg.tau, cfg.grid.h
    tol_orth = cfg.projection.tol_orth if tol_orth is None else tol_orth
    masses = np.array([integrate(s.rho) for s in states])
    times = np.array([s.t for s in states])

    # total mass against exponential growth
    bound_t = np.exp(times * n_sup) * m0
    ratio = np.where(bound_t > 0, masses / np.where(bound_t > 0, bound_t, 1.0), 0.0)
    rep.add("mass_bound", ratio.max(), 1.0, 0.02, "mass grows at most like exp(t*sup n0)")

    # support radius against the radial growth bound
    r0 = _nominal_radius(traj)
    excess = max(
        support_radius(s.rho, cfg.center) - r0 * math.exp(s.t * n_sup / 2.0) for s in states
    )
    rep.add("support_bound", excess, 2.0 * h, 0.0, "support stays inside the growing ball")

    # time equicontinuity in L1 over all snapshot pairs
    sup_mass = masses.max()
    worst = 0.0
    if sup_mass > 0 and n_sup > 0:
        vals = [s.rho.values for s in states]
        for i in range(len(states)):
            for j in range(i + 1, len(states)):
                s = times[j] - times[i]
                lhs = h * h * float(np.abs(vals[j] - vals[i]).sum())
                rhs = (s + 4.0 * tau) * n_sup * sup_mass
                worst = max(worst, lhs / rhs)
    rep.add("equicontinuity", worst, 1.0, 0.0, "L1 modulus of continuity in time")

    # nutrient lower bound
    if lam > 0:
        low = min(float(s.n.values.min()) / (math.exp(-s.t) * lam) for s in states)
        rep.add("nutrient_lower_bound", low, 1.0, 1e-3, "nutrient stays above exp(-t)*inf n0", "lower")
    nmax = max(float(s.n.values.max()) for s in states)
    rep.add("nutrient_max_principle", nmax, n_sup, 1e-12 * max(n_sup, 1.0), "absorption only")

    # monotone expansion of the saturated set
    defect = 0.0
    for a, b in zip(states, states[1:]):
        sa = a.rho.values >= 1.0 - 1e-6
        lost = sa & (b.rho.values < 1.0 - 1e-6)
        mass_b = integrate(b.rho)
        if mass_b > 0:
            defect = max(defect, h * h * float((1.0 - b.rho.values[lost]).sum()) / mass_b)
    rep.add("monotone_expansion", defect, 1e-6, 0.0, "the saturated set only grows")

    # box constraint and complementarity
    rmax = max(float(s.rho.values.max()) for s in states)
    rmin = min(float(s.rho.values.min()) for s in states)
    rep.add("density_upper", rmax, 1.0, EPS_CLIP, "congestion constraint")
    rep.add("density_lower", rmin, 0.0, EPS_CLIP, "non-negative density", "lower")
    comp = max(float(np.max(s.p.values * (1.0 - s.rho.values))) for s in states)
    rep.add("complementarity", comp, 0.0, tol_orth, "pressure lives on the saturated set")
    pmin = min(float(s.p.values.min()) for s in states)
    rep.add("pressure_sign", pmin, 0.0, 0.0, "non-negative pressure", "lower")

    # trend entries: norms divided by the growth factor; bounded ratios expected
    expo = (2 + 4) / (2 * 2)
    later = [s for s in states if s.step_index > 0]
    if later and m0 > 0:
        tp = [math.sqrt(s.p.grid.cell_area * float(np.sum(s.p.values**2))) / (math.exp(s.t * n_sup) * m0) ** expo for s in later]
        tg = [math.sqrt(_grad_sq(s.p)) / (math.exp(s.t * n_sup) * m0) ** expo for s in later]
        tv = [total_variation(s.rho) for s in states]
        rep.add("trend_pressure_l2", max(tp), min(tp), 0.0, "pressure L2 over growth factor", "info")
        rep.add("trend_grad_pressure_l2", max(tg), min(tg), 0.0, "pressure gradient L2 over growth factor", "info")
        rep.add("trend_total_variation", max(tv), tv[0], 0.0, "density total variation", "info")
        last = later[-1]
        theta = pressure_threshold(last.p, tol_orth)
        mask = extract_patch(last.p, theta).bits
        band = mask & ~(
            np.roll(mask, 1, 0) & np.roll(mask, -1, 0) & np.roll(mask, 1, 1) & np.roll(mask, -1, 1)
        )
        if band.any():
            gx, gy = gradient(last.p)
            kappa = float(np.hypot(gx.values, gy.values)[band].min())
            rep.add("boundary_gradient_min", kappa, 0.0, 0.0, "inf of |grad p| on the boundary band", "info")

    guard = far_field_guard(states[-1].n, cfg.nutrient)
    rep.add("far_field_guard", guard.minimum, guard.threshold, 0.0, "nutrient on the box edge", "lower")
    return rep


# ---------------------------------------------------------------------------
# 1-D oracle


def oracle_project_1d(mu, h: float, levels_per_cell: int = 256) -> np.ndarray:
    """Project a 1-D density onto ``{0 <= rho <= 1}`` in the quadratic transport cost.

    In one dimension the cost is the L2 distance of quantile functions and
    the bound ``rho <= 1`` says the quantile has slope at least one.  So the
    projection is the isotonic regression of ``Q(m) - m`` followed by adding
    ``m`` back.  The quantile is sampled at equal-mass levels; mass outside
    the pooled blocks is copied from ``mu`` exactly.  The vector must have
    enough empty room at both ends to hold the result.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1 or mu.min() < 0 or not np.all(np.isfinite(mu)):
        raise ValueError("mu must be a finite non-negative vector")
    n = mu.size
    edges = h * np.arange(n + 1)
    cm = np.concatenate([[0.0], np.cumsum(mu * h)])
    total = cm[-1]
    if not total > 0:
        raise ValueError("oracle needs positive total mass")
    if mu.max() <= 1.0:
        return mu.copy()
    K = levels_per_cell * n
    dm = total / K
    m = (np.arange(K) + 0.5) * dm
    pos = np.flatnonzero(mu > 0)
    k = np.clip(np.searchsorted(cm[pos], m, side="right") - 1, 0, pos.size - 1)
    cell = pos[k]
    q = edges[cell] + (m - cm[cell]) / mu[cell]
    g = q - m
    gp = kernels.pava(np.ascontiguousarray(g), np.ones(K))
    # pooled blocks: maximal runs of equal fitted values longer than one sample
    change = np.flatnonzero(np.diff(gp) != 0.0) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change, [K]])
    F = np.interp(edges, edges, cm)
    for a, b in zip(starts, stops):
        if b - a < 2 and gp[a] == g[a]:
            continue
        lo_m, hi_m = a * dm, b * dm
        x0 = gp[a] + lo_m
        x1 = gp[a] + hi_m
        inside = (edges >= x0) & (edges <= x1)
        F[inside] = lo_m + (edges[inside] - x0)
        # outside the block the original cdf is clamped to the block's mass range
        left = edges < x0
        right = edges > x1
        F[left] = np.minimum(F[left], lo_m)
        F[right] = np.maximum(F[right], hi_m)
    if F[0] > 1e-12 * total or abs(F[-1] - total) > 1e-12 * total:
        raise ValueError("projection does not fit inside the vector; pad mu with zeros")
    F = np.maximum.accumulate(F)
    return np.diff(F) / h


# ---------------------------------------------------------------------------
# convergence reports


def _check_compatible(runs):
    base = runs[0][1].cfg
    for D, traj in runs:
        c = traj.cfg
        if (
            c.grid != base.grid
            or c.tau != base.tau
            or c.T != base.T
            or c.initial_density != base.initial_density
            or c.initial_nutrient != base.initial_nutrient
        ):
            raise ValueError(f"run with D={D} does not share grid, tau, T and initial data with the others")
        if [s.step_index for s in traj.states] != [s.step_index for s in runs[0][1].states]:
            raise ValueError(f"run with D={D} stored different snapshot steps")


def _reference(runs):
    for D, traj in runs:
        if D == 0:
            return traj
    raise ValueError("the run list must include D = 0")


def _interval_weights(traj):
    """Durations attached to stored states under the right-continuous convention.

    The state stored at step ``k`` (k >= 1) represents the interval that
    ends at its time and starts at the previous stored time.
    """
    ts = [s.t for s in traj.states]
    return [(i, ts[i] - ts[i - 1]) for i in range(1, len(ts))]


@dataclass(frozen=True)
class H1Row:
    D: float
    t: float
    grad_sq: float
    grad_diff_sq: float
    l2_diff_sq: float
    cross: float
    ref_grad_sq: float


def h1_convergence_report(runs) -> list[H1Row]:
    """Space-time pressure norms of each run and of its difference to D = 0."""
    runs = list(runs)
    _check_compatible(runs)
    ref = _reference(runs)
    rows = []
    for D, traj in runs:
        a = b = c = diff = l2 = 0.0
        for i, dt in _interval_weights(traj):
            p = traj.states[i].p
            q = ref.states[i].p
            px, py = gradient(p)
            qx, qy = gradient(q)
            w = dt * p.grid.cell_area
            a += w * float(np.sum(px.values**2 + py.values**2))
            b += w * float(np.sum(px.values * qx.values + py.values * qy.values))
            c += w * float(np.sum(qx.values**2 + qy.values**2))
            diff += w * float(np.sum((px.values - qx.values) ** 2 + (py.values - qy.values) ** 2))
            l2 += w * float(np.sum((p.values - q.values) ** 2))
        rows.append(H1Row(D, traj.states[-1].t, a, diff, l2, b, c))
    return rows


def h1_csv(rows) -> str:
    out = ["D,t,grad_sq,grad_diff_sq,l2_diff_sq"]
    for r in rows:
        out.append(f"{r.D:.17g},{r.t:.17g},{r.grad_sq:.17g},{r.grad_diff_sq:.17g},{r.l2_diff_sq:.17g}")
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class HausdorffRow:
    D: float
    t: float
    value: float


def patch_boundary_at(traj, t, tol_orth):
    state = interpolant(traj, t)
    theta = pressure_threshold(state.p, tol_orth)
    return extract_boundary(extract_patch(state.p, theta))


def hausdorff_convergence_report(runs, times, tol_orth: float = 1e-6) -> list[HausdorffRow]:
    """Hausdorff distance between each run's pressure-patch boundary and the D = 0 one."""
    runs = list(runs)
    _check_compatible(runs)
    ref = _reference(runs)
    rows = []
    for D, traj in runs:
        for t in times:
            a = patch_boundary_at(traj, t, tol_orth)
            b = patch_boundary_at(ref, t, tol_orth)
            if len(a) == 0 or len(b) == 0:
                raise ValueError(f"empty patch boundary for D={D} at t={t}")
            rows.append(HausdorffRow(D, t, hausdorff_distance(a, b)))
    return rows


def hausdorff_csv(rows) -> str:
    out = ["D,t,value"]
    out += [f"{r.D:.17g},{r.t:.17g},{r.value:.17g}" for r in rows]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# weak-form residuals


@dataclass(frozen=True)
class TestFunction:
    """``psi(x, t) = b(x - x0) * b(y - y0) * cos(omega * t)`` with ``b(s) = cos(pi s / (2a))**4`` on ``|s| < a``."""

    __test__ = False  # not a pytest class despite the name

    center: tuple = (0.0, 0.0)
    radius: float = 0.6
    omega: float = 1.0

    def space(self, X, Y):
        """Return ``(phi, laplacian(phi))`` at the given points."""
        a = self.radius
        k = math.pi / (2 * a)

        def bump(s):
            inside = np.abs(s) < a
            c = np.cos(k * s)
            sn = np.sin(k * s)
            f = np.where(inside, c**4, 0.0)
            # d2/ds2 cos^4 = 12 k^2 c^2 s^2 - 4 k^2 c^4
            f2 = np.where(inside, 12 * k * k * c * c * sn * sn - 4 * k * k * c**4, 0.0)
            return f, f2

        bx, bx2 = bump(X - self.center[0])
        by, by2 = bump(Y - self.center[1])
        return bx * by, bx2 * by + bx * by2

    def time(self, t):
        return math.cos(self.omega * t)

    def time_integral(self, t0, t1):
        w = self.omega
        if w == 0:
            return t1 - t0
        return (math.sin(w * t1) - math.sin(w * t0)) / w


def weak_form_residual(traj: Trajectory, cfg=None, psi: TestFunction | None = None):
    """Residuals of the weak density and nutrient equations against ``psi``.

    Fields are piecewise constant in time (the stored state at the end of
    each interval covers that interval); time integrals of ``psi`` are exact.
    Terms with gradients are moved onto ``psi`` by parts, using the grid
    Laplacian of the sampled ``psi``.  The terminal-time
    terms are kept so that ``psi`` need not vanish at ``T``; the default
    time factor ``cos(pi t / (2T))`` does vanish there.
    """
    cfg = cfg or traj.cfg
    psi = psi or TestFunction(omega=math.pi / (2.0 * cfg.T))
    g = cfg.grid
    half = 0.5 * min(g.lx, g.ly)
    if max(abs(psi.center[0]), abs(psi.center[1])) + psi.radius >= half - g.h:
        raise ValueError("test function support touches the domain boundary")
    X, Y = g.coords()
    phi = psi.space(X, Y)[0]
    # the 5-point Laplacian sums to zero on the torus, so constants cancel exactly
    lap = (np.roll(phi, 1, 0) + np.roll(phi, -1, 0) + np.roll(phi, 1, 1) + np.roll(phi, -1, 1) - 4.0 * phi) / g.h**2
    D = cfg.nutrient.D
    s0, sT = traj.states[0], traj.states[-1]
    T = sT.t
    hh = g.cell_area

    lhs_r = lhs_n = src = 0.0
    for i, dt in _interval_weights(traj):
        st = traj.states[i]
        t1 = st.t
        t0 = t1 - dt
        tint = psi.time_integral(t0, t1)
        dpsi = psi.time(t1) - psi.time(t0)
        rho, n, p = st.rho.values, st.n.values, st.p.values
        lhs_r += hh * (-float(np.sum(lap * p)) * tint - float(np.sum(phi * rho)) * dpsi)
        lhs_n += hh * (-D * float(np.sum(lap * n)) * tint - float(np.sum(phi * n)) * dpsi)
        src += hh * float(np.sum(phi * n * rho)) * tint
    rhs_r = hh * (float(np.sum(phi * s0.rho.values)) * psi.time(0.0) - float(np.sum(phi * sT.rho.values)) * psi.time(T)) + src
    rhs_n = hh * (float(np.sum(phi * s0.n.values)) * psi.time(0.0) - float(np.sum(phi * sT.n.values)) * psi.time(T)) - src
    return abs(lhs_r - rhs_r), abs(lhs_n - rhs_n)


# ---------------------------------------------------------------------------
# admissible test functions and randomized oracle checks


@dataclass(frozen=True, eq=False)
class AdmissibleTestFunction:
    """A non-negative field supported where the host density saturates."""

    xi: ScalarField
    host: ScalarField
    tol_orth: float = 1e-6

    def __post_init__(self):
        if self.xi.grid != self.host.grid:
            raise ValueError("test function and host density live on different grids")
        x = self.xi.values
        if x.min() < -self.tol_orth:
            raise ValueError("test function must be non-negative")
        leak = float(np.abs(x * (1.0 - self.host.values)).max())
        if leak > self.tol_orth:
            raise ValueError(f"test function leaks off the saturated set (max |xi(1-rho)| = {leak:.3e})")


def random_jko_instance(rng, n: int = 128, rows: int = 8):
    """A y-constant ``mu = rho (1 + tau n)`` as produced by one growth step.

    ``rho`` is a union of saturated patches plus one partial-density
    shoulder; the nutrient is a positive smooth profile.
    """
    grid = Grid2D(n, rows, 2.0 / n, (-1.0 + 1.0 / n, -1.0 + 1.0 / n))
    x = grid.axes()[0]
    tau = 1.0 / 256
    rho = np.zeros(n)
    for _ in range(rng.integers(1, 3)):
        c, w = rng.uniform(-0.5, 0.5), rng.uniform(0.05, 0.25)
        rho = np.maximum(rho, np.where(np.abs(x - c) < w, 1.0, 0.0))
    c, w = rng.uniform(-0.5, 0.5), rng.uniform(0.05, 0.2)
    rho = np.maximum(rho, np.where(np.abs(x - c) < w, rng.uniform(0.2, 0.9), 0.0))
    nut = rng.uniform(0.5, 2.0) * (1.0 + 0.5 * np.sin(rng.uniform(1, 6) * x + rng.uniform(0, 6)))
    return grid, tau, rho * (1.0 + tau * nut)


def brute_force_c_transform(p: np.ndarray, h: float, tau: float) -> np.ndarray:
    """O(N^2) periodic c-transform over grid nodes."""
    ny, nx = p.shape
    jj, ii = np.indices((ny, nx))
    out = np.empty_like(p)
    for j in range(ny):
        dy = np.abs(jj - j)
        dy = np.minimum(dy, ny - dy)
        for i in range(nx):
            dx = np.abs(ii - i)
            dx = np.minimum(dx, nx - dx)
            out[j, i] = np.min(p + (h * h) * (dx * dx + dy * dy) / (2.0 * tau))
    return out


@dataclass(frozen=True)
class OracleSummary:
    count: int
    worst_projection_l1: float
    worst_c_transform: float
    projection_tol: float = 1e-3
    c_transform_tol: float = 1e-12

    @property
    def passed(self) -> bool:
        return self.worst_projection_l1 <= self.projection_tol and self.worst_c_transform <= self.c_transform_tol

    def line(self) -> str:
        return (
            f"instances={self.count} worst_projection_l1={self.worst_projection_l1:.17g} "
            f"worst_c_transform={self.worst_c_transform:.17g}"
        )


def oracle_equivalence(seed: int, count: int, c_transform_scale: float = 1.0) -> OracleSummary:
    """Compare 2-D projection to the 1-D oracle and the c-transform to brute force.

    ``c_transform_scale`` perturbs the fast c-transform; it exists only so
    the test suite can check that the harness notices a broken kernel.
    """
    rng = np.random.default_rng(seed)
    worst_l1 = worst_ct = 0.0
    for _ in range(count):
        grid, tau, mu1 = random_jko_instance(rng)
        mu = ScalarField(grid, np.tile(mu1, (grid.ny, 1)))
        res = project(mu, ProjectionConfig(tau=tau))
        ref = oracle_project_1d(mu1, grid.h)
        l1 = grid.h * float(np.abs(res.rho_next.values - ref[None, :]).sum(axis=1).max())
        worst_l1 = max(worst_l1, l1)

        sg = Grid2D(64, 8, 1.0 / 64)
        p = rng.uniform(0.0, 1e-3, sg.shape) * (rng.uniform(size=sg.shape) < 0.7)
        fast = c_transform(ScalarField(sg, p), tau).values * c_transform_scale
        slow = brute_force_c_transform(p, sg.h, tau)
        worst_ct = max(worst_ct, float(np.abs(fast - slow).max()))
    return OracleSummary(count, worst_l1, worst_ct)
