"""Wasserstein projection onto densities bounded by one.

Given a source density ``mu`` the projection returns the density ``rho <= 1``
of equal mass closest to ``mu`` in the quadratic transport cost, together
with the pressure ``p >= 0`` that maximizes the dual problem

    J(p) = integral(p^c * mu) - integral(p),
    p^c(x) = inf_y p(y) + |x - y|**2 / (2 tau).

The solver runs projected ascent on ``J``.  Inside the ascent the infimum is
taken over the bilinear interpolant of ``p`` rather than over grid nodes
only.  With that choice the splat of ``mu`` along the minimizing map is the
exact gradient of ``J``, so the backtracking line search sees a consistent
objective.  The grid-node version is exposed as :func:`c_transform`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg

from . import kernels
from .field_grid import EPS_CLIP, ScalarField, gradient

PRECONDITIONERS = ("free-set-laplacian", "spectral-inverse-laplacian")
MAX_WIDENINGS = 3


class ProjectionError(RuntimeError):
    """The projection could not be carried out."""


class InfeasibleMassError(ProjectionError):
    pass


class NonConvergenceError(ProjectionError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DisplacementError(ProjectionError):
    pass


@dataclass(frozen=True)
class ProjectionConfig:
    tau: float
    tol_mass: float = 1e-8
    tol_constraint: float = 1e-6
    tol_orth: float = 1e-6
    max_iterations: int = 500
    step_size_initial: float = 1.0
    preconditioner: str = "free-set-laplacian"
    patience: int = 25
    smoothing: float = 5e-3
    strict: bool = False
    trace_path: str | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("tol_mass", "tol_constraint", "tol_orth"):
            v = getattr(self, name)
            if not 0 < v <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2], got {v}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.step_size_initial > 0:
            raise ValueError("step_size_initial must be positive")
        if not 0 <= self.smoothing < 1:
            raise ValueError("smoothing must lie in [0, 1)")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    rho_next: ScalarField
    pressure: ScalarField
    pressure_ct: ScalarField
    iterations: int
    residual: float
    duality_gap_estimate: float
    converged: bool = True


# ---------------------------------------------------------------------------
# c-transforms


def _check_finite(f: ScalarField):
    if not np.all(np.isfinite(f.values)):
        raise ValueError("field contains non-finite values")


def c_transform(p: ScalarField, tau: float) -> ScalarField:
    """Exact infimum of ``p(y) + |x - y|**2 / (2 tau)`` over grid nodes ``y``.

    Two separable lower-envelope passes (rows, then columns), each linear in
    the number of nodes, with periodic wrap.
    """
    _check_finite(p)
    if not tau > 0:
        raise ValueError("tau must be positive")
    scale = p.grid.h**2 / (2.0 * tau)
    v = np.ascontiguousarray(p.values)
    v = kernels.lower_envelope_rows(v, scale)
    v = kernels.lower_envelope_rows(np.ascontiguousarray(v.T), scale).T
    return p.with_values(v)


def c_transform_conjugate(q: ScalarField, tau: float) -> ScalarField:
    """``sup_x q(x) - |x - y|**2 / (2 tau)``; undoes :func:`c_transform` on c-concave input."""
    neg = c_transform(q.with_values(-q.values), tau)
    return neg.with_values(-neg.values)


def _bilinear_coefficients(p):
    p10 = np.roll(p, -1, axis=1)
    p01 = np.roll(p, -1, axis=0)
    p11 = np.roll(p01, -1, axis=1)
    b = p10 - p
    c = p01 - p
    e = p - p10 - p01 + p11
    return np.ascontiguousarray(p), b, c, e


def _window(pmax, kap):
    # a minimizer y satisfies kap*|x-y|^2 <= p(x) - p(y) <= max p
    if pmax <= 0.0:
        return 1
    return int(math.ceil(math.sqrt(pmax / kap))) + 1


def _candidates(p, h, tau):
    kap = h * h / (2.0 * tau)
    a, b, c, e = _bilinear_coefficients(np.asarray(p, dtype=np.float64))
    return kernels.cell_candidates(a, b, c, e, kap, _window(float(a.max()), kap))


def c_transform_bilinear(p: np.ndarray, h: float, tau: float):
    """Infimum over the bilinear interpolant of ``p``.

    Returns ``(values, tx, ty)`` where ``(tx, ty)`` is the minimizer in
    unwrapped cell-index coordinates.
    """
    val, tx, ty = _candidates(p, h, tau)
    k = np.argmin(val, axis=0)[None]
    return tuple(np.take_along_axis(z, k, axis=0)[0] for z in (val, tx, ty))


def soft_dual(p: np.ndarray, mu: np.ndarray, h: float, tau: float, eps: float):
    """Smoothed dual: the c-transform with its min replaced by a soft-min of width ``eps``.

    Returns ``(rho, pc, value)``.  ``rho`` is the exact gradient of the
    smoothed objective (mass split across competing cells by Gibbs weights)
    and ``pc`` is the hard c-transform.  ``eps = 0`` gives the plain dual.
    """
    val, tx, ty = _candidates(p, h, tau)
    fmin = val.min(axis=0)
    if eps == 0.0:
        k = np.argmin(val, axis=0)[None]
        px, py = (np.take_along_axis(z, k, axis=0)[0] for z in (tx, ty))
        rho = kernels.splat_bilinear(mu, px, py)
        soft = fmin
    else:
        w = np.exp(-(val - fmin) / eps)
        z = w.sum(axis=0)
        soft = fmin - eps * np.log(z)
        rho = np.zeros_like(fmin)
        share = w / z
        for k in range(val.shape[0]):
            m = share[k]
            if m.max() > 0.0:
                rho += kernels.splat_bilinear(np.ascontiguousarray(mu * m), tx[k], ty[k])
    return rho, fmin, h * h * float(np.sum(soft * mu) - np.sum(p))


# ---------------------------------------------------------------------------
# pushforward and objective


def pushforward_density(mu: ScalarField, pressure_ct: ScalarField, tau: float) -> ScalarField:
    """Move each cell's mass along ``x - tau * grad(pressure_ct)`` and splat bilinearly."""
    _check_finite(pressure_ct)
    g = mu.grid
    gx, gy = gradient(pressure_ct)
    dx = -tau * gx.values / g.h
    dy = -tau * gy.values / g.h
    if np.abs(dx).max() * 2 > g.nx or np.abs(dy).max() * 2 > g.ny:
        raise DisplacementError("displacement exceeds half the domain; tau too large or solver diverged")
    jj, ii = np.indices(g.shape).astype(np.float64)
    out = kernels.splat_bilinear(np.ascontiguousarray(mu.values), ii + dx, jj + dy)
    return mu.with_values(out)


def dual_objective(p: ScalarField, mu: ScalarField, tau: float, interpolation: str = "grid") -> float:
    """``integral(p^c mu) - integral(p)``.

    ``interpolation="grid"`` uses :func:`c_transform`; ``"bilinear"`` uses the
    interpolated infimum that the solver ascends on.
    """
    h = p.grid.h
    if interpolation == "grid":
        pc = c_transform(p, tau).values
    elif interpolation == "bilinear":
        pc = c_transform_bilinear(p.values, h, tau)[0]
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return float(h * h * (np.sum(pc * mu.values) - np.sum(p.values)))


# ---------------------------------------------------------------------------
# solver


@functools.lru_cache(maxsize=8)
def _laplacian(ny, nx, h):
    n = nx * ny
    idx = np.arange(n).reshape(ny, nx)
    rows = np.repeat(idx.ravel(), 5)
    cols = np.stack(
        [
            idx,
            np.roll(idx, 1, axis=1),
            np.roll(idx, -1, axis=1),
            np.roll(idx, 1, axis=0),
            np.roll(idx, -1, axis=0),
        ],
        axis=-1,
    ).ravel()
    vals = np.tile([4.0, -1.0, -1.0, -1.0, -1.0], n) / (h * h)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _solve_free_set(r, free, h):
    """Solve ``-Lap u = r`` on the free cells with ``u = 0`` elsewhere."""
    ny, nx = r.shape
    idx = np.flatnonzero(free.ravel())
    u = np.zeros(r.size)
    if idx.size:
        lap = _laplacian(ny, nx, h)
        sub = lap[idx][:, idx].tocsc()
        u[idx] = sparse_linalg.spsolve(sub, r.ravel()[idx])
    return u.reshape(r.shape)


def _solve_spectral(r, h):
    ny, nx = r.shape
    kx = 2.0 * np.pi * np.fft.rfftfreq(nx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny)
    sym = (4.0 / (h * h)) * (np.sin(kx[None, :] / 2) ** 2 + np.sin(ky[:, None] / 2) ** 2)
    rh = np.fft.rfft2(r)
    sym[0, 0] = 1.0
    rh /= sym
    rh[0, 0] = 0.0
    return np.fft.irfft2(rh, s=r.shape)


def _polish(rho, saturated):
    """Mass-conserving cleanup: saturated cells to one, overflow moved outward.

    The mass change from setting ``saturated`` cells (and any cell above one)
    to exactly one is spread over the nearest unsaturated ring of cells, in
    proportion to their spare capacity (or their content, for a deficit).
    The ring grows until it can absorb the change.
    """
    out = np.minimum(np.where(saturated, 1.0, rho), 1.0)
    fixed = saturated | (rho >= 1.0)
    delta = float(np.sum(rho) - np.sum(out))
    if delta == 0.0:
        return out
    region = fixed.copy()
    while True:
        grown = (
            region
            | np.roll(region, 1, 0)
            | np.roll(region, -1, 0)
            | np.roll(region, 1, 1)
            | np.roll(region, -1, 1)
        )
        if grown.all() or np.array_equal(grown, region):
            ring = ~fixed
        else:
            ring = grown & ~fixed
        room = np.where(ring, 1.0 - out if delta > 0 else out, 0.0)
        total = float(room.sum())
        if total >= abs(delta) or np.array_equal(ring, ~fixed):
            if total > 0:
                share = np.minimum(room, room * (abs(delta) / total))
                out = out + math.copysign(1.0, delta) * share
            return np.clip(out, 0.0, 1.0)
        region = grown


def _trace_writer(path):
    if path is None:
        return None
    fh = open(path, "a", encoding="ascii", newline="\n")
    if fh.tell() == 0:
        fh.write("iteration,dual_objective,residual,smoothing\n")
    return fh


def project(mu: ScalarField, cfg: ProjectionConfig) -> ProjectionResult:
    """Project ``mu`` onto densities with values in [0, 1] and the same mass.

    Projected dual ascent on the pressure.  Each iteration splats ``mu``
    along the minimizer map of the bilinear c-transform, forms the residual
    ``rho - 1`` on the free set ``{p > 0} | {rho > 1}``, solves a Laplace
    problem for the search direction, and backtracks on the dual objective.
    The returned density goes through a mass-conserving cleanup so the box
    constraint and complementarity hold to rounding.

    Raises :class:`NonConvergenceError` when ``cfg.strict`` is set and the
    ascent residual stays above ``cfg.tol_constraint``.
    """
    g = mu.grid
    m = np.asarray(mu.values)
    if not np.all(np.isfinite(m)) or m.min() < 0.0:
        raise ValueError("mu must be finite and non-negative")
    mass = float(np.sum(m))
    if mass * g.cell_area > g.area * (1.0 + 1e-12):
        raise InfeasibleMassError(f"mass {mass * g.cell_area} exceeds the domain area {g.area}")
    if m.max() <= 1.0:
        zero = ScalarField.zeros(g)
        return ProjectionResult(mu, zero, zero, 0, 0.0, 0.0, True)

    h, tau = g.h, cfg.tau
    hh = h * h
    mc = np.ascontiguousarray(m)
    trace = _trace_writer(cfg.trace_path)

    # a fixed fraction of the pressure drop across one cell at unit gradient
    eps = cfg.smoothing * tau * h
    widenings = 0

    def evaluate(p):
        return soft_dual(p, mc, h, tau, eps)

    p = np.zeros(g.shape)
    sigma_max = cfg.step_size_initial / tau
    sigma = sigma_max
    rho, pc, dual = evaluate(p)
    best = (math.inf, p, rho, pc)
    phase_best = math.inf
    since_best = 0
    iterations = 0
    residual = math.inf
    try:
        for iterations in range(cfg.max_iterations + 1):
            grad = rho - 1.0
            free = (p > 0.0) | (grad > 0.0)
            r = np.where(free, grad, 0.0)
            residual = float(np.abs(r).max())
            if trace is not None:
                trace.write(f"{iterations},{dual:.17g},{residual:.17g},{eps:.17g}\n")
            if residual < best[0]:
                best = (residual, p, rho, pc)
            if residual < phase_best:
                # stalls creep downward slowly; only a clear gain resets patience
                since_best = 0 if residual < 0.99 * phase_best else since_best + 1
                phase_best = residual
            else:
                since_best += 1
            if residual <= cfg.tol_constraint or iterations == cfg.max_iterations:
                break
            stalled = since_best > cfg.patience
            if not stalled:
                if cfg.preconditioner == "free-set-laplacian":
                    u = _solve_free_set(r, free, h)
                else:
                    u = _solve_spectral(r, h)
                for _ in range(60):
                    pn = np.maximum(0.0, p + sigma * u)
                    rn, pcn, dn = evaluate(pn)
                    if dn >= dual + 1e-4 * hh * float(np.sum(grad * (pn - p))):
                        break
                    sigma *= 0.5
                else:
                    stalled = True
            if stalled:
                # near-ties between cells stall the ascent; a wider soft-min
                # lets the mass split and the ascent resume from the best point
                if eps == 0.0 or widenings == MAX_WIDENINGS:
                    break
                eps *= 4.0
                widenings += 1
                p = best[1]
                rho, pc, dual = evaluate(p)
                phase_best = math.inf
                since_best = 0
                sigma = sigma_max
                continue
            p, rho, pc, dual = pn, rn, pcn, dn
            sigma = min(2.0 * sigma, sigma_max)
    finally:
        if trace is not None:
            trace.close()

    residual, p, rho, pc = best
    converged = residual <= cfg.tol_constraint
    if not converged and cfg.strict:
        raise NonConvergenceError(
            f"projection stalled with residual {residual:.3e} after {iterations} iterations",
            residual,
            iterations,
        )
    gap = abs(hh * float(np.sum(p * (rho - 1.0))))
    saturated = p > 0.0
    rho_clean = _polish(rho, saturated)
    mass_err = abs(float(np.sum(rho_clean)) - mass) / mass
    if mass_err > cfg.tol_mass:
        raise ProjectionError(f"mass drift {mass_err:.3e} exceeds tolerance")
    if rho_clean.max() > 1.0 + EPS_CLIP:
        raise ProjectionError("box constraint violated after cleanup")
    return ProjectionResult(
        rho_next=mu.with_values(rho_clean),
        pressure=mu.with_values(p),
        pressure_ct=mu.with_values(pc),
        iterations=iterations,
        residual=residual + mass_err,
        duality_gap_estimate=gap,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# variational inequality


def check_variational_inequality(
    result: ProjectionResult,
    mu: ScalarField,
    rho_prev: ScalarField,
    n_prev: ScalarField,
    tau: float,
    xi: ScalarField,
    tol_orth: float = 1e-6,
):
    """Return ``(lhs, rhs)`` with ``lhs = int grad(xi).grad(p)`` and ``rhs = int xi n rho mu``.

    ``xi`` must be an admissible test function for ``result.rho_next``:
    non-negative and vanishing where the density is below one.
    """
    x = xi.values
    rho = result.rho_next.values
    if x.min() < -tol_orth or np.abs(x * (1.0 - rho)).max() > tol_orth:
        raise ValueError("xi is not admissible: needs xi >= 0 and xi*(1-rho) = 0")
    h2 = xi.grid.cell_area
    gx, gy = gradient(xi)
    px, py = gradient(result.pressure)
    lhs = float(h2 * np.sum(gx.values * px.values + gy.values * py.values))
    rhs = float(h2 * np.sum(x * n_prev.values * rho_prev.values * mu.values))
    return lhs, rhs
