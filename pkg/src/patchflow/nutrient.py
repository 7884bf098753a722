"""Nutrient updates: heat semigroup, per-interval reaction-diffusion, D = 0 formula."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field_grid import ScalarField


class FarFieldError(RuntimeError):
    def __init__(self, message, minimum):
        super().__init__(message)
        self.minimum = minimum


@dataclass(frozen=True)
class NutrientConfig:
    D: float = 0.0
    substeps: int = 4
    far_field: float = 1.0
    boundary_guard_tol: float = 0.01

    def __post_init__(self):
        if not self.D >= 0:
            raise ValueError(f"diffusion coefficient must be >= 0, got {self.D}")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if not self.far_field >= 0:  # 0 only for the nutrient-free model
            raise ValueError("far_field must be non-negative")
        if not 0 <= self.boundary_guard_tol < 1:
            raise ValueError("boundary_guard_tol must lie in [0, 1)")


@dataclass(frozen=True)
class GuardResult:
    passed: bool
    minimum: float
    threshold: float


def _wavenumber_sq(grid):
    kx = 2.0 * np.pi * np.fft.rfftfreq(grid.nx, d=grid.h)
    ky = 2.0 * np.pi * np.fft.fftfreq(grid.ny, d=grid.h)
    return kx[None, :] ** 2 + ky[:, None] ** 2


def _spectral_multiply(values, symbol):
    out = np.fft.irfft2(np.fft.rfft2(values) * symbol, s=values.shape)
    return out


def heat_semigroup(f: ScalarField, s: float) -> ScalarField:
    """``exp(s * Laplacian) f`` on the periodic grid, exact in Fourier space."""
    if s < 0:
        raise ValueError(f"semigroup time must be >= 0, got {s}")
    if s == 0:
        return f.with_values(f.values)
    return f.with_values(_spectral_multiply(f.values, np.exp(-s * _wavenumber_sq(f.grid))))


def _bounded(values, hi):
    # spectral filters can ring at the 1e-16 level on rough data
    return np.clip(values, 0.0, hi)


def scheme1_nutrient_step(n: ScalarField, rho_next: ScalarField, tau: float, cfg: NutrientConfig) -> ScalarField:
    """Absorb with the new density, then diffuse for time ``tau * D``."""
    if tau >= 1:
        raise ValueError("tau must be < 1 so that 1 - tau*rho stays positive")
    r = rho_next.values
    if tau * r.max() >= 1:
        raise ValueError("tau * max(rho) must be < 1")
    absorbed = n.with_values(n.values * (1.0 - tau * r))
    if cfg.D == 0:
        return absorbed
    out = heat_semigroup(absorbed, tau * cfg.D)
    return out.with_values(_bounded(out.values, float(n.values.max())))


def scheme2_interval_solve(n_start: ScalarField, rho_frozen: ScalarField, tau: float, cfg: NutrientConfig) -> ScalarField:
    """Integrate ``n_t = D Lap n - rho n`` over one interval of length ``tau``.

    Lie splitting over ``cfg.substeps`` sub-steps: exact reaction factor
    ``exp(-delta rho)`` followed by one implicit spectral diffusion solve.
    """
    r = rho_frozen.values
    if cfg.D == 0:
        return n_start.with_values(n_start.values * np.exp(-tau * r))
    delta = tau / cfg.substeps
    decay = np.exp(-delta * r)
    symbol = 1.0 / (1.0 + delta * cfg.D * _wavenumber_sq(n_start.grid))
    hi = float(n_start.values.max())
    v = n_start.values
    for _ in range(cfg.substeps):
        v = _bounded(_spectral_multiply(v * decay, symbol), hi)
    return n_start.with_values(v)


def nutrient_exact_D0(n0: ScalarField, rho_history) -> ScalarField:
    """``n0 * exp(-sum(duration_i * rho_i))`` for a list of ``(rho_i, duration_i)``.

    The caller supplies the lagged densities, i.e. the density driving the
    interval ``[k tau, (k+1) tau)`` is the one from the previous step.
    """
    exponent = np.zeros(n0.grid.shape)
    for rho, duration in rho_history:
        if duration < 0:
            raise ValueError("durations must be non-negative")
        exponent += duration * rho.values
    return n0.with_values(n0.values * np.exp(-exponent))


def boundary_ring(grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def far_field_guard(n: ScalarField, cfg: NutrientConfig) -> GuardResult:
    """Check that the nutrient on the outer ring of cells stays near the far-field value."""
    lo = float(n.values[boundary_ring(n.grid)].min())
    threshold = (1.0 - cfg.boundary_guard_tol) * cfg.far_field
    return GuardResult(lo >= threshold, lo, threshold)
