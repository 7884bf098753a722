import math

import numpy as np
import pytest

from patchflow.field_grid import Grid2D, ScalarField
from patchflow.nutrient import (
    NutrientConfig,
    far_field_guard,
    heat_semigroup,
    nutrient_exact_D0,
    scheme1_nutrient_step,
    scheme2_interval_solve,
)

TAU = 1 / 256


def gaussian(g, var):
    return ScalarField(g, np.exp(-g.wrapped_distance() ** 2 / (2 * var)) / (2 * math.pi * var))


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def random_field(seed, n=32, lo=0.0, hi=1.0):
    g = Grid2D.box(n)
    return ScalarField(g, np.random.default_rng(seed).uniform(lo, hi, g.shape))


# -- heat semigroup ----------------------------------------------------------


def test_heat_zero_time_is_identity():
    f = random_field(0)
    out = heat_semigroup(f, 0.0)
    assert np.array_equal(out.values, f.values)
    assert out.values is not f.values


def test_heat_preserves_constants():
    g = Grid2D.box(32)
    out = heat_semigroup(ScalarField.constant(g, 2.5), 0.3)
    assert np.allclose(out.values, 2.5, rtol=0, atol=1e-13)


def test_heat_tiny_time_round_trips_closely():
    f = random_field(1)
    assert np.max(np.abs(heat_semigroup(f, 1e-300).values - f.values)) <= 1e-13


def test_heat_gaussian_variance_doubles():
    g = Grid2D.box(256)
    out = heat_semigroup(gaussian(g, 0.01), 0.005)
    assert rel_l2(out.values, gaussian(g, 0.02).values) <= 1e-6


def test_heat_rejects_negative_time():
    with pytest.raises(ValueError):
        heat_semigroup(random_field(2), -1e-3)


def test_heat_is_a_semigroup():
    f = random_field(3)
    two = heat_semigroup(heat_semigroup(f, 0.01), 0.02)
    once = heat_semigroup(f, 0.03)
    assert np.max(np.abs(two.values - once.values)) <= 1e-13


# -- scheme I ----------------------------------------------------------------


def test_scheme1_empty_density_leaves_nutrient():
    n = random_field(4, lo=0.5, hi=2.0)
    out = scheme1_nutrient_step(n, ScalarField.zeros(n.grid), TAU, NutrientConfig(D=0.0))
    assert np.array_equal(out.values, n.values)


def test_scheme1_full_density_decays_uniformly():
    n = random_field(5, lo=0.5, hi=2.0)
    out = scheme1_nutrient_step(n, ScalarField.constant(n.grid, 1.0), TAU, NutrientConfig(D=0.0))
    assert np.array_equal(out.values, n.values * (1 - TAU))


@pytest.mark.parametrize("D", [0.0, 1e-3, 0.5])
def test_scheme1_lower_bound_after_k_steps(D):
    lam = 1.5
    g = Grid2D.box(32)
    n = ScalarField.constant(g, lam)
    cfg = NutrientConfig(D=D)
    for k in range(1, 21):
        rho = random_field(100 + k)
        n = scheme1_nutrient_step(n, rho, TAU, cfg)
        assert n.values.min() >= lam * (1 - TAU) ** k * (1 - 1e-12)


def test_scheme1_rejects_large_tau():
    n = random_field(6)
    with pytest.raises(ValueError):
        scheme1_nutrient_step(n, ScalarField.zeros(n.grid), 1.0, NutrientConfig())


# -- scheme II ---------------------------------------------------------------


def test_scheme2_without_diffusion_is_exact_decay():
    n = random_field(7, lo=0.5, hi=2.0)
    rho = random_field(8)
    out = scheme2_interval_solve(n, rho, TAU, NutrientConfig(D=0.0))
    assert np.array_equal(out.values, n.values * np.exp(-TAU * rho.values))


@pytest.mark.parametrize("D", [4e-3, 2e-3, 1e-3, 5e-4, 0.0256])
def test_scheme2_empty_density_matches_semigroup(D):
    g = Grid2D.box(256)
    f = gaussian(g, 0.01)
    out = scheme2_interval_solve(f, ScalarField.zeros(g), TAU, NutrientConfig(D=D, substeps=16))
    assert rel_l2(out.values, heat_semigroup(f, TAU * D).values) <= 1e-4


def test_scheme2_uniform_density_on_constant_nutrient():
    g = Grid2D.box(32)
    r, c = 0.7, 1.3
    out = scheme2_interval_solve(ScalarField.constant(g, c), ScalarField.constant(g, r), TAU, NutrientConfig(D=0.01))
    assert np.max(np.abs(out.values - c * math.exp(-r * TAU))) <= 1e-10


def test_scheme2_keeps_nutrient_positive_and_bounded():
    n = random_field(9, lo=0.5, hi=2.0)
    out = scheme2_interval_solve(n, random_field(10), TAU, NutrientConfig(D=0.05, substeps=4))
    assert out.values.min() > 0
    assert out.values.max() <= n.values.max()


# -- closed form at D = 0 ----------------------------------------------------


def test_exact_formula_empty_history():
    n0 = random_field(11, lo=1, hi=2)
    assert np.array_equal(nutrient_exact_D0(n0, []).values, n0.values)


def test_exact_formula_full_density():
    n0 = random_field(12, lo=1, hi=2)
    one = ScalarField.constant(n0.grid, 1.0)
    t = 0.3
    out = nutrient_exact_D0(n0, [(one, t / 3)] * 3)
    assert np.allclose(out.values, n0.values * math.exp(-t), rtol=1e-14)


def test_exact_formula_half_occupied():
    n0 = random_field(13, lo=1, hi=2)
    g = n0.grid
    t = 0.4
    out = nutrient_exact_D0(n0, [(ScalarField.constant(g, 1.0), t / 2), (ScalarField.zeros(g), t / 2)])
    assert np.allclose(out.values, n0.values * math.exp(-t / 2), rtol=1e-14)


def test_exact_formula_agrees_with_scheme2_at_zero_diffusion():
    n0 = random_field(14, lo=1, hi=2)
    rhos = [random_field(20 + k) for k in range(5)]
    n = n0
    for rho in rhos:
        n = scheme2_interval_solve(n, rho, TAU, NutrientConfig(D=0.0))
    exact = nutrient_exact_D0(n0, [(r, TAU) for r in rhos])
    assert np.allclose(n.values, exact.values, rtol=1e-13)


def test_exact_formula_rejects_negative_duration():
    n0 = random_field(15)
    with pytest.raises(ValueError):
        nutrient_exact_D0(n0, [(n0, -0.1)])


# -- far-field guard ---------------------------------------------------------


def test_guard_passes_on_constant():
    g = Grid2D.box(32)
    res = far_field_guard(ScalarField.constant(g, 1.5), NutrientConfig(far_field=1.5))
    assert res.passed and res.minimum == 1.5


def test_guard_fails_on_one_low_boundary_cell():
    g = Grid2D.box(32)
    v = np.full(g.shape, 1.5)
    v[0, 7] = 0.9 * 1.5
    res = far_field_guard(ScalarField(g, v), NutrientConfig(far_field=1.5, boundary_guard_tol=0.01))
    assert not res.passed
    assert res.minimum == pytest.approx(0.9 * 1.5)


@pytest.mark.parametrize("kwargs", [{"D": -1}, {"substeps": 0}, {"far_field": -1.0}, {"boundary_guard_tol": 1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        NutrientConfig(**kwargs)
