"""The compiled kernels and the numpy fallback must agree bit for bit."""

import numpy as np
import pytest

from patchflow import _fallback, kernels
from patchflow.projection import _bilinear_coefficients, _window

compiled = pytest.importorskip("patchflow._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("seed", range(5))
def test_lower_envelope_parity(seed):
    rng = np.random.default_rng(seed)
    f = rng.uniform(0, 1, (9, 37)) * (rng.uniform(size=(9, 37)) < 0.5)
    f[0, :] = np.inf
    f[1, 3] = 0.0
    a = compiled.lower_envelope_rows(np.ascontiguousarray(f), 0.013)
    b = _fallback.lower_envelope_rows(np.ascontiguousarray(f), 0.013)
    assert np.array_equal(a, b)


def test_lower_envelope_brute_force():
    rng = np.random.default_rng(3)
    f = rng.uniform(0, 2, (4, 50))
    s = 0.02
    out = kernels.lower_envelope_rows(f, s)
    n = f.shape[1]
    for j in range(4):
        for i in range(n):
            d = np.abs(np.arange(n) - i)
            d = np.minimum(d, n - d)
            assert out[j, i] == pytest.approx(np.min(f[j] + s * d * d), abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_splat_parity_and_mass(seed):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0, 1, (12, 10))
    jj, ii = np.indices(m.shape).astype(float)
    tx = ii + rng.normal(0, 2, m.shape)
    ty = jj + rng.normal(0, 2, m.shape)
    a = compiled.splat_bilinear(m, tx, ty)
    b = _fallback.splat_bilinear(m, tx, ty)
    assert np.array_equal(a, b)
    assert a.sum() == pytest.approx(m.sum(), rel=1e-13)


def test_splat_hand_case():
    m = np.zeros((8, 8))
    m[3, 3] = 2.0
    jj, ii = np.indices(m.shape).astype(float)
    out = kernels.splat_bilinear(m, ii + 0.25, jj - 0.5)
    assert out[2, 3] == pytest.approx(2.0 * 0.75 * 0.5)
    assert out[2, 4] == pytest.approx(2.0 * 0.25 * 0.5)
    assert out[3, 3] == pytest.approx(2.0 * 0.75 * 0.5)
    assert out[3, 4] == pytest.approx(2.0 * 0.25 * 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_pava_parity_and_monotone(seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=200).cumsum() * rng.choice([-1, 1])
    w = rng.uniform(0.5, 2, 200)
    a = compiled.pava(y, w)
    b = _fallback.pava(y, w)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) >= 0)
    assert np.dot(a, w) == pytest.approx(np.dot(y, w))


@pytest.mark.parametrize("seed", range(4))
def test_cell_candidates_parity(seed):
    rng = np.random.default_rng(seed)
    p = np.clip(rng.normal(0, 1e-3, (16, 16)), 0, None)
    kap = (1 / 16) ** 2 / (2 / 256)
    a, b, c, e = _bilinear_coefficients(p)
    w = _window(p.max(), kap)
    out1 = compiled.cell_candidates(a, b, c, e, kap, w)
    out2 = _fallback.cell_candidates(a, b, c, e, kap, w)
    for x, y in zip(out1, out2):
        assert np.array_equal(x, y)
    assert out1[0].shape == (4 * w * w, 16, 16)
    # the cell anchored at the source contains the source node itself
    assert np.all(out1[0].min(axis=0) <= p + 1e-18)
