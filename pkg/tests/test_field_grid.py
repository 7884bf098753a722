import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchflow.field_grid import (
    HEADER_SIZE,
    BadMagicError,
    Grid2D,
    NonFiniteSnapshotError,
    ScalarField,
    TruncatedSnapshotError,
    gradient,
    integrate,
    lp_norm,
    read_snapshot,
    total_variation,
    write_snapshot,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def field(values, n=None):
    values = np.asarray(values, dtype=float)
    ny, nx = values.shape
    return ScalarField(Grid2D(nx, ny, 2.0 / nx, (-1 + 1.0 / nx, -1 + 1.0 / nx)), values)


def test_grid_rejects_tiny_or_degenerate():
    with pytest.raises(ValueError):
        Grid2D(4, 8, 0.1)
    with pytest.raises(ValueError):
        Grid2D(8, 8, 0.0)


def test_box_cell_centers():
    g = Grid2D.box(64)
    x, y = g.axes()
    assert g.h == pytest.approx(1 / 32)
    assert x[0] == pytest.approx(-1 + g.h / 2)
    assert np.allclose(np.diff(x), g.h)
    assert g.lx == pytest.approx(2.0)


def test_values_read_only():
    f = ScalarField.zeros(Grid2D.box(8))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_non_finite_rejected():
    v = np.zeros((8, 8))
    v[1, 1] = np.nan
    with pytest.raises(ValueError):
        ScalarField(Grid2D.box(8), v)


def test_integrate_examples():
    assert integrate(ScalarField.zeros(Grid2D.box(16))) == 0.0
    assert integrate(ScalarField.constant(Grid2D.box(64), 1.0)) == pytest.approx(4.0, rel=1e-14)
    g = Grid2D.box(256)
    disk = ScalarField(g, (g.wrapped_distance() < 0.25).astype(float))
    assert abs(integrate(disk) - math.pi * 0.0625) <= 2 * g.h * 2 * math.pi * 0.25


@pytest.mark.parametrize("p", [1, 2, math.inf])
def test_lp_norm_constants(p):
    g = Grid2D.box(32)
    assert lp_norm(ScalarField.zeros(g), p) == 0.0
    c = 0.7
    expected = c if p == math.inf else c * 2.0 ** (2.0 / p)
    assert lp_norm(ScalarField.constant(g, c), p) == pytest.approx(expected, rel=1e-13)


def test_lp_norm_matches_resummation():
    rng = np.random.default_rng(0)
    f = field(rng.normal(size=(24, 16)))
    h2 = f.grid.h**2
    assert lp_norm(f, 1) == pytest.approx(h2 * np.abs(f.values).sum(), rel=1e-12)
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(h2 * (f.values**2).sum()), rel=1e-12)
    assert lp_norm(f, math.inf) == np.abs(f.values).max()


def test_gradient_examples():
    g = Grid2D.box(128)
    gx, gy = gradient(ScalarField.constant(g, 3.0))
    assert not gx.values.any() and not gy.values.any()
    X, Y = g.coords()
    gx, _ = gradient(ScalarField(g, np.sin(math.pi * X)))
    assert np.abs(gx.values - math.pi * np.cos(math.pi * X)).max() < 5e-3
    gx, gy = gradient(ScalarField(g, X))
    assert np.allclose(gx.values[:, 1:-1], 1.0, atol=1e-12)
    assert np.allclose(gy.values, 0.0)


def test_total_variation_examples():
    g = Grid2D.box(64)
    assert total_variation(ScalarField.constant(g, 2.0)) == 0.0
    X, Y = g.coords()
    s = 0.5
    square = ScalarField(g, ((np.abs(X) < s / 2) & (np.abs(Y) < s / 2)).astype(float))
    assert abs(total_variation(square) - 4 * s) <= 4 * 2 * g.h
    half = ScalarField(g, (X > 0).astype(float))
    assert total_variation(half) == pytest.approx(2 * g.ly)


def test_snapshot_header_size_and_roundtrip():
    # magic(4) + nx(4) + ny(4) + h(8) + t(8) + role(1)
    assert HEADER_SIZE == 29
    rng = np.random.default_rng(1)
    f = field(rng.normal(size=(8, 12)))
    buf = io.BytesIO()
    write_snapshot(f, "pressure", 0.125, buf)
    raw = buf.getvalue()
    assert len(raw) == 29 + 8 * 8 * 12
    assert raw[:4] == b"TPF1" and raw[28] == 2
    g, role, t = read_snapshot(io.BytesIO(raw), origin=f.grid.origin)
    assert role == 2 and t == 0.125
    assert g.values.tobytes() == f.values.tobytes()
    assert g.grid == f.grid


def _snapshot_bytes():
    buf = io.BytesIO()
    write_snapshot(field(np.ones((8, 8))), "density", 0.0, buf)
    return bytearray(buf.getvalue())


def test_snapshot_errors_are_distinct():
    raw = _snapshot_bytes()
    bad = bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_snapshot(io.BytesIO(bad))
    with pytest.raises(TruncatedSnapshotError):
        read_snapshot(io.BytesIO(bytes(raw[:-8])))
    nan = bytearray(raw)
    nan[29:37] = np.array([np.nan]).tobytes()
    with pytest.raises(NonFiniteSnapshotError):
        read_snapshot(io.BytesIO(bytes(nan)))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (8, 9), elements=finite), st.floats(0, 10, allow_nan=False))
def test_snapshot_roundtrip_property(values, t):
    f = field(values)
    buf = io.BytesIO()
    write_snapshot(f, "nutrient", t, buf)
    buf.seek(0)
    g, _, t2 = read_snapshot(buf)
    assert g.values.tobytes() == f.values.tobytes() and t2 == t


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 8), elements=finite), arrays(np.float64, (8, 8), elements=finite))
def test_linearity_and_triangle(a, b):
    fa, fb = field(a), field(b)
    total = integrate(fa) + integrate(fb)
    assert integrate(fa + fb) == pytest.approx(total, rel=1e-12, abs=1e-9)
    for p in (1, 2, math.inf):
        assert lp_norm(fa + fb, p) <= (lp_norm(fa, p) + lp_norm(fb, p)) * (1 + 1e-12) + 1e-12
