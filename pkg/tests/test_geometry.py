import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchflow.field_grid import Grid2D, ScalarField, read_snapshot
from patchflow.geometry import (
    EmptySeedError,
    PatchMask,
    annulus_containment,
    count_components,
    disk_boundary_error,
    distance_transform,
    extract_boundary,
    extract_patch,
    hausdorff_distance,
    inner_offset,
    pressure_threshold,
    support_radius,
    write_boundary_csv,
    write_distance_snapshot,
)


def disk_mask(g, r, center=(0.0, 0.0)):
    return PatchMask(g, g.wrapped_distance(center) < r)


def square_mask(g, half, shift=(0.0, 0.0)):
    X, Y = g.coords()
    return PatchMask(g, (np.abs(X - shift[0]) < half) & (np.abs(Y - shift[1]) < half))


def brute_wrapped(points_a, points_b, L):
    d = points_a[:, None, :] - points_b[None, :, :]
    d -= L * np.round(d / L)
    return np.sqrt((d**2).sum(-1))


# -- patches and boundaries --------------------------------------------------


def test_zero_field_gives_empty_mask():
    g = Grid2D.box(32)
    p = ScalarField.zeros(g)
    assert len(extract_patch(p, pressure_threshold(p))) == 0
    assert pressure_threshold(p) == 1e-7


def test_pressure_threshold_scales_with_max():
    g = Grid2D.box(16)
    assert pressure_threshold(ScalarField.constant(g, 0.5), 1e-6) == pytest.approx(5e-6)


def test_binary_density_mask_is_exact():
    g = Grid2D.box(64)
    bits = g.wrapped_distance() < 0.3
    m = extract_patch(ScalarField(g, bits * 1.0), 1e-6, mode="geq_one_minus")
    assert np.array_equal(m.bits, bits)
    with pytest.raises(ValueError):
        extract_patch(ScalarField(g, bits * 1.0), 1e-6, mode="between")


def test_full_mask_has_no_boundary():
    g = Grid2D.box(16)
    assert len(extract_boundary(PatchMask(g, np.ones(g.shape, bool)))) == 0


def test_single_cell_boundary_is_four_midpoints():
    g = Grid2D.box(16)
    bits = np.zeros(g.shape, bool)
    bits[8, 5] = True
    pts = extract_boundary(PatchMask(g, bits)).points
    X, Y = g.coords()
    cx, cy, hh = X[8, 5], Y[8, 5], g.h / 2
    want = {(cx + hh, cy), (cx - hh, cy), (cx, cy + hh), (cx, cy - hh)}
    got = {(round(x, 12), round(y, 12)) for x, y in pts}
    assert got == {(round(x, 12), round(y, 12)) for x, y in want}


def test_rasterized_disk_boundary_near_circle():
    g = Grid2D.box(256)
    b = extract_boundary(disk_mask(g, 0.25))
    assert disk_boundary_error(b, (0, 0), 0.25) <= g.h


def test_boundary_csv(tmp_path):
    g = Grid2D.box(16)
    b = extract_boundary(disk_mask(g, 0.3))
    path = tmp_path / "b.csv"
    write_boundary_csv(b, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(rows, b.points)


# -- distance transform ------------------------------------------------------


def test_single_seed_distance_is_wrapped_norm():
    g = Grid2D.box(64)
    bits = np.zeros(g.shape, bool)
    bits[32, 32] = True
    d = distance_transform(PatchMask(g, bits)).values
    X, Y = g.coords()
    want = g.wrapped_distance((X[32, 32], Y[32, 32]))
    rng = np.random.default_rng(0)
    for j, i in rng.integers(0, 64, (20, 2)):
        assert d[j, i] == pytest.approx(want[j, i], abs=1e-12)


def test_two_seed_distance_is_min():
    g = Grid2D.box(64)
    X, Y = g.coords()
    bits = np.zeros(g.shape, bool)
    bits[10, 12] = bits[50, 40] = True
    d = distance_transform(PatchMask(g, bits)).values
    want = np.minimum(g.wrapped_distance((X[10, 12], Y[10, 12])), g.wrapped_distance((X[50, 40], Y[50, 40])))
    rng = np.random.default_rng(1)
    for j, i in rng.integers(0, 64, (20, 2)):
        assert d[j, i] == pytest.approx(want[j, i], abs=1e-12)


def test_random_seed_mask_matches_brute_force():
    g = Grid2D.box(128)
    rng = np.random.default_rng(2)
    bits = rng.uniform(size=g.shape) < 0.01
    d = distance_transform(PatchMask(g, bits)).values
    X, Y = g.coords()
    centers = np.column_stack([X.ravel(), Y.ravel()])
    seeds = centers[bits.ravel()]
    brute = brute_wrapped(centers, seeds, g.lx).min(axis=1).reshape(g.shape)
    assert np.max(np.abs(d - brute)) <= 1e-10


def test_boundary_distance_matches_brute_force():
    g = Grid2D.box(64)
    b = extract_boundary(disk_mask(g, 0.3, (0.1, -0.2)))
    d = distance_transform(b, g).values
    X, Y = g.coords()
    centers = np.column_stack([X.ravel(), Y.ravel()])
    brute = brute_wrapped(centers, b.points, g.lx).min(axis=1).reshape(g.shape)
    assert np.max(np.abs(d - brute)) <= 1e-10


def test_empty_seeds_raise():
    g = Grid2D.box(16)
    with pytest.raises(EmptySeedError):
        distance_transform(PatchMask(g, np.zeros(g.shape, bool)))
    with pytest.raises(TypeError):
        distance_transform(np.zeros(g.shape, bool))


def test_distance_snapshot_uses_pressure_role():
    g = Grid2D.box(16)
    d = distance_transform(disk_mask(g, 0.3))
    buf = io.BytesIO()
    write_distance_snapshot(d, 0.25, buf)
    buf.seek(0)
    f, role, t = read_snapshot(buf)
    assert role == 2 and t == 0.25
    assert np.array_equal(f.values, d.values)


# -- Hausdorff ---------------------------------------------------------------


def test_hausdorff_self_is_zero():
    g = Grid2D.box(64)
    b = extract_boundary(disk_mask(g, 0.3))
    assert hausdorff_distance(b, b) <= g.h / 2


def test_hausdorff_concentric_circles():
    g = Grid2D.box(128)
    a = extract_boundary(disk_mask(g, 0.2))
    b = extract_boundary(disk_mask(g, 0.3))
    assert abs(hausdorff_distance(a, b) - 0.1) <= 2 * g.h


def test_hausdorff_translated_square_matches_all_pairs():
    g = Grid2D.box(128)
    a = extract_boundary(square_mask(g, 0.3))
    b = extract_boundary(square_mask(g, 0.3, (0.05, 0.0)))
    d = hausdorff_distance(a, b)
    pairs = brute_wrapped(a.points, b.points, g.lx)
    brute = max(pairs.min(axis=1).max(), pairs.min(axis=0).max())
    assert d == pytest.approx(brute, abs=1e-10)
    assert abs(d - 0.05) <= 2 * g.h


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_hausdorff_is_symmetric_and_exact(s1, s2):
    g = Grid2D.box(32)
    a = extract_boundary(PatchMask(g, np.random.default_rng(s1).uniform(size=g.shape) < 0.2))
    b = extract_boundary(PatchMask(g, np.random.default_rng(s2).uniform(size=g.shape) < 0.2))
    d = hausdorff_distance(a, b)
    assert d == hausdorff_distance(b, a)
    pairs = brute_wrapped(a.points, b.points, g.lx)
    assert d == pytest.approx(max(pairs.min(axis=1).max(), pairs.min(axis=0).max()), abs=1e-10)


def test_hausdorff_rejects_empty_or_mismatched():
    g = Grid2D.box(16)
    full = extract_boundary(PatchMask(g, np.ones(g.shape, bool)))
    b = extract_boundary(disk_mask(g, 0.3))
    with pytest.raises(EmptySeedError):
        hausdorff_distance(full, b)
    other = extract_boundary(disk_mask(Grid2D.box(32), 0.3))
    with pytest.raises(ValueError):
        hausdorff_distance(b, other)


# -- support radius, offsets, annuli, components -----------------------------


def test_support_radius():
    g = Grid2D.box(128)
    assert support_radius(ScalarField.zeros(g)) == 0.0
    disk = ScalarField(g, disk_mask(g, 0.2).bits * 1.0)
    assert abs(support_radius(disk) - 0.2) <= g.h


def test_inner_offset():
    g = Grid2D.box(128)
    m = disk_mask(g, 0.3)
    assert inner_offset(m, 0.0) is m
    shrunk = inner_offset(m, 0.1)
    target = disk_mask(g, 0.2)
    sym = np.logical_xor(shrunk.bits, target.bits).sum() * g.cell_area
    assert sym <= 8 * g.h * (2 * math.pi * 0.2)
    assert len(inner_offset(m, 0.5)) == 0
    with pytest.raises(ValueError):
        inner_offset(m, -0.1)


def test_annulus_containment():
    g = Grid2D.box(128)
    empty = PatchMask(g, np.zeros(g.shape, bool))
    assert annulus_containment(empty, (0, 0), 0.1, 0.3)
    d = g.wrapped_distance()
    ring = PatchMask(g, np.abs(d - 0.2) < 2 * g.h)
    assert annulus_containment(ring, (0, 0), 0.1, 0.3)
    assert not annulus_containment(disk_mask(g, 0.05), (0, 0), 0.1, 0.3)
    with pytest.raises(ValueError):
        annulus_containment(ring, (0, 0), 0.3, 0.1)


def test_component_count_wraps():
    g = Grid2D.box(32)
    bits = np.zeros(g.shape, bool)
    bits[5:8, 5:8] = True
    bits[20:22, 20:22] = True
    bits[10, 0] = bits[10, 31] = True  # one blob across the seam
    assert count_components(PatchMask(g, bits)) == 3
