"""Pure numpy/Python versions of the compiled kernels in ``_kernels.pyx``.

Results are bitwise identical to the compiled versions: every candidate value
is formed with the same expression, and splat deposits are accumulated in the
same order.
"""

import numpy as np


def lower_envelope_rows(f, scale):
    f = np.ascontiguousarray(f, dtype=np.float64)
    n = f.shape[1]
    out = f.copy()
    for s in range(1, n):
        d = min(s, n - s)
        np.minimum(out, np.roll(f, s, axis=1) + scale * float(d * d), out=out)
    return out


def splat_bilinear(mass, px, py):
    ny, nx = mass.shape
    m = mass.ravel()
    x = np.floor(px.ravel())
    y = np.floor(py.ravel())
    fx = px.ravel() - x
    fy = py.ravel() - y
    gx = 1.0 - fx
    gy = 1.0 - fy
    i0 = x.astype(np.intp) % nx
    j0 = y.astype(np.intp) % ny
    i1 = (i0 + 1) % nx
    j1 = (j0 + 1) % ny
    idx = np.stack([j0 * nx + i0, j0 * nx + i1, j1 * nx + i0, j1 * nx + i1], axis=1)
    w = np.stack([m * (gx * gy), m * (fx * gy), m * (gx * fy), m * (fx * fy)], axis=1)
    keep = m != 0.0
    out = np.bincount(idx[keep].ravel(), weights=w[keep].ravel(), minlength=nx * ny)
    return out.reshape(ny, nx)


def pava(y, w):
    sums, weights, lengths = [], [], []
    for yi, wi in zip(y, w):
        sums.append(yi * wi)
        weights.append(wi)
        lengths.append(1)
        while len(sums) > 1 and sums[-2] / weights[-2] > sums[-1] / weights[-1]:
            s, wt, ln = sums.pop(), weights.pop(), lengths.pop()
            sums[-1] += s
            weights[-1] += wt
            lengths[-1] += ln
    return np.repeat([s / wt for s, wt in zip(sums, weights)], lengths).astype(np.float64)


def _bil(a, b, c, e, kap, sx, sy, s, t):
    return a + b * s + c * t + e * s * t + kap * ((s - sx) * (s - sx) + (t - sy) * (t - sy))


def _clip01(s):
    return np.minimum(np.maximum(s, 0.0), 1.0)


def cell_candidates(a, b, c, e, kap, w):
    ny, nx = a.shape
    K = 4 * w * w
    val = np.empty((K, ny, nx))
    tx = np.empty((K, ny, nx))
    ty = np.empty((K, ny, nx))
    jj, ii = np.indices((ny, nx)).astype(np.float64)
    k2 = 2.0 * kap
    k = 0
    for oy in range(-w, w):
        sy = float(-oy)
        for ox in range(-w, w):
            sx = float(-ox)
            ca, cb, cc, ce = (np.roll(z, (-oy, -ox), axis=(0, 1)) for z in (a, b, c, e))
            x0 = ii + float(ox)
            y0 = jj + float(oy)
            best = np.full((ny, nx), np.inf)
            bx = x0.copy()
            by = y0.copy()

            def update(f, x, y):
                m = f < best
                best[m] = f[m]
                bx[m] = x[m]
                by[m] = y[m]

            u = k2 * sx - cb
            v = k2 * sy - cc
            det = k2 * k2 - ce * ce
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (u * k2 - ce * v) / det
                t = (v * k2 - ce * u) / det
            ok = (det > 0.0) & (s >= 0.0) & (s <= 1.0) & (t >= 0.0) & (t <= 1.0)
            s = np.where(ok, s, 0.0)
            t = np.where(ok, t, 0.0)
            f = np.where(ok, _bil(ca, cb, cc, ce, kap, sx, sy, s, t), np.inf)
            update(f, x0 + s, y0 + t)
            s = _clip01(sx - cb / k2)
            update(_bil(ca, cb, cc, ce, kap, sx, sy, s, 0.0), x0 + s, y0)
            s = _clip01(sx - (cb + ce) / k2)
            update(_bil(ca, cb, cc, ce, kap, sx, sy, s, 1.0), x0 + s, y0 + 1.0)
            t = _clip01(sy - cc / k2)
            update(_bil(ca, cb, cc, ce, kap, sx, sy, 0.0, t), x0, y0 + t)
            t = _clip01(sy - (cc + ce) / k2)
            update(_bil(ca, cb, cc, ce, kap, sx, sy, 1.0, t), x0 + 1.0, y0 + t)
            val[k], tx[k], ty[k] = best, bx, by
            k += 1
    return val, tx, ty
