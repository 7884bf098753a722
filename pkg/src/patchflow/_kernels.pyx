# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  ``patchflow._fallback`` mirrors every function here."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


cdef inline double _cand(double fv, double scale, Py_ssize_t d) noexcept nogil:
    return fv + scale * <double>(d * d)


def lower_envelope_rows(const double[:, ::1] f, double scale):
    """Periodic min-convolution with ``scale * d**2`` along the last axis.

    ``out[r, i] = min_j f[r, j] + scale * dist(i, j)**2`` where ``dist`` is
    the wrapped index distance.  Linear time per row: the row is unrolled to
    three periods and the lower envelope of parabolas is built once.
    """
    cdef Py_ssize_t nrow = f.shape[0], n = f.shape[1]
    cdef Py_ssize_t m = 3 * n
    out_arr = np.empty((nrow, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t[::1] v = np.empty(m, dtype=np.intp)
    cdef double[::1] z = np.empty(m + 1, dtype=np.float64)
    cdef Py_ssize_t r, q, k, vq, kk, j
    cdef double fq, fv, s, best, c
    with nogil:
        for r in range(nrow):
            k = -1
            for q in range(m):
                fq = f[r, q % n]
                if fq == INFINITY:
                    continue
                if k < 0:
                    k = 0
                    v[0] = q
                    z[0] = -INFINITY
                    z[1] = INFINITY
                    continue
                while True:
                    vq = v[k]
                    fv = f[r, vq % n]
                    s = ((fq + scale * <double>(q * q)) - (fv + scale * <double>(vq * vq))) / (
                        2.0 * scale * <double>(q - vq))
                    if s <= z[k] and k > 0:
                        k -= 1
                        continue
                    if s <= z[k]:
                        # k == 0 and the new parabola dominates everywhere
                        v[0] = q
                        z[0] = -INFINITY
                        z[1] = INFINITY
                        break
                    k += 1
                    v[k] = q
                    z[k] = s
                    z[k + 1] = INFINITY
                    break
            if k < 0:
                for q in range(n):
                    out[r, q] = INFINITY
                continue
            kk = 0
            for q in range(n, 2 * n):
                while z[kk + 1] < <double>q:
                    kk += 1
                # guard against rounding in the breakpoints: check neighbours
                best = INFINITY
                for j in range(kk - 1, kk + 2):
                    if j < 0 or j > k:
                        continue
                    c = _cand(f[r, v[j] % n], scale, q - v[j])
                    if c < best:
                        best = c
                out[r, q - n] = best
    return out_arr


def splat_bilinear(const double[:, ::1] mass, const double[:, ::1] px, const double[:, ::1] py):
    """Deposit ``mass[j, i]`` at fractional cell position ``(px, py)``.

    Positions are in cell-index units; the four surrounding cells receive
    bilinear shares, with periodic wrap.  Sources are visited in row-major
    order and each deposits its corners in the order (0,0), (1,0), (0,1), (1,1).
    """
    cdef Py_ssize_t ny = mass.shape[0], nx = mass.shape[1]
    out_arr = np.zeros((ny, nx), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t j, i, i0, j0, i1, j1
    cdef double m, x, y, fx, fy, gx, gy
    with nogil:
        for j in range(ny):
            for i in range(nx):
                m = mass[j, i]
                if m == 0.0:
                    continue
                x = floor(px[j, i])
                y = floor(py[j, i])
                fx = px[j, i] - x
                fy = py[j, i] - y
                gx = 1.0 - fx
                gy = 1.0 - fy
                i0 = (<Py_ssize_t>x) % nx
                j0 = (<Py_ssize_t>y) % ny
                if i0 < 0:
                    i0 += nx
                if j0 < 0:
                    j0 += ny
                i1 = i0 + 1
                j1 = j0 + 1
                if i1 == nx:
                    i1 = 0
                if j1 == ny:
                    j1 = 0
                out[j0, i0] += m * (gx * gy)
                out[j0, i1] += m * (fx * gy)
                out[j1, i0] += m * (gx * fy)
                out[j1, i1] += m * (fx * fy)
    return out_arr


def pava(const double[::1] y, const double[::1] w):
    """Weighted least-squares nondecreasing fit (pool adjacent violators)."""
    cdef Py_ssize_t n = y.shape[0]
    cdef double[::1] bsum = np.empty(n, dtype=np.float64)
    cdef double[::1] bw = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] blen = np.empty(n, dtype=np.intp)
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, nb = 0, b, pos
    cdef double val
    with nogil:
        for i in range(n):
            bsum[nb] = y[i] * w[i]
            bw[nb] = w[i]
            blen[nb] = 1
            nb += 1
            while nb > 1 and bsum[nb - 2] / bw[nb - 2] > bsum[nb - 1] / bw[nb - 1]:
                bsum[nb - 2] += bsum[nb - 1]
                bw[nb - 2] += bw[nb - 1]
                blen[nb - 2] += blen[nb - 1]
                nb -= 1
        pos = 0
        for b in range(nb):
            val = bsum[b] / bw[b]
            for i in range(blen[b]):
                out[pos] = val
                pos += 1
    return out_arr


cdef inline double _bil(double a, double b, double c, double e, double kap,
                        double sx, double sy, double s, double t) noexcept nogil:
    return a + b * s + c * t + e * s * t + kap * ((s - sx) * (s - sx) + (t - sy) * (t - sy))


cdef inline double _clip01(double s) noexcept nogil:
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


def cell_candidates(const double[:, ::1] a, const double[:, ::1] b, const double[:, ::1] c,
                    const double[:, ::1] e, double kap, Py_ssize_t w):
    """Per-cell minima of the bilinear interpolant plus ``kap * |y - x|**2``.

    ``a, b, c, e`` are the per-cell bilinear coefficients (cell anchored at its
    lower-left node).  For every source cell center and each of the ``(2w)**2``
    cells around it, the minimum over the closed cell is found in closed form
    (interior stationary point, then the four edges).  Returns arrays
    ``(value, tx, ty)`` of shape ``(K, ny, nx)``; positions are unwrapped
    cell-index coordinates.  Offsets are ordered row-major from ``(-w, -w)``.
    """
    cdef Py_ssize_t ny = a.shape[0], nx = a.shape[1], K = 4 * w * w
    val_arr = np.empty((K, ny, nx), dtype=np.float64)
    tx_arr = np.empty((K, ny, nx), dtype=np.float64)
    ty_arr = np.empty((K, ny, nx), dtype=np.float64)
    cdef double[:, :, ::1] val = val_arr
    cdef double[:, :, ::1] tx = tx_arr
    cdef double[:, :, ::1] ty = ty_arr
    cdef Py_ssize_t i, j, ox, oy, ci, cj, k
    cdef double best, bx, by, ca, cb, cc, ce, sx, sy, k2, u, v, det, s, t, f, x0, y0
    k2 = 2.0 * kap
    with nogil:
        k = 0
        for oy in range(-w, w):
            sy = <double>(-oy)
            for ox in range(-w, w):
                sx = <double>(-ox)
                for j in range(ny):
                    cj = (j + oy) % ny
                    if cj < 0:
                        cj += ny
                    y0 = <double>(j + oy)
                    for i in range(nx):
                        ci = (i + ox) % nx
                        if ci < 0:
                            ci += nx
                        x0 = <double>(i + ox)
                        ca = a[cj, ci]
                        cb = b[cj, ci]
                        cc = c[cj, ci]
                        ce = e[cj, ci]
                        best = INFINITY
                        bx = x0
                        by = y0
                        u = k2 * sx - cb
                        v = k2 * sy - cc
                        det = k2 * k2 - ce * ce
                        if det > 0.0:
                            s = (u * k2 - ce * v) / det
                            t = (v * k2 - ce * u) / det
                            if s >= 0.0 and s <= 1.0 and t >= 0.0 and t <= 1.0:
                                best = _bil(ca, cb, cc, ce, kap, sx, sy, s, t)
                                bx = x0 + s
                                by = y0 + t
                        s = _clip01(sx - cb / k2)
                        f = _bil(ca, cb, cc, ce, kap, sx, sy, s, 0.0)
                        if f < best:
                            best = f
                            bx = x0 + s
                            by = y0
                        s = _clip01(sx - (cb + ce) / k2)
                        f = _bil(ca, cb, cc, ce, kap, sx, sy, s, 1.0)
                        if f < best:
                            best = f
                            bx = x0 + s
                            by = y0 + 1.0
                        t = _clip01(sy - cc / k2)
                        f = _bil(ca, cb, cc, ce, kap, sx, sy, 0.0, t)
                        if f < best:
                            best = f
                            bx = x0
                            by = y0 + t
                        t = _clip01(sy - (cc + ce) / k2)
                        f = _bil(ca, cb, cc, ce, kap, sx, sy, 1.0, t)
                        if f < best:
                            best = f
                            bx = x0 + 1.0
                            by = y0 + t
                        val[k, j, i] = best
                        tx[k, j, i] = bx
                        ty[k, j, i] = by
                k += 1
    return val_arr, tx_arr, ty_arr
