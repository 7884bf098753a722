"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--n 128] [--repeat 5] [--no-project]

Each kernel is called with the same inputs on both backends; outputs are
compared bitwise before timing.  The end-to-end row runs one projection of
the golden first step in a subprocess per backend, since the backend is
chosen at import time through PATCHFLOW_PURE.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from patchflow import _fallback
from patchflow.projection import _bilinear_coefficients, _window

try:
    from patchflow import _kernels
except ImportError:
    sys.exit("compiled extension not built; run `pip install --no-build-isolation -e .` first")

PROJECT_SNIPPET = """
import time
from patchflow.config import parse_config
from patchflow.driver import initial_state
from patchflow.field_grid import ScalarField
from patchflow.kernels import BACKEND
from patchflow.projection import project
cfg = parse_config("grid.n={n}\\nrun.tau=1/256\\nrun.initial_density=disk:0.2\\n").run
s = initial_state(cfg)
mu = s.rho * (ScalarField.constant(cfg.grid, 1.0) + s.n * cfg.tau)
t0 = time.perf_counter()
res = project(mu, cfg.projection)
print(BACKEND, time.perf_counter() - t0, res.iterations)
"""


def kernel_cases(n, rng):
    h, tau = 2.0 / n, 1.0 / 256
    p = np.maximum(0.0, 2e-3 - np.add.outer(np.linspace(-1, 1, n) ** 2, np.linspace(-1, 1, n) ** 2) * 0.05)
    a, b, c, e = _bilinear_coefficients(p)
    kap = h * h / (2 * tau)
    w = _window(float(a.max()), kap)
    mass = rng.uniform(0, 1, (n, n))
    jj, ii = np.indices((n, n)).astype(float)
    px = np.ascontiguousarray(ii + rng.uniform(-2, 2, (n, n)))
    py = np.ascontiguousarray(jj + rng.uniform(-2, 2, (n, n)))
    y = rng.normal(size=n * 64)
    return {
        "lower_envelope_rows": (np.ascontiguousarray(p), 1.0 / (2 * tau) * h * h),
        "splat_bilinear": (mass, px, py),
        "pava": (y, np.ones_like(y)),
        f"cell_candidates (w={w})": (a, b, c, e, kap, w),
    }


def same(x, y):
    if isinstance(x, tuple):
        return all(same(u, v) for u, v in zip(x, y))
    return np.array_equal(np.asarray(x), np.asarray(y))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-project", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}  identical")
    for label, inputs in kernel_cases(args.n, rng).items():
        name = label.split()[0]
        fast, slow = getattr(_kernels, name), getattr(_fallback, name)
        ident = same(fast(*inputs), slow(*inputs))
        tf = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat)) * 1e3
        ts = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:34s} {tf:10.3f} {ts:10.3f} {ts / tf:8.1f}  {ident}")

    if args.no_project:
        return
    times = {}
    for pure in ("0", "1"):
        env = dict(os.environ, PATCHFLOW_PURE=pure)
        out = subprocess.run(
            [sys.executable, "-c", PROJECT_SNIPPET.format(n=args.n)], env=env, capture_output=True, text=True, check=True
        ).stdout.split()
        times[out[0]] = (float(out[1]) * 1e3, out[2])
    (tc, ic), (tp, ip) = times["cython"], times["python"]
    print(f"{'project (first golden step)':34s} {tc:10.1f} {tp:10.1f} {tp / tc:8.1f}  iterations {ic}/{ip}")


if __name__ == "__main__":
    main()
