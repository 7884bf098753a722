"""Kernel dispatch: the compiled extension when importable, else numpy.

Set ``PATCHFLOW_PURE=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("PATCHFLOW_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

lower_envelope_rows = _impl.lower_envelope_rows
splat_bilinear = _impl.splat_bilinear
pava = _impl.pava
cell_candidates = _impl.cell_candidates

__all__ = ["BACKEND", "lower_envelope_rows", "splat_bilinear", "pava", "cell_candidates", "_fallback"]
