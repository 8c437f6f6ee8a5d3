"""Kernel backend selection.

The hot data-movement loops (conv window gather/scatter, nearest upsample)
come in two interchangeable flavors: a compiled Cython extension and a
pure-numpy fallback; the conv GEMMs themselves go through BLAS either way. The choice happens once at import; GRADSHIELD_BACKEND overrides
("cython" | "numpy" | "auto"). ``benchmarks/bench_kernels.py`` compares both.
"""

import os

from . import numpy_backend

_requested = os.environ.get("GRADSHIELD_BACKEND", "auto").lower()

_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _fastkern as _impl
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "GRADSHIELD_BACKEND=cython but the compiled extension is "
                "not available; reinstall with build tools or use numpy"
            )
        _impl = None
if _impl is None:
    _impl = numpy_backend

ACTIVE_BACKEND = "cython" if _impl is not numpy_backend else "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
upsample2x_forward = _impl.upsample2x_forward
upsample2x_backward = _impl.upsample2x_backward


def backends_available():
    """Names of importable backends (for tests and the benchmark)."""
    found = ["numpy"]
    try:
        from . import _fastkern  # noqa: F401

        found.insert(0, "cython")
    except ImportError:
        pass
    return found
