"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``SKETCHLEARN_PURE_PYTHON=1`` to force the
fallback (the benchmark and the backend-agreement tests do this).
"""
import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("SKETCHLEARN_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("fallback forced by environment")
    from . import _ext as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def _prep(p, v, A):
    return (np.ascontiguousarray(p, dtype=np.int64),
            np.ascontiguousarray(v, dtype=np.float64),
            np.ascontiguousarray(A, dtype=np.float64))


def cs_apply_rows(p, v, A, m, impl=None):
    p, v, A = _prep(p, v, A)
    return (impl or _impl).cs_apply_rows(p, v, A, int(m))


def cs_apply_cols(p, v, A, m, impl=None):
    p, v, A = _prep(p, v, A)
    return (impl or _impl).cs_apply_cols(p, v, A, int(m))


def argmax_abs_inner(centers, rows, impl=None):
    # numpy's vectorised argmax beats the compiled scan (see benchmarks/),
    # so the fallback is the default here on both backends
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    return (impl or _fallback).argmax_abs_inner(centers, rows)


def implementations():
    """Map of available backend name -> module, fallback always present."""
    out = {"python": _fallback}
    try:
        from . import _ext
        out["cython"] = _ext
    except ImportError:
        pass
    return out
