"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``use_backend`` switches at run time (tests and benchmarks
exercise both).
"""
from __future__ import annotations

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("softmax_fwd", "softmax_bwd", "layernorm_fwd", "layernorm_bwd",
          "maxpool_fwd", "maxpool_bwd")

BACKEND = "compiled" if _ckernels is not None else "python"


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _ckernels is not None else [])


def use_backend(name: str) -> str:
    """Select ``"python"`` or ``"compiled"``; returns the previous backend."""
    global BACKEND
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "compiled" and _ckernels is None:
        raise ImportError("compiled kernels are not built; run `pip install -e .`")
    prev, BACKEND = BACKEND, name
    return prev


def _impl():
    return _ckernels if BACKEND == "compiled" else _pykernels


def _c(a):
    return np.ascontiguousarray(a)


def softmax_fwd(x):
    return _impl().softmax_fwd(_c(x))


def softmax_bwd(y, gy):
    return _impl().softmax_bwd(_c(y), _c(gy))


def layernorm_fwd(x, gamma, beta, eps):
    return _impl().layernorm_fwd(_c(x), _c(gamma), _c(beta), float(eps))


def layernorm_bwd(gy, xhat, rstd, gamma):
    return _impl().layernorm_bwd(_c(gy), _c(xhat), _c(rstd), _c(gamma))


def maxpool_fwd(x, segment):
    return _impl().maxpool_fwd(_c(x), int(segment))


def maxpool_bwd(gout, idx, d):
    return _impl().maxpool_bwd(_c(gout), _c(idx).astype(np.int64, copy=False), int(d))
