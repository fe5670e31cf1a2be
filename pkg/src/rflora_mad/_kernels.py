"""Backend selection for the residual kernels.

The compiled Cython core is used when it was built; otherwise the numpy
fallback is loaded. Set ``RFLORA_MAD_PURE=1`` to force the fallback.
"""
import math
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("RFLORA_MAD_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels


def gaussian_weights(sigma: float) -> np.ndarray:
    """Sampled Gaussian, radius ceil(3*sigma), normalised to sum 1."""
    radius = int(math.ceil(3.0 * sigma))
    w = [math.exp(-(k * k) / (2.0 * sigma * sigma)) for k in range(-radius, radius + 1)]
    total = 0.0
    for v in w:
        total += v
    return np.array([v / total for v in w])


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python') or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
