"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Setting ``MVQ_PURE_PYTHON=1`` forces the fallback.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_ckernels = None
if os.environ.get("MVQ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # pragma: no cover - depends on build
        logger.debug("compiled kernels unavailable, using numpy fallback")

kernels = _ckernels if _ckernels is not None else _kernels_py
BACKEND = "cython" if _ckernels is not None else "python"

patch_matrix = kernels.patch_matrix
hs_iterate = kernels.hs_iterate


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _kernels_py}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out
