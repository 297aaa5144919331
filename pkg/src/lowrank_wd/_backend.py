"""Kernel selection.

The compiled extension is used when it imports; otherwise, or when
``LOWRANK_WD_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""
import os

from . import _fallback

kernels = _fallback
BACKEND = "python"

if os.environ.get("LOWRANK_WD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        kernels = _kernels
        BACKEND = "cython"
