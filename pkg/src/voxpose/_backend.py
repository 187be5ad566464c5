"""Select the ray-marching kernel at import time.

The compiled extension is preferred; setting VOXPOSE_BACKEND=python forces the
numpy implementation.
"""
import os

from . import _march_py

try:
    from . import _march as _compiled
except ImportError:  # extension not built
    _compiled = None

KERNELS = {"python": _march_py.march}
if _compiled is not None:
    KERNELS["compiled"] = _compiled.march

_requested = os.environ.get("VOXPOSE_BACKEND", "").strip().lower()
if _requested and _requested not in KERNELS:
    raise ImportError(f"VOXPOSE_BACKEND={_requested!r} is not available (have {sorted(KERNELS)})")
BACKEND = _requested or ("compiled" if "compiled" in KERNELS else "python")
march = KERNELS[BACKEND]
