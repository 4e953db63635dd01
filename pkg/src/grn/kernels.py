"""Hot-kernel dispatch.

Uses the compiled ``grn._kernels`` extension when it is importable and falls
back to the numpy versions otherwise. Set ``GRN_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _kernels_py

if os.environ.get("GRN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

band_plv = _impl.band_plv
msc_mean = _impl.msc_mean
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


def available_backends():
    """Map backend name -> kernel module for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
