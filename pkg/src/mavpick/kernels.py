"""Backend selection for the per-pixel kernels.

The compiled extension is used when importable; set ``MAVPICK_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("MAVPICK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

lab_image = _impl.lab_image
lab_box_masks = _impl.lab_box_masks
label8 = _impl.label8
trace_contour = _impl.trace_contour


def backends():
    """All importable backends as ``{name: module}``."""
    out = {"python": _pykernels}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
