"""Convolution kernel backend selection.

The compiled extension is preferred when it imported cleanly; the NumPy
implementation is the fallback. ``DESKDL_KERNELS=python|cython`` forces a
backend (``cython`` raises if the extension is unavailable). Both backends
share the pad/shape conventions, so results differ only in float summation
order.
"""

from __future__ import annotations

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _kernels_cy
except ImportError:  # extension not built; pure-python fallback
    _kernels_cy = None

_FORCED = os.environ.get("DESKDL_KERNELS", "auto").lower()
if _FORCED == "python":
    _impl = _kernels_py
elif _FORCED == "cython":
    if _kernels_cy is None:
        raise ImportError("DESKDL_KERNELS=cython but deskdl.model._convkernels is not built")
    _impl = _kernels_cy
else:
    _impl = _kernels_cy if _kernels_cy is not None else _kernels_py
    if _kernels_cy is None:
        log.info("compiled conv kernels unavailable, using NumPy fallback")

BACKEND = _impl.BACKEND_NAME

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weights = _impl.conv2d_backward_weights


def available_backends():
    out = {"python": _kernels_py}
    if _kernels_cy is not None:
        out["cython"] = _kernels_cy
    return out
