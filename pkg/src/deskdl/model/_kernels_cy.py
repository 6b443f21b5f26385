"""Compiled-extension convolution backend (thin wrapper over the Cython core)."""

from __future__ import annotations

import numpy as np

from . import _convkernels
from ._kernels_py import _pad_input, _same_pads

BACKEND_NAME = "cython"


def conv2d_forward(x, w, stride=1, dilation=1):
    if stride != 1:
        raise NotImplementedError("execution kernels support stride 1 only")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    xpad, _ = _pad_input(np.ascontiguousarray(x), kh, kw, dilation)
    xpad = np.ascontiguousarray(xpad)
    out = np.empty((n, cout, h, wd), dtype=x.dtype)
    _convkernels.conv2d_forward_core(xpad, np.ascontiguousarray(w), out, dilation)
    return out, xpad


def conv2d_backward_weights(xpad, dy, w_shape, dilation=1):
    dw = np.empty(w_shape, dtype=dy.dtype)
    _convkernels.conv2d_backward_weights_core(xpad, np.ascontiguousarray(dy), dw, dilation)
    return dw


def conv2d_backward_input(dy, w, x_shape, stride=1, dilation=1):
    if stride != 1:
        raise NotImplementedError("execution kernels support stride 1 only")
    n, cin, h, wd = x_shape
    cout, _, kh, kw = w.shape
    pt, _ = _same_pads(kh, dilation)
    pl, _ = _same_pads(kw, dilation)
    dxpad = np.empty((n, cin, h + (kh - 1) * dilation, wd + (kw - 1) * dilation),
                     dtype=dy.dtype)
    _convkernels.conv2d_backward_input_core(np.ascontiguousarray(dy),
                                            np.ascontiguousarray(w), dxpad, dilation)
    return dxpad[:, :, pt:pt + h, pl:pl + wd].copy()
