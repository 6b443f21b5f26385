"""Pure-NumPy convolution kernels (fallback backend).

Forward and the weight gradient go through one im2col matrix and a single
GEMM each; the input gradient accumulates per-tap GEMMs into a padded
buffer, which avoids the scatter-add of a classic col2im.

Layout is [batch, channel, height, width] everywhere. Padding is 'same'
with the TensorFlow split: total = (k - 1) * dilation, before = total // 2.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _same_pads(k: int, dilation: int):
    total = (k - 1) * dilation
    before = total // 2
    return before, total - before


def _pad_input(x, kh, kw, dilation):
    pt, pb = _same_pads(kh, dilation)
    pl, pr = _same_pads(kw, dilation)
    if pt == pb == pl == pr == 0:
        return x, (0, 0)
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))), (pt, pl)


def _im2col(xpad, kh, kw, dilation, h_out, w_out):
    # columns laid out [N*Hout*Wout, Cin*Kh*Kw], tap-major to match weight layout
    n, c = xpad.shape[:2]
    cols = np.empty((n, c, kh, kw, h_out, w_out), dtype=xpad.dtype)
    for i in range(kh):
        for j in range(kw):
            ys = i * dilation
            xs = j * dilation
            cols[:, :, i, j] = xpad[:, :, ys:ys + h_out, xs:xs + w_out]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * h_out * w_out, c * kh * kw)


def conv2d_forward(x, w, stride=1, dilation=1):
    """Same-padded 2D convolution; returns (output, im2col cache for backward)."""
    if stride != 1:
        raise NotImplementedError("execution kernels support stride 1 only")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    xpad, _ = _pad_input(x, kh, kw, dilation)
    cols = _im2col(xpad, kh, kw, dilation, h, wd)
    out = cols @ w.reshape(cout, -1).T
    return out.reshape(n, h, wd, cout).transpose(0, 3, 1, 2).copy(), cols


def conv2d_backward_weights(cols, dy, w_shape, dilation=1):
    # the im2col cache already encodes the dilation
    cout = w_shape[0]
    dyf = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
    return (dyf.T @ cols).reshape(w_shape)


def conv2d_backward_input(dy, w, x_shape, stride=1, dilation=1):
    if stride != 1:
        raise NotImplementedError("execution kernels support stride 1 only")
    n, cin, h, wd = x_shape
    cout, _, kh, kw = w.shape
    pt, _ = _same_pads(kh, dilation)
    pl, _ = _same_pads(kw, dilation)
    dxpad = np.zeros((n, cin, h + (kh - 1) * dilation, wd + (kw - 1) * dilation),
                     dtype=dy.dtype)
    dyf = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            # dy [NHW, Cout] @ w-tap [Cout, Cin] accumulated at the tap offset
            tap = dyf @ w[:, :, i, j]
            ys = i * dilation
            xs = j * dilation
            dxpad[:, :, ys:ys + h, xs:xs + wd] += (
                tap.reshape(n, h, wd, cin).transpose(0, 3, 1, 2))
    return dxpad[:, :, pt:pt + h, pl:pl + wd].copy()
