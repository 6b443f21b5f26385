"""Conv kernel backends: loop-oracle agreement, backend parity, selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from deskdl.harness import bench_kernels
from deskdl.model.kernels import BACKEND, available_backends
import reference

BACKENDS = available_backends()


def _rel(a, b):
    denom = max(np.max(np.abs(b)), 1e-30)
    return np.max(np.abs(a - b)) / denom


def test_cython_extension_present():
    # the build ships the compiled core; auto selection must prefer it
    assert "cython" in BACKENDS
    assert BACKEND == "cython"


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(7)
    cases = [(1, 2, 5, 4, 3, 3, 1), (2, 3, 7, 6, 2, 3, 2), (1, 4, 6, 6, 5, 1, 1)]
    for n, cin, h, w, cout, k, dil in cases:
        x = rng.standard_normal((n, cin, h, w))
        wgt = rng.standard_normal((cout, cin, k, k))
        want = reference.conv2d_loops(x, wgt, stride=1, dilation=dil)
        for name, impl in BACKENDS.items():
            got, _ = impl.conv2d_forward(x, wgt, dilation=dil)
            assert got.shape == want.shape, name
            assert _rel(got, want) < 1e-12, (name, n, cin, h, w, cout, k, dil)


def test_backends_agree_forward_backward():
    if len(BACKENDS) < 2:
        pytest.skip("only one backend built")
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 5, 9, 7)).astype(np.float32)
    wgt = rng.standard_normal((4, 5, 3, 3)).astype(np.float32)
    dy = rng.standard_normal((2, 4, 9, 7)).astype(np.float32)
    outs = {}
    for name, impl in BACKENDS.items():
        y, cache = impl.conv2d_forward(x, wgt)
        dw = impl.conv2d_backward_weights(cache, dy, wgt.shape)
        dx = impl.conv2d_backward_input(dy, wgt, x.shape)
        outs[name] = (y, dw, dx)
    a = outs["python"]
    b = outs["cython"]
    for ta, tb in zip(a, b):
        assert ta.dtype == tb.dtype == np.float32
        assert _rel(ta.astype(np.float64), tb.astype(np.float64)) < 1e-5


def test_backward_weights_matches_fd():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((1, 2, 5, 4))
    wgt = rng.standard_normal((3, 2, 3, 3))
    for name, impl in BACKENDS.items():
        y, cache = impl.conv2d_forward(x, wgt)
        dw = impl.conv2d_backward_weights(cache, np.ones_like(y), wgt.shape)
        fd = reference.fd_gradient(
            lambda v: float(impl.conv2d_forward(x, v)[0].sum()), wgt)
        assert _rel(dw, fd) < 1e-7, name


def test_backward_input_matches_fd():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((1, 3, 4, 5))
    wgt = rng.standard_normal((2, 3, 3, 3))
    for name, impl in BACKENDS.items():
        y, _ = impl.conv2d_forward(x, wgt, dilation=2)
        dx = impl.conv2d_backward_input(np.ones_like(y), wgt, x.shape, dilation=2)
        fd = reference.fd_gradient(
            lambda v: float(impl.conv2d_forward(v, wgt, dilation=2)[0].sum()), x)
        assert _rel(dx, fd) < 1e-7, name


def test_dilation_changes_result():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 2, 8, 8))
    wgt = rng.standard_normal((2, 2, 3, 3))
    for impl in BACKENDS.values():
        y1, _ = impl.conv2d_forward(x, wgt, dilation=1)
        y2, _ = impl.conv2d_forward(x, wgt, dilation=2)
        assert _rel(y1, y2) > 1e-3


def test_stride_and_shape_validation():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    wgt = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
    bad_w = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    for impl in BACKENDS.values():
        try:
            impl.conv2d_forward(x, wgt, stride=2)
            assert False, "stride 2 should be rejected"
        except NotImplementedError:
            pass
        try:
            impl.conv2d_forward(x, bad_w)
            assert False, "channel mismatch should be rejected"
        except ValueError:
            pass


def _backend_in_subprocess(forced):
    env = dict(os.environ)
    if forced is None:
        env.pop("DESKDL_KERNELS", None)
    else:
        env["DESKDL_KERNELS"] = forced
    out = subprocess.run(
        [sys.executable, "-c",
         "from deskdl.model.kernels import BACKEND; print(BACKEND)"],
        capture_output=True, text=True, env=env)
    assert out.returncode == 0, out.stderr
    return out.stdout.strip()


def test_env_forced_selection():
    assert _backend_in_subprocess("python") == "python"
    if "cython" in BACKENDS:
        assert _backend_in_subprocess("cython") == "cython"
    assert _backend_in_subprocess(None) in ("python", "cython")


def test_bench_kernels_reports_both():
    rows = bench_kernels(shapes=((1, 3, 8, 6, 4, 3),), repeats=1)
    assert len(rows) == len(BACKENDS)
    names = {r["backend"] for r in rows}
    assert names == set(BACKENDS)
    for r in rows:
        assert r["fwd_bwd_s"] > 0
