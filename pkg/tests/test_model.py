"""Autodiff, loss, metrics, synthetic scenes and checkpoint tests."""

import math
import os

import numpy as np

from deskdl.graph import OpGraph
from deskdl.model import (ClassWeights, MiniDenseNet, NetConfig, SceneConfig,
                          aggregate_frequencies, first_nonfinite, gen_dataset,
                          iou, iou_all, load_checkpoint, pixel_accuracy,
                          read_scene, save_checkpoint, uniform_weights,
                          weighted_ce_loss, write_scene)
from deskdl.model import ops

import reference


def _sum_through(graph, values, target, wrt):
    """d(sum(target))/d(wrt) both ways: analytic tape and finite differences."""
    out, tape = ops.run_forward(graph, values, targets=[target])
    grads = ops.run_backward(graph, tape, target, wrt=[wrt])

    base = np.asarray(values[wrt], dtype=np.float64)

    def fn(flat):
        v = dict(values)
        v[wrt] = flat.reshape(base.shape)
        o, _ = ops.run_forward(graph, v, targets=[target])
        return float(np.sum(o[target]))

    fd = reference.fd_gradient(fn, base.reshape(-1)).reshape(base.shape)
    return grads[wrt], fd


def _assert_close_grad(analytic, fd, tol=1e-4):
    scale = max(1.0, float(np.abs(fd).max()))
    err = float(np.abs(analytic - fd).max()) / scale
    assert err < tol, f"gradient mismatch {err:.3e}"


def test_gradcheck_conv2d():
    rng = np.random.default_rng(0)
    # execution kernels are stride-1 by design; downsampling is pooling's job
    for dilation in (1, 2):
        g = OpGraph()
        g.add_input("x")
        g.add_input("w", role="param")
        g.conv2d("x", "w", "c", kh=3, kw=3, cin=2, cout=3,
                 stride=1, dilation=dilation)
        vals = {"x": rng.normal(size=(2, 2, 5, 4)),
                "w": rng.normal(size=(3, 2, 3, 3))}
        for wrt in ("x", "w"):
            a, fd = _sum_through(g, vals, "c", wrt)
            _assert_close_grad(a, fd)


def test_gradcheck_matmul_bias_relu():
    rng = np.random.default_rng(1)
    g = OpGraph()
    g.add_input("a")
    g.add_input("b", role="param")
    g.matmul("a", "b", "mm")
    vals = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))}
    for wrt in ("a", "b"):
        an, fd = _sum_through(g, vals, "mm", wrt)
        _assert_close_grad(an, fd)

    g = OpGraph()
    g.add_input("x")
    g.add_input("b", role="param")
    g.bias_add("x", "b", "ba")
    vals = {"x": rng.normal(size=(2, 3, 2, 2)), "b": rng.normal(size=(3,))}
    for wrt in ("x", "b"):
        an, fd = _sum_through(g, vals, "ba", wrt)
        _assert_close_grad(an, fd)

    g = OpGraph()
    g.add_input("x")
    g.relu("x", "r")
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 0.05] += 0.2  # keep clear of the kink for the FD probe
    an, fd = _sum_through(g, {"x": x}, "r", "x")
    _assert_close_grad(an, fd)


def test_gradcheck_concat_pool_upsample_elementwise():
    rng = np.random.default_rng(2)
    g = OpGraph()
    g.add_input("u")
    g.add_input("v")
    g.concat(["u", "v"], "cat", axis=1)
    vals = {"u": rng.normal(size=(1, 2, 3, 3)), "v": rng.normal(size=(1, 4, 3, 3))}
    for wrt in ("u", "v"):
        an, fd = _sum_through(g, vals, "cat", wrt)
        _assert_close_grad(an, fd)

    g = OpGraph()
    g.add_input("x")
    g.avgpool("x", "p", window=2)
    an, fd = _sum_through(g, {"x": rng.normal(size=(1, 2, 4, 4))}, "p", "x")
    _assert_close_grad(an, fd)

    g = OpGraph()
    g.add_input("x")
    g.upsample("x", "up", factor=2)
    an, fd = _sum_through(g, {"x": rng.normal(size=(1, 2, 3, 2))}, "up", "x")
    _assert_close_grad(an, fd)

    g = OpGraph()
    g.add_input("u")
    g.add_input("v")
    g.elementwise(["u", "v"], "add", fn="add")
    g.elementwise(["u", "v"], "mul", fn="mul")
    g.elementwise(["u"], "sc", fn="scale", alpha=1.7)
    vals = {"u": rng.normal(size=(3, 4)), "v": rng.normal(size=(3, 4))}
    for tgt in ("add", "mul", "sc"):
        for wrt in ("u", "v") if tgt != "sc" else ("u",):
            an, fd = _sum_through(g, vals, tgt, wrt)
            _assert_close_grad(an, fd)


def test_gradcheck_softmax_ce():
    rng = np.random.default_rng(3)
    g = OpGraph()
    g.add_input("logits")
    g.add_input("labels", role="aux")
    g.add_input("cw", role="aux")
    g.softmax_ce("logits", "labels", "cw", "loss", classes=3)
    vals = {"logits": rng.normal(size=(2, 3, 2, 2)),
            "labels": rng.integers(0, 3, size=(2, 2, 2)),
            "cw": np.array([1.0, 7.7, 31.6])}
    an, fd = _sum_through(g, vals, "loss", "logits")
    _assert_close_grad(an, fd)


def test_gradcheck_composed_net():
    # float64 finite differences against the tape over >=100 coordinates
    cfg = NetConfig(channels_in=4, growth=16, block_layers=1, levels=1)
    net = MiniDenseNet(cfg, seed=7)
    rng = np.random.default_rng(11)

    values = {k: v.astype(np.float64) for k, v in net.params.items()}
    values["x"] = rng.normal(size=(1, 4, 4, 4))
    values["labels"] = rng.integers(0, 3, size=(1, 4, 4))
    values["class_weights"] = ClassWeights((0.9, 0.09, 0.01)).vector(np.float64)

    _, tape = ops.run_forward(net.graph, values, targets=[net.loss_name])
    grads = ops.run_backward(net.graph, tape, net.loss_name,
                             wrt=net.param_order)

    def loss_at(name, flat_idx, val):
        v = dict(values)
        arr = v[name].copy()
        arr.reshape(-1)[flat_idx] = val
        v[name] = arr
        out, _ = ops.run_forward(net.graph, v, targets=[net.loss_name])
        return float(out[net.loss_name][0])

    eps = 1e-6
    checked = 0
    worst = 0.0
    for name in net.param_order:
        arr = values[name]
        n = arr.size
        take = min(n, max(4, 120 // len(net.param_order)))
        for flat_idx in rng.choice(n, size=take, replace=False):
            base = float(arr.reshape(-1)[flat_idx])
            fd = (loss_at(name, flat_idx, base + eps)
                  - loss_at(name, flat_idx, base - eps)) / (2 * eps)
            an = float(grads[name].reshape(-1)[flat_idx])
            worst = max(worst, abs(an - fd))
            checked += 1
    assert checked >= 100
    assert worst < 1e-4, f"worst gradient error {worst:.3e} over {checked}"


def test_uniform_logits_loss_is_ln3():
    labels = np.random.default_rng(4).integers(0, 3, size=(2, 5, 5))
    for w in (uniform_weights(3, np.float64),
              ClassWeights((0.982, 0.017, 0.001)).vector(np.float64)):
        loss, dlogits = weighted_ce_loss(np.zeros((2, 3, 5, 5)), labels, w)
        assert abs(loss - math.log(3)) < 1e-12
        assert dlogits.shape == (2, 3, 5, 5)


def test_loss_matches_pixelwise_reference():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(2, 3, 4, 5))
    labels = rng.integers(0, 3, size=(2, 4, 5))
    w = np.array([1.0, 7.67, 31.62])
    loss, _ = weighted_ce_loss(logits, labels, w)
    ref = reference.weighted_ce_pixelwise(logits, labels, w)
    assert abs(loss - ref) < 1e-12


def test_loss_validation():
    z = np.zeros((1, 3, 2, 2))
    lab = np.zeros((1, 2, 2), dtype=int)
    for bad_w in (np.ones(2), np.array([1.0, -1.0, 1.0])):
        try:
            weighted_ce_loss(z, lab, bad_w)
            assert False
        except ValueError:
            pass
    try:
        weighted_ce_loss(z, np.full((1, 2, 2), 3), np.ones(3))
        assert False
    except ValueError:
        pass


def test_inverse_sqrt_weights():
    freqs = (0.982, 0.017, 0.001)
    cw = ClassWeights(freqs)
    expect = [1.0 / math.sqrt(f) for f in freqs]
    assert np.allclose(cw.weights, expect, rtol=0, atol=1e-12)
    # heavy class upweighted ~31.3x relative to background
    assert abs(cw.weights[2] / cw.weights[0] - math.sqrt(0.982 / 0.001)) < 1e-9
    for bad in ((0.5, 0.5, 0.1), (1.0,), (0.9, 0.2, -0.1)):
        try:
            ClassWeights(bad)
            assert False
        except ValueError:
            pass


def test_iou_cases():
    a = np.array([[0, 1], [2, 0]])
    assert iou(a, a, 1) == 1.0
    assert iou(a, a, 2) == 1.0
    b = np.array([[1, 0], [0, 2]])
    assert iou(a, b, 1) == 0.0
    # class absent from both prediction and truth counts as a perfect match
    assert iou(np.zeros((3, 3)), np.zeros((3, 3)), 2) == 1.0
    # prediction covers the truth plus as much again: 2 hits over 4 marked
    t = np.array([[1, 1, 0, 0]])
    p = np.array([[1, 1, 1, 1]])
    assert iou(p, t, 1) == 0.5
    assert iou_all(a, a, 3).shape == (3,)
    assert pixel_accuracy(a, a) == 1.0
    c = a.copy()
    c[0, 0] = 1
    assert pixel_accuracy(c, a) == 0.75
    try:
        iou(np.zeros((2, 2)), np.zeros((3, 3)), 0)
        assert False
    except ValueError:
        pass


def test_reference_softmax_rows():
    rng = np.random.default_rng(6)
    rows = reference.softmax_rows(rng.normal(size=(40, 3)) * 5)
    s = rows.sum(axis=1)
    assert np.all(np.abs(s - 1.0) < 1e-6)
    assert rows.min() >= 0


def test_net_output_shape_and_zero_input():
    net = MiniDenseNet(NetConfig(), seed=0)
    x = np.zeros((2, 16, 64, 48), dtype=np.float32)
    logits = net.forward(x)
    assert logits.shape == (2, 3, 64, 48)
    # zero input through zero biases leaves every class logit identical
    assert np.all(logits == logits[:, :1])
    labels = np.random.default_rng(7).integers(0, 3, size=(2, 64, 48))
    loss, _, tape = net.forward_loss(x, labels, uniform_weights(3))
    assert abs(loss - math.log(3)) < 1e-5
    assert first_nonfinite(tape) is None


def test_net_batch_validation():
    net = MiniDenseNet(NetConfig(), seed=0)
    for bad in (np.zeros((2, 15, 64, 48)), np.zeros((2, 16, 63, 48)),
                np.zeros((16, 64, 48))):
        try:
            net.forward(bad.astype(np.float32))
            assert False
        except Exception:
            pass


def test_first_nonfinite_flags_poisoned_forward():
    net = MiniDenseNet(NetConfig(channels_in=4, growth=16, block_layers=1,
                                 levels=0), seed=1)
    params = net.state_dict()
    params["stem.w"].reshape(-1)[0] = np.nan
    x = np.random.default_rng(8).normal(size=(1, 4, 4, 4)).astype(np.float32)
    labels = np.zeros((1, 4, 4), dtype=int)
    _, _, tape = net.forward_loss(x, labels, uniform_weights(3), params=params)
    assert first_nonfinite(tape) is not None


def test_scene_counts_and_aggregate():
    cfg = SceneConfig(count=12, channels=8, height=32, width=32,
                      streak_channels=(0, 1), blob_channels=(2, 3))
    scenes = gen_dataset(cfg, seed=3)
    assert len(scenes) == 12
    hw = 32 * 32
    for s in scenes:
        counts = s.class_counts()
        assert counts.sum() == hw
        for c in (1, 2):
            target = cfg.frequencies[c] * hw
            assert math.floor(target) <= counts[c] <= math.ceil(target) + 1
        assert set(np.unique(s.labels)) <= {0, 1, 2}
    agg = aggregate_frequencies(scenes)
    assert abs(agg.sum() - 1.0) < 1e-12
    assert abs(agg[0] - 0.982) < 0.01


def test_gen_dataset_deterministic():
    cfg = SceneConfig(count=3, channels=8, height=16, width=16,
                      streak_channels=(0,), blob_channels=(1,))
    a = gen_dataset(cfg, seed=9)
    b = gen_dataset(cfg, seed=9)
    for sa, sb in zip(a, b):
        assert sa.name == sb.name
        assert np.array_equal(sa.field, sb.field)
        assert np.array_equal(sa.labels, sb.labels)
    c = gen_dataset(cfg, seed=10)
    assert not np.array_equal(a[0].field, c[0].field)


def test_scene_file_round_trip(tmp_path):
    cfg = SceneConfig(count=1, channels=4, height=8, width=6,
                      streak_channels=(0,), blob_channels=(1,))
    scene = gen_dataset(cfg, seed=12)[0]
    path = os.path.join(tmp_path, "s0.scn")
    nbytes = write_scene(path, scene)
    assert nbytes == os.path.getsize(path)
    back = read_scene(path)
    assert np.array_equal(back.field, scene.field)
    assert np.array_equal(back.labels, scene.labels)
    # corrupted magic rejected
    raw = bytearray(open(path, "rb").read())
    raw[0] ^= 0xFF
    bad = os.path.join(tmp_path, "bad.scn")
    open(bad, "wb").write(bytes(raw))
    try:
        read_scene(bad)
        assert False
    except Exception:
        pass


def test_scene_config_validation():
    for kwargs in (dict(frequencies=(0.5, 0.5)),
                   dict(frequencies=(0.9, 0.2, -0.1)),
                   dict(channels=2, streak_channels=(5,)),
                   dict(height=0)):
        try:
            SceneConfig(**kwargs)
            assert False
        except ValueError:
            pass
    d = SceneConfig().to_dict()
    assert SceneConfig.from_dict(d) == SceneConfig()


def test_checkpoint_round_trip(tmp_path):
    net = MiniDenseNet(NetConfig(channels_in=4, growth=16, block_layers=1,
                                 levels=0), seed=2)
    path = os.path.join(tmp_path, "ck.npz")
    save_checkpoint(path, net.params)
    back = load_checkpoint(path)
    assert set(back) == set(net.params)
    for k in back:
        assert np.array_equal(back[k], net.params[k])
    net.load_state(back)
    try:
        net.load_state({k: v for k, v in back.items() if k != "stem.w"})
        assert False
    except KeyError:
        pass


def test_forward_determinism():
    net = MiniDenseNet(NetConfig(channels_in=4, growth=16, block_layers=1,
                                 levels=1), seed=5)
    x = np.random.default_rng(13).normal(size=(2, 4, 8, 8)).astype(np.float32)
    a = net.forward(x)
    b = net.forward(x)
    assert np.array_equal(a, b)
