"""Finite-difference gradient checks for every layer primitive."""

import numpy as np
import pytest

from unmask import nn

RNG = np.random.default_rng(42)


def fd_param_check(forward_loss, layer, n_probe=40, eps=1e-6, rtol=1e-4):
    """Central differences on randomly probed parameter entries."""
    layer.zero_grads()
    loss, back = forward_loss()
    back()
    rng = np.random.default_rng(0)
    for name, p in layer.params().items():
        g = layer.grads()[name]
        flat = p.ravel()
        gflat = g.ravel()
        idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = forward_loss()
            flat[i] = orig - eps
            lm, _ = forward_loss()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            scale = max(abs(num), abs(gflat[i]), 1e-8)
            assert abs(num - gflat[i]) / scale < rtol, (name, i, num, gflat[i])


def fd_input_check(f_loss_grad, x, eps=1e-6, rtol=1e-4, n_probe=30):
    loss, gx = f_loss_grad(x)
    rng = np.random.default_rng(1)
    idx = rng.choice(x.size, size=min(n_probe, x.size), replace=False)
    flat = x.ravel()
    gflat = gx.ravel()
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        lp, _ = f_loss_grad(x)
        flat[i] = orig - eps
        lm, _ = f_loss_grad(x)
        flat[i] = orig
        num = (lp - lm) / (2 * eps)
        scale = max(abs(num), abs(gflat[i]), 1e-8)
        assert abs(num - gflat[i]) / scale < rtol, (i, num, gflat[i])


@pytest.mark.parametrize("stride,pad", [((1, 1), "same"), ((2, 2), "same"), ((1, 3), "same")])
def test_conv2d_grads(stride, pad):
    layer = nn.Conv2d(3, 4, (3, 3), stride=stride, padding=pad, rng=RNG)
    x = RNG.standard_normal((2, 3, 7, 11))
    probe = None

    def run():
        nonlocal probe
        y, cache = layer.forward(x)
        if probe is None:
            probe = np.random.default_rng(2).standard_normal(y.shape)
        return float(np.sum(y * probe)), lambda: layer.backward(cache, probe)

    fd_param_check(run, layer)

    def wrt_input(xx):
        layer.zero_grads()
        y, cache = layer.forward(xx)
        gx = layer.backward(cache, probe)
        return float(np.sum(y * probe)), gx

    fd_input_check(wrt_input, x)


@pytest.mark.parametrize("op", [(1, 0), (0, 0), (1, 1)])
def test_conv_transpose_grads(op):
    layer = nn.ConvTranspose2d(3, 2, (5, 5), stride=(2, 2), output_padding=op, rng=RNG)
    x = RNG.standard_normal((2, 3, 5, 6))
    probe = None

    def run():
        nonlocal probe
        y, cache = layer.forward(x)
        if probe is None:
            probe = np.random.default_rng(3).standard_normal(y.shape)
        return float(np.sum(y * probe)), lambda: layer.backward(cache, probe)

    fd_param_check(run, layer)

    def wrt_input(xx):
        layer.zero_grads()
        y, cache = layer.forward(xx)
        gx = layer.backward(cache, probe)
        return float(np.sum(y * probe)), gx

    fd_input_check(wrt_input, x)


def test_conv_transpose_shapes():
    layer = nn.ConvTranspose2d(4, 2, (5, 5), stride=(2, 2), output_padding=(1, 0), rng=RNG)
    y, _ = layer.forward(RNG.standard_normal((1, 4, 32, 65)))
    assert y.shape == (1, 2, 64, 129)


def test_instance_norm_grads():
    layer = nn.InstanceNorm2d(3)
    x = RNG.standard_normal((2, 3, 5, 7)) * 2.0 + 1.0
    layer.gamma[:] = RNG.uniform(0.5, 1.5, 3)
    layer.beta[:] = RNG.uniform(-0.5, 0.5, 3)
    probe = np.random.default_rng(4).standard_normal((2, 3, 5, 7))

    def run():
        y, cache = layer.forward(x)
        return float(np.sum(y * probe)), lambda: layer.backward(cache, probe)

    fd_param_check(run, layer, rtol=5e-4)

    def wrt_input(xx):
        layer.zero_grads()
        y, cache = layer.forward(xx)
        gx = layer.backward(cache, probe)
        return float(np.sum(y * probe)), gx

    fd_input_check(wrt_input, x, rtol=5e-4)


def test_conditional_instance_norm_grads():
    layer = nn.ConditionalInstanceNorm2d(3, 4)
    layer.gamma[...] = RNG.uniform(0.5, 1.5, (4, 3))
    layer.beta[...] = RNG.uniform(-0.5, 0.5, (4, 3))
    x = RNG.standard_normal((2, 3, 5, 7))
    code = np.zeros((2, 4))
    code[0, 1] = 1.0
    code[1, 3] = 1.0
    probe = np.random.default_rng(11).standard_normal((2, 3, 5, 7))

    def run():
        y, cache = layer.forward(x, code)
        return float(np.sum(y * probe)), lambda: layer.backward(cache, probe)

    fd_param_check(run, layer, rtol=5e-4)

    def wrt_input(xx):
        layer.zero_grads()
        y, cache = layer.forward(xx, code)
        gx = layer.backward(cache, probe)
        return float(np.sum(y * probe)), gx

    fd_input_check(wrt_input, x, rtol=5e-4)


def test_conditional_norm_selects_rows():
    layer = nn.ConditionalInstanceNorm2d(2, 4)
    layer.beta[2] = 7.0
    x = RNG.standard_normal((1, 2, 4, 4))
    code = np.zeros((1, 4))
    code[0, 2] = 1.0
    y, _ = layer.forward(x, code)
    assert abs(y.mean() - 7.0) < 0.2


def test_dense_grads():
    layer = nn.Dense(6, 4, rng=RNG)
    x = RNG.standard_normal((5, 6))
    probe = np.random.default_rng(5).standard_normal((5, 4))

    def run():
        y, cache = layer.forward(x)
        return float(np.sum(y * probe)), lambda: layer.backward(cache, probe)

    fd_param_check(run, layer)


def test_bilstm_grads():
    layer = nn.BiLSTM(5, 4, rng=RNG)
    x = RNG.standard_normal((7, 5))
    probe = np.random.default_rng(6).standard_normal((7, 8))

    def run():
        y, cache = layer.forward(x)
        return float(np.sum(y * probe)), lambda: layer.backward(cache, probe)

    fd_param_check(run, layer, n_probe=25, rtol=5e-4)

    def wrt_input(xx):
        layer.zero_grads()
        y, cache = layer.forward(xx)
        gx = layer.backward(cache, probe)
        return float(np.sum(y * probe)), gx

    fd_input_check(wrt_input, x, rtol=5e-4)


def test_glu_and_activations():
    x = RNG.standard_normal((2, 6, 3, 4))
    y, cache = nn.glu(x)
    assert y.shape == (2, 3, 3, 4)
    probe = np.random.default_rng(7).standard_normal(y.shape)
    gx = nn.glu_backward(cache, probe)
    eps = 1e-6
    rng = np.random.default_rng(8)
    for _ in range(20):
        i = rng.integers(x.size)
        orig = x.ravel()[i]
        x.ravel()[i] = orig + eps
        lp = np.sum(nn.glu(x)[0] * probe)
        x.ravel()[i] = orig - eps
        lm = np.sum(nn.glu(x)[0] * probe)
        x.ravel()[i] = orig
        num = (lp - lm) / (2 * eps)
        assert abs(num - gx.ravel()[i]) < 1e-5 * max(1, abs(num))


def test_sigmoid_range_and_grad():
    x = np.array([-800.0, -5.0, 0.0, 5.0, 800.0])
    y, cache = nn.sigmoid(x)
    assert np.all(y > 0) and np.all(y < 1)
    assert y[2] == 0.5
    g = nn.sigmoid_backward(cache, np.ones_like(x))
    assert np.all(np.isfinite(g))


def test_softmax_simplex():
    p = nn.softmax(RNG.standard_normal((10, 4)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    shifted = nn.softmax(np.zeros(4) + 3.0)
    np.testing.assert_allclose(shifted, 0.25)


def test_adam_matches_reference_update():
    # single-parameter hand-computed step
    p = np.array([1.0])
    opt = nn.Adam({"p": p}, lr=0.1, beta1=0.5, beta2=0.9)
    opt.step({"p": np.array([2.0])})
    m = 0.5 * 2.0
    v = 0.1 * 4.0
    expect = 1.0 - 0.1 * (m / 0.5) / (np.sqrt(v / 0.1) + 1e-8)
    np.testing.assert_allclose(p, expect, rtol=1e-12)


def test_adam_state_roundtrip():
    p1 = np.array([1.0, 2.0])
    p2 = p1.copy()
    o1 = nn.Adam({"p": p1}, lr=0.01)
    o2 = nn.Adam({"p": p2}, lr=0.01)
    g = {"p": np.array([0.3, -0.2])}
    o1.step(g)
    o2.load_state(o1.state())
    p2[...] = p1
    o1.step(g)
    o2.step(g)
    np.testing.assert_array_equal(p1, p2)
