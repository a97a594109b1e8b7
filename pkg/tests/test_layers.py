import numpy as np
import pytest

import layers
from conftest import numeric_gradient, relative_error
from errors import DimensionError

TOLERANCE = 1e-5


def check(func, array, analytic):
    assert relative_error(numeric_gradient(func, array), analytic) < TOLERANCE


def block_params(rng, prefix, c_in, c_out):
    params = {}
    for stage, c in ((1, c_in), (2, c_out)):
        name = f"{prefix}.conv{stage}"
        params[f"{name}.weight"] = rng.normal(size=(c_out, c, 3, 3))
        params[f"{name}.bias"] = rng.normal(size=c_out)
        params[f"{name}.gamma"] = rng.normal(size=c_out)
        params[f"{name}.beta"] = rng.normal(size=c_out)
    return params


def test_conv2d_matches_direct_sum(rng):
    x = rng.normal(size=(2, 5, 6))
    weight = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    out, _ = layers.conv2d_forward(x, weight, bias)
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expected = np.empty((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                expected[o, i, j] = np.sum(weight[o] * padded[:, i:i + 3, j:j + 3]) + bias[o]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_gradients(rng):
    x = rng.normal(size=(2, 5, 6))
    weight = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    upstream = rng.normal(size=(3, 5, 6))

    def objective():
        return float(np.sum(layers.conv2d_forward(x, weight, bias)[0] * upstream))

    _, cache = layers.conv2d_forward(x, weight, bias)
    dx, grads = layers.conv2d_backward(upstream, cache)
    check(objective, x, dx)
    check(objective, weight, grads["weight"])
    check(objective, bias, grads["bias"])


def test_conv2d_rejects_wrong_channels(rng):
    with pytest.raises(DimensionError):
        layers.conv2d_forward(rng.normal(size=(3, 4, 4)), rng.normal(size=(1, 2, 3, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        layers.conv2d_forward(rng.normal(size=(4, 4)), rng.normal(size=(1, 2, 3, 3)), np.zeros(1))


def test_instance_norm_gradients(rng):
    x = rng.normal(size=(2, 4, 5))
    gamma = rng.normal(size=2)
    beta = rng.normal(size=2)
    upstream = rng.normal(size=(2, 4, 5))

    def objective():
        return float(np.sum(layers.instance_norm_forward(x, gamma, beta)[0] * upstream))

    out, cache = layers.instance_norm_forward(x, gamma, beta)
    np.testing.assert_allclose((out - beta[:, None, None]).mean(axis=(1, 2)), 0.0, atol=1e-12)
    dx, grads = layers.instance_norm_backward(upstream, cache)
    check(objective, x, dx)
    check(objective, gamma, grads["gamma"])
    check(objective, beta, grads["beta"])


def test_maxpool_and_upsample(rng):
    x = rng.normal(size=(2, 4, 6))
    upstream = rng.normal(size=(2, 2, 3))
    out, cache = layers.maxpool2_forward(x)
    np.testing.assert_array_equal(out[1, 0, 2], x[1, 0:2, 4:6].max())
    check(lambda: float(np.sum(layers.maxpool2_forward(x)[0] * upstream)), x, layers.maxpool2_backward(upstream, cache))

    up, shape = layers.upsample2_forward(upstream)
    assert up.shape == (2, 4, 6)
    np.testing.assert_array_equal(up[:, 2:4, 4:6], upstream[:, 1:2, 2:3] * np.ones((1, 2, 2)))
    back = rng.normal(size=(2, 4, 6))
    check(lambda: float(np.sum(layers.upsample2_forward(upstream)[0] * back)), upstream,
          layers.upsample2_backward(back, shape))
    with pytest.raises(DimensionError):
        layers.maxpool2_forward(rng.normal(size=(1, 3, 4)))


def test_sigmoid_is_stable():
    values = layers.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(values, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(values))


def test_conv_block_gradients(rng):
    params = block_params(rng, "b", 2, 3)
    x = rng.normal(size=(2, 4, 4))
    upstream = rng.normal(size=(3, 4, 4))

    def objective():
        return float(np.sum(layers.conv_block_forward(x, params, "b")[0] * upstream))

    _, caches = layers.conv_block_forward(x, params, "b")
    grads = {}
    dx = layers.conv_block_backward(upstream, caches, grads)
    check(objective, x, dx)
    for name in ("b.conv1.weight", "b.conv2.gamma", "b.conv2.bias"):
        check(objective, params[name], grads[name])


def test_attention_gate_gradients(rng):
    params = {
        "g.wx.weight": rng.normal(size=(2, 4, 1, 1)), "g.wx.bias": rng.normal(size=2),
        "g.wg.weight": rng.normal(size=(2, 3, 1, 1)), "g.wg.bias": rng.normal(size=2),
        "g.psi.weight": rng.normal(size=(1, 2, 1, 1)), "g.psi.bias": rng.normal(size=1),
    }
    skip = rng.normal(size=(4, 4, 4))
    gating = rng.normal(size=(3, 4, 4))
    upstream = rng.normal(size=(4, 4, 4))

    def objective():
        return float(np.sum(layers.attention_gate_forward(skip, gating, params, "g")[0] * upstream))

    out, cache = layers.attention_gate_forward(skip, gating, params, "g")
    psi = cache[1]
    assert psi.shape == (1, 4, 4) and np.all((psi > 0) & (psi < 1))
    np.testing.assert_allclose(out, skip * psi)
    grads = {}
    d_skip, d_gating = layers.attention_gate_backward(upstream, cache, grads, "g")
    check(objective, skip, d_skip)
    check(objective, gating, d_gating)
    for name in ("g.wx.weight", "g.wg.bias", "g.psi.weight"):
        check(objective, params[name], grads[name])
    with pytest.raises(DimensionError):
        layers.attention_gate_forward(skip, rng.normal(size=(3, 2, 2)), params, "g")


def test_channel_attention_gradients(rng):
    params = {
        "s.fc1.weight": rng.normal(size=(2, 2)), "s.fc1.bias": rng.normal(size=2),
        "s.fc2.weight": rng.normal(size=(2, 2)), "s.fc2.bias": rng.normal(size=2),
    }
    x = rng.normal(size=(2, 4, 4)) + 0.5
    upstream = rng.normal(size=(2, 4, 4))

    def objective():
        return float(np.sum(layers.channel_attention_forward(x, params, "s")[0] * upstream))

    out, cache = layers.channel_attention_forward(x, params, "s")
    scale = cache[4]
    np.testing.assert_allclose(out, x * scale[:, None, None])
    grads = {}
    dx = layers.channel_attention_backward(upstream, cache, grads, "s")
    check(objective, x, dx)
    for name in params:
        check(objective, params[name], grads[name])


def test_conv_gru_gradients(rng):
    params = {}
    for gate in ("z", "r", "h"):
        params[f"gru.{gate}.weight"] = 0.5 * rng.normal(size=(2, 4, 3, 3))
        params[f"gru.{gate}.bias"] = rng.normal(size=2)
    x = rng.normal(size=(2, 3, 3))
    hidden = rng.normal(size=(2, 3, 3))
    upstream = rng.normal(size=(2, 3, 3))

    def objective():
        return float(np.sum(layers.conv_gru_forward(x, hidden, params)[0] * upstream))

    _, cache = layers.conv_gru_forward(x, hidden, params)
    grads = {}
    dx, dh = layers.conv_gru_backward(upstream, cache, grads)
    check(objective, x, dx)
    check(objective, hidden, dh)
    for name in params:
        check(objective, params[name], grads[name])


def test_conv_gru_keeps_state_when_update_gate_closed(rng):
    params = {}
    for gate in ("z", "r", "h"):
        params[f"gru.{gate}.weight"] = np.zeros((2, 4, 3, 3))
        params[f"gru.{gate}.bias"] = np.zeros(2)
    params["gru.z.bias"] = np.full(2, -1000.0)
    hidden = rng.normal(size=(2, 3, 3))
    new_hidden, _ = layers.conv_gru_forward(rng.normal(size=(2, 3, 3)), hidden, params)
    np.testing.assert_allclose(new_hidden, hidden)
