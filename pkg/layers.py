"""
File name: layers.py

Description: Forward/backward pairs for the network building blocks on
single-sample (channels, height, width) float64 arrays. Every forward returns
its output and a cache; the matching backward takes the upstream gradient
and that cache and returns input gradients plus a dict of parameter gradients.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DimensionError

NORM_EPSILON = 1e-5


def _check_chw(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 3:
        raise DimensionError(f"{name} must be (channels, height, width), got shape {x.shape}")


# ---------------------------------------------------------------- convolution

def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Stride-1 'same' convolution with zero padding; weight is (out, in, k, k) with odd k."""
    _check_chw(x)
    out_channels, in_channels, k, _ = weight.shape
    if x.shape[0] != in_channels:
        raise DimensionError(f"conv2d expects {in_channels} input channels, got {x.shape[0]}")
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))  # (in, H, W, k, k)
    out = np.tensordot(weight, windows, axes=([1, 2, 3], [0, 3, 4])) + bias[:, None, None]
    return out, (x.shape, windows, weight)


def conv2d_backward(dout: np.ndarray, cache):
    shape, windows, weight = cache
    k = weight.shape[2]
    pad = k // 2
    _, height, width = shape
    d_weight = np.tensordot(dout, windows, axes=([1, 2], [1, 2]))
    d_bias = dout.sum(axis=(1, 2))
    d_windows = np.tensordot(weight, dout, axes=([0], [0]))  # (in, k, k, H, W)
    d_padded = np.zeros((shape[0], height + 2 * pad, width + 2 * pad))
    for i in range(k):
        for j in range(k):
            d_padded[:, i:i + height, j:j + width] += d_windows[:, i, j]
    dx = d_padded[:, pad:pad + height, pad:pad + width]
    return dx, {"weight": d_weight, "bias": d_bias}


# ---------------------------------------------------------------- normalization and activations

def instance_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Per-channel normalization over the spatial plane with a learned affine."""
    _check_chw(x)
    mean = x.mean(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=(1, 2), keepdims=True) + NORM_EPSILON)
    x_hat = (x - mean) * inv_std
    return gamma[:, None, None] * x_hat + beta[:, None, None], (x_hat, inv_std, gamma)


def instance_norm_backward(dout: np.ndarray, cache):
    x_hat, inv_std, gamma = cache
    n = x_hat.shape[1] * x_hat.shape[2]
    d_gamma = (dout * x_hat).sum(axis=(1, 2))
    d_beta = dout.sum(axis=(1, 2))
    d_hat = dout * gamma[:, None, None]
    dx = inv_std / n * (n * d_hat - d_hat.sum(axis=(1, 2), keepdims=True)
                        - x_hat * (d_hat * x_hat).sum(axis=(1, 2), keepdims=True))
    return dx, {"gamma": d_gamma, "beta": d_beta}


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, cache):
    return dout * cache


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so large magnitudes never overflow exp.
    out = np.empty_like(x, dtype=np.float64)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def sigmoid_backward(dout: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dout * y * (1.0 - y)


def tanh_backward(dout: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dout * (1.0 - y ** 2)


# ---------------------------------------------------------------- resampling

def maxpool2_forward(x: np.ndarray):
    _check_chw(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    winner = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, winner[..., None], axis=3)[..., 0]
    return out, (x.shape, winner)


def maxpool2_backward(dout: np.ndarray, cache):
    shape, winner = cache
    c, h, w = shape
    blocks = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, winner[..., None], dout[..., None], axis=3)
    return blocks.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def upsample2_forward(x: np.ndarray):
    _check_chw(x)
    return x.repeat(2, axis=1).repeat(2, axis=2), x.shape


def upsample2_backward(dout: np.ndarray, shape):
    c, h, w = shape
    return dout.reshape(c, h, 2, w, 2).sum(axis=(2, 4))


# ---------------------------------------------------------------- composite blocks

def conv_block_forward(x: np.ndarray, params: dict, prefix: str):
    """Two rounds of 3x3 conv, instance norm and ReLU."""
    caches = []
    out = x
    for stage in (1, 2):
        name = f"{prefix}.conv{stage}"
        out, conv_cache = conv2d_forward(out, params[f"{name}.weight"], params[f"{name}.bias"])
        out, norm_cache = instance_norm_forward(out, params[f"{name}.gamma"], params[f"{name}.beta"])
        out, relu_cache = relu_forward(out)
        caches.append((name, conv_cache, norm_cache, relu_cache))
    return out, caches


def accumulate_grads(grads: dict, prefix: str, local: dict) -> None:
    for key, value in local.items():
        name = f"{prefix}.{key}"
        grads[name] = grads.get(name, 0.0) + value


def conv_block_backward(dout: np.ndarray, caches, grads: dict):
    for name, conv_cache, norm_cache, relu_cache in reversed(caches):
        dout = relu_backward(dout, relu_cache)
        dout, local = instance_norm_backward(dout, norm_cache)
        accumulate_grads(grads, name, local)
        dout, local = conv2d_backward(dout, conv_cache)
        accumulate_grads(grads, name, local)
    return dout


def attention_gate_forward(skip: np.ndarray, gating: np.ndarray, params: dict, prefix: str):
    """
    Additive attention gate: psi = sigmoid(conv(relu(Wx*skip + Wg*gating))),
    output = skip * psi, with 1x1 convolutions throughout.
    """
    if skip.shape[1:] != gating.shape[1:]:
        raise DimensionError(f"Gate inputs differ in spatial size: {skip.shape} vs {gating.shape}")
    a_skip, skip_cache = conv2d_forward(skip, params[f"{prefix}.wx.weight"], params[f"{prefix}.wx.bias"])
    a_gate, gate_cache = conv2d_forward(gating, params[f"{prefix}.wg.weight"], params[f"{prefix}.wg.bias"])
    hidden, relu_cache = relu_forward(a_skip + a_gate)
    logits, psi_cache = conv2d_forward(hidden, params[f"{prefix}.psi.weight"], params[f"{prefix}.psi.bias"])
    psi = sigmoid(logits)
    return skip * psi, (skip, psi, skip_cache, gate_cache, relu_cache, psi_cache)


def attention_gate_backward(dout: np.ndarray, cache, grads: dict, prefix: str):
    skip, psi, skip_cache, gate_cache, relu_cache, psi_cache = cache
    d_skip = dout * psi
    d_logits = sigmoid_backward((dout * skip).sum(axis=0, keepdims=True), psi)
    d_hidden, local = conv2d_backward(d_logits, psi_cache)
    accumulate_grads(grads, f"{prefix}.psi", local)
    d_sum = relu_backward(d_hidden, relu_cache)
    d_skip_path, local = conv2d_backward(d_sum, skip_cache)
    accumulate_grads(grads, f"{prefix}.wx", local)
    d_gating, local = conv2d_backward(d_sum, gate_cache)
    accumulate_grads(grads, f"{prefix}.wg", local)
    return d_skip + d_skip_path, d_gating


def channel_attention_forward(x: np.ndarray, params: dict, prefix: str):
    """Squeeze-and-excitation: per-channel sigmoid scales from the spatial means."""
    _check_chw(x)
    fc1_weight = params[f"{prefix}.fc1.weight"]
    fc2_weight = params[f"{prefix}.fc2.weight"]
    squeezed = x.mean(axis=(1, 2))
    hidden_pre = fc1_weight @ squeezed + params[f"{prefix}.fc1.bias"]
    hidden = np.maximum(hidden_pre, 0.0)
    scale = sigmoid(fc2_weight @ hidden + params[f"{prefix}.fc2.bias"])
    return x * scale[:, None, None], (x, squeezed, hidden_pre, hidden, scale, fc1_weight, fc2_weight)


def channel_attention_backward(dout: np.ndarray, cache, grads: dict, prefix: str):
    x, squeezed, hidden_pre, hidden, scale, fc1_weight, fc2_weight = cache
    d_scale = (dout * x).sum(axis=(1, 2))
    d_logits = d_scale * scale * (1.0 - scale)
    accumulate_grads(grads, f"{prefix}.fc2", {"weight": np.outer(d_logits, hidden), "bias": d_logits})
    d_hidden = (fc2_weight.T @ d_logits) * (hidden_pre > 0)
    accumulate_grads(grads, f"{prefix}.fc1", {"weight": np.outer(d_hidden, squeezed), "bias": d_hidden})
    d_squeezed = fc1_weight.T @ d_hidden
    n = x.shape[1] * x.shape[2]
    return dout * scale[:, None, None] + d_squeezed[:, None, None] / n


# ---------------------------------------------------------------- recurrent cell

def conv_gru_forward(x: np.ndarray, hidden: np.ndarray, params: dict, prefix: str = "gru"):
    """
    Convolutional GRU step with 3x3 zero-padded convolutions:

        z = sigmoid(conv_z([x; h])), r = sigmoid(conv_r([x; h]))
        h~ = tanh(conv_h([x; r * h])), h' = (1 - z) * h + z * h~
    """
    _check_chw(x)
    _check_chw(hidden, "hidden")
    if x.shape[1:] != hidden.shape[1:]:
        raise DimensionError(f"ConvGRU input {x.shape} and hidden {hidden.shape} differ in spatial size")
    stacked = np.concatenate([x, hidden], axis=0)
    z_logits, z_cache = conv2d_forward(stacked, params[f"{prefix}.z.weight"], params[f"{prefix}.z.bias"])
    r_logits, r_cache = conv2d_forward(stacked, params[f"{prefix}.r.weight"], params[f"{prefix}.r.bias"])
    z = sigmoid(z_logits)
    r = sigmoid(r_logits)
    reset_stacked = np.concatenate([x, r * hidden], axis=0)
    h_logits, h_cache = conv2d_forward(reset_stacked, params[f"{prefix}.h.weight"], params[f"{prefix}.h.bias"])
    candidate = np.tanh(h_logits)
    new_hidden = (1.0 - z) * hidden + z * candidate
    return new_hidden, (x.shape[0], hidden, z, r, candidate, z_cache, r_cache, h_cache)


def conv_gru_backward(d_new: np.ndarray, cache, grads: dict, prefix: str = "gru"):
    """Returns (d_input, d_hidden)."""
    n_in, hidden, z, r, candidate, z_cache, r_cache, h_cache = cache
    d_hidden = d_new * (1.0 - z)
    d_z = d_new * (candidate - hidden)
    d_candidate = d_new * z

    d_reset_stacked, local = conv2d_backward(tanh_backward(d_candidate, candidate), h_cache)
    accumulate_grads(grads, f"{prefix}.h", local)
    d_x = d_reset_stacked[:n_in]
    d_rh = d_reset_stacked[n_in:]
    d_hidden = d_hidden + d_rh * r
    d_r = d_rh * hidden

    d_stacked_z, local = conv2d_backward(sigmoid_backward(d_z, z), z_cache)
    accumulate_grads(grads, f"{prefix}.z", local)
    d_stacked_r, local = conv2d_backward(sigmoid_backward(d_r, r), r_cache)
    accumulate_grads(grads, f"{prefix}.r", local)
    d_stacked = d_stacked_z + d_stacked_r
    return d_x + d_stacked[:n_in], d_hidden + d_stacked[n_in:]


