"""
File name: unet.py

Description: Spatiotemporal U-Net on single frames. A channel-attention stem
weights the B-mode and feature channels, the encoder downsamples `depth`
times, a ConvGRU carries the bottleneck across frames, and the decoder merges
attention-gated skip features before a 1x1 sigmoid head.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import layers
from errors import FileFormatError, ShapeError

MAGIC = b"SSUN1"


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int = 2
    base_channels: int = 8
    depth: int = 3
    use_convgru: bool = True
    use_spatial_attention: bool = True
    use_channel_attention: bool = True

    def __post_init__(self):
        if self.in_channels < 1:
            raise ShapeError("in_channels must be >= 1")
        if self.base_channels < 1:
            raise ShapeError("base_channels must be >= 1")
        if self.depth < 1:
            raise ShapeError("depth must be >= 1")

    @classmethod
    def from_config(cls, section: dict) -> "UNetSpec":
        return cls(**{key: section[key] for key in cls.__dataclass_fields__})

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def bottleneck_channels(self) -> int:
        return self.channels(self.depth)

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ShapeError(f"Expected input ({self.in_channels}, H, W), got {x.shape}")
        factor = 2 ** self.depth
        if x.shape[1] % factor or x.shape[2] % factor:
            raise ShapeError(f"Input {x.shape[1]}x{x.shape[2]} is not divisible by 2^depth = {factor}")

    def state_shape(self, height: int, width: int) -> tuple[int, int, int]:
        factor = 2 ** self.depth
        return self.bottleneck_channels, height // factor, width // factor

    def zero_state(self, height: int, width: int) -> np.ndarray:
        return np.zeros(self.state_shape(height, width))


def parameter_shapes(spec: UNetSpec) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in declaration (serialization) order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def block(prefix: str, c_in: int, c_out: int) -> None:
        for stage, c in ((1, c_in), (2, c_out)):
            name = f"{prefix}.conv{stage}"
            shapes[f"{name}.weight"] = (c_out, c, 3, 3)
            shapes[f"{name}.bias"] = (c_out,)
            shapes[f"{name}.gamma"] = (c_out,)
            shapes[f"{name}.beta"] = (c_out,)

    if spec.use_channel_attention:
        hidden = max(2, spec.in_channels)
        shapes["stem.fc1.weight"] = (hidden, spec.in_channels)
        shapes["stem.fc1.bias"] = (hidden,)
        shapes["stem.fc2.weight"] = (spec.in_channels, hidden)
        shapes["stem.fc2.bias"] = (spec.in_channels,)
    c_in = spec.in_channels
    for level in range(spec.depth):
        block(f"enc{level}", c_in, spec.channels(level))
        c_in = spec.channels(level)
    block("bottleneck", c_in, spec.bottleneck_channels)
    if spec.use_convgru:
        c = spec.bottleneck_channels
        for gate in ("z", "r", "h"):
            shapes[f"gru.{gate}.weight"] = (c, 2 * c, 3, 3)
            shapes[f"gru.{gate}.bias"] = (c,)
    for level in reversed(range(spec.depth)):
        c_skip = spec.channels(level)
        c_up = spec.channels(level + 1)
        if spec.use_spatial_attention:
            inter = max(1, c_skip // 2)
            shapes[f"gate{level}.wx.weight"] = (inter, c_skip, 1, 1)
            shapes[f"gate{level}.wx.bias"] = (inter,)
            shapes[f"gate{level}.wg.weight"] = (inter, c_up, 1, 1)
            shapes[f"gate{level}.wg.bias"] = (inter,)
            shapes[f"gate{level}.psi.weight"] = (1, inter, 1, 1)
            shapes[f"gate{level}.psi.bias"] = (1,)
        block(f"dec{level}", c_up + c_skip, c_skip)
    shapes["head.weight"] = (1, spec.base_channels, 1, 1)
    shapes["head.bias"] = (1,)
    return shapes


def init_params(spec: UNetSpec, seed: int) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


def forward(spec: UNetSpec, params: dict[str, np.ndarray], x: np.ndarray, state: np.ndarray | None = None):
    """
    One frame through the network.

    Args:
        spec (UNetSpec): Architecture.
        params (dict): Parameters from `init_params` or `load_params`.
        x (np.ndarray): Input of shape (in_channels, H, W).
        state (np.ndarray, optional): ConvGRU hidden state; zeros when omitted.

    Returns:
        tuple: (pred (1, H, W) in (0, 1), new state, cache for `backward`).
    """
    spec.check_input(x)
    height, width = x.shape[1:]
    if state is None:
        state = spec.zero_state(height, width)
    elif state.shape != spec.state_shape(height, width):
        raise ShapeError(f"State shape {state.shape} does not match {spec.state_shape(height, width)}")
    cache: dict = {}

    out = x
    if spec.use_channel_attention:
        out, cache["stem"] = layers.channel_attention_forward(out, params, "stem")

    skips = []
    for level in range(spec.depth):
        out, cache[f"enc{level}"] = layers.conv_block_forward(out, params, f"enc{level}")
        skips.append(out)
        out, cache[f"pool{level}"] = layers.maxpool2_forward(out)
    out, cache["bottleneck"] = layers.conv_block_forward(out, params, "bottleneck")

    if spec.use_convgru:
        out, cache["gru"] = layers.conv_gru_forward(out, state, params, "gru")
        new_state = out
    else:
        new_state = state

    for level in reversed(range(spec.depth)):
        up, cache[f"up{level}"] = layers.upsample2_forward(out)
        skip = skips[level]
        if spec.use_spatial_attention:
            skip, cache[f"gate{level}"] = layers.attention_gate_forward(skip, up, params, f"gate{level}")
        merged = np.concatenate([up, skip], axis=0)
        out, cache[f"dec{level}"] = layers.conv_block_forward(merged, params, f"dec{level}")
        cache[f"split{level}"] = up.shape[0]

    logits, cache["head"] = layers.conv2d_forward(out, params["head.weight"], params["head.bias"])
    pred = layers.sigmoid(logits)
    cache["pred"] = pred
    return pred, new_state, cache


def backward(spec: UNetSpec, params: dict[str, np.ndarray], cache: dict, d_pred: np.ndarray,
             d_state_out: np.ndarray | None = None) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """
    Reverse pass for one frame.

    Args:
        d_pred (np.ndarray): Gradient of the loss w.r.t. pred, shape (1, H, W).
        d_state_out (np.ndarray, optional): Gradient arriving at the new state from later frames.

    Returns:
        tuple: (parameter gradients, gradient w.r.t. the incoming state or None
        when the network has no recurrent unit).
    """
    grads: dict[str, np.ndarray] = {}
    d_logits = layers.sigmoid_backward(d_pred, cache["pred"])
    d_out, local = layers.conv2d_backward(d_logits, cache["head"])
    layers.accumulate_grads(grads, "head", local)

    d_skips = {}
    for level in range(spec.depth):
        d_merged = layers.conv_block_backward(d_out, cache[f"dec{level}"], grads)
        split = cache[f"split{level}"]
        d_up, d_skip = d_merged[:split], d_merged[split:]
        if spec.use_spatial_attention:
            d_skip, d_gating = layers.attention_gate_backward(d_skip, cache[f"gate{level}"], grads, f"gate{level}")
            d_up = d_up + d_gating
        d_skips[level] = d_skip
        d_out = layers.upsample2_backward(d_up, cache[f"up{level}"])

    d_state_in = None
    if spec.use_convgru:
        if d_state_out is not None:
            d_out = d_out + d_state_out
        d_out, d_state_in = layers.conv_gru_backward(d_out, cache["gru"], grads, "gru")

    d_out = layers.conv_block_backward(d_out, cache["bottleneck"], grads)
    for level in reversed(range(spec.depth)):
        d_out = layers.maxpool2_backward(d_out, cache[f"pool{level}"])
        d_out = layers.conv_block_backward(d_out + d_skips[level], cache[f"enc{level}"], grads)

    if spec.use_channel_attention:
        layers.channel_attention_backward(d_out, cache["stem"], grads, "stem")
    return {name: grads.get(name, np.zeros_like(value)) for name, value in params.items()}, d_state_in


def channel_scales(spec: UNetSpec, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """Per-input-channel stem scales for one frame (ones without channel attention)."""
    if not spec.use_channel_attention:
        return np.ones(spec.in_channels)
    _, cache = layers.channel_attention_forward(x, params, "stem")
    return cache[4]


# ---------------------------------------------------------------- serialization

SPEC_FIELDS = ("in_channels", "base_channels", "depth", "use_convgru", "use_spatial_attention", "use_channel_attention")


def save_params(path: str | Path, spec: UNetSpec, params: dict[str, np.ndarray]) -> Path:
    """
    Write the parameter blob and its manifest (`<path>.manifest`).

    Layout: magic "SSUN1", six little-endian int32 spec fields, then every
    array as little-endian float64 in declaration order.
    """
    path = Path(path)
    header = MAGIC + struct.pack("<6i", *(int(getattr(spec, f)) for f in SPEC_FIELDS))
    offset = len(header)
    manifest = [f"# name offset_bytes shape  ({', '.join(f'{f}={int(getattr(spec, f))}' for f in SPEC_FIELDS)})"]
    with open(path, "wb") as handle:
        handle.write(header)
        for name, shape in parameter_shapes(spec).items():
            array = np.asarray(params[name], dtype="<f8")
            if array.shape != shape:
                raise ShapeError(f"Parameter {name} has shape {array.shape}, expected {shape}")
            handle.write(array.tobytes(order="C"))
            manifest.append(f"{name} {offset} {'x'.join(str(s) for s in shape)}")
            offset += array.nbytes
    manifest_path = path.with_name(path.name + ".manifest")
    manifest_path.write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return manifest_path


def load_params(path: str | Path) -> tuple[UNetSpec, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise FileFormatError(f"{path} is not an SSUN1 parameter file")
    values = struct.unpack_from("<6i", blob, len(MAGIC))
    spec = UNetSpec(*(bool(v) if i >= 3 else v for i, v in enumerate(values)))
    offset = len(MAGIC) + struct.calcsize("<6i")
    params = {}
    for name, shape in parameter_shapes(spec).items():
        count = int(np.prod(shape))
        if offset + 8 * count > len(blob):
            raise FileFormatError(f"{path} is truncated at parameter {name}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(blob):
        raise FileFormatError(f"{path} has {len(blob) - offset} trailing bytes")
    return spec, params
