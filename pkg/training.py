"""
File name: training.py

Description: Reset policies, network input assembly, gradient-descent
training with backpropagation through each reset window, and stateful
inference over frame sequences.
"""

import sys
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

import unet
from errors import DegenerateInputError, ShapeError, TrainingError
from geometry import CartesianImage, ImageGeometry
from losses import loss_and_grad
from normalization import to_unit_range
from scan_conversion import cartesian_to_polar
from unet import UNetSpec

RESET_KINDS = ("fixed_length", "align_with_scan", "none")


@dataclass(frozen=True)
class ResetPolicy:
    """When the ConvGRU state is zeroed: every k frames, at sweep boundaries, or every frame."""

    kind: str = "align_with_scan"
    k: int = 1

    def __post_init__(self):
        if self.kind not in RESET_KINDS:
            raise ValueError(f"Unknown reset policy '{self.kind}', expected one of {RESET_KINDS}")
        if self.kind == "fixed_length" and self.k < 1:
            raise ValueError("fixed_length reset needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "ResetPolicy":
        """Accepts 'align_with_scan', 'none', 'fixed_length:<k>' or 'fixed_length(<k>)'."""
        text = text.strip()
        if text.startswith("fixed_length"):
            digits = text[len("fixed_length"):].strip(":()= ")
            if not digits.isdigit():
                raise ValueError(f"fixed_length reset needs a frame count, got '{text}'")
            return cls("fixed_length", int(digits))
        return cls(text)

    def label(self) -> str:
        return f"fixed_length({self.k})" if self.kind == "fixed_length" else self.kind

    def windows(self, sweep_ids: list[int]) -> list[list[int]]:
        """Split frame positions 0..n-1 into consecutive windows between state resets."""
        n = len(sweep_ids)
        if self.kind == "none":
            return [[i] for i in range(n)]
        if self.kind == "fixed_length":
            return [list(range(start, min(start + self.k, n))) for start in range(0, n, self.k)]
        windows: list[list[int]] = []
        for i, sweep in enumerate(sweep_ids):
            if i == 0 or sweep != sweep_ids[i - 1]:
                windows.append([])
            windows[-1].append(i)
        return windows


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "w_dice"
    learning_rate: float = 0.05
    epochs: int = 30
    reset_policy: ResetPolicy = ResetPolicy()
    seed: int = 0
    ce_weight_lambda: float = 10.0
    step_per: str = "epoch"

    def __post_init__(self):
        if self.loss not in ("w_dice", "w_ce"):
            raise ValueError(f"Unknown loss '{self.loss}'")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ce_weight_lambda < 0:
            raise ValueError("ce_weight_lambda must be >= 0")
        if self.step_per not in ("epoch", "window"):
            raise ValueError(f"step_per must be 'epoch' or 'window', got '{self.step_per}'")

    @classmethod
    def from_config(cls, section: dict) -> "TrainConfig":
        return cls(
            loss=section["loss"],
            learning_rate=section["learning_rate"],
            epochs=section["epochs"],
            reset_policy=ResetPolicy.parse(section["reset_policy"]),
            seed=section["seed"],
            ce_weight_lambda=section["ce_weight_lambda"],
            step_per=section["step_per"],
        )


@dataclass
class Sequence:
    """Consecutive frames of one scan: network inputs (C, H, W), labels (H, W) and sweep ids."""

    inputs: list[np.ndarray]
    labels: list[np.ndarray]
    sweep_ids: list[int]

    def __post_init__(self):
        if not (len(self.inputs) == len(self.labels) == len(self.sweep_ids)):
            raise DegenerateInputError("Sequence inputs, labels and sweep ids differ in length")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_trace: list[float]


def frame_inputs(bmode: CartesianImage, feature: CartesianImage | None, geo: ImageGeometry,
                 in_channels: int = 2) -> np.ndarray:
    """
    Network input on the polar lattice: normalized B-mode, then the aggregated feature map.

    With one input channel only the B-mode is used.
    """
    channels = [to_unit_range(cartesian_to_polar(bmode, geo).data)]
    if in_channels == 2:
        if feature is None:
            raise ShapeError("Two-channel input needs a feature map")
        channels.append(np.clip(cartesian_to_polar(feature, geo).data, 0.0, 1.0))
    elif in_channels != 1:
        raise ShapeError(f"in_channels must be 1 or 2, got {in_channels}")
    return np.stack(channels)


def _window_pass(spec: UNetSpec, params: dict, config: TrainConfig, seq: Sequence, window: list[int]):
    """Forward a window from a zero state, then backpropagate through it. Returns (summed loss, grads)."""
    height, width = seq.inputs[window[0]].shape[1:]
    state = spec.zero_state(height, width)
    caches, d_preds, total = [], [], 0.0
    for i in window:
        pred, state, cache = unet.forward(spec, params, seq.inputs[i], state)
        loss, grad = loss_and_grad(config.loss, pred[0], seq.labels[i], config.ce_weight_lambda)
        total += loss
        caches.append(cache)
        d_preds.append(grad[None])

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    d_state = None
    for cache, d_pred in zip(reversed(caches), reversed(d_preds)):
        frame_grads, d_state = unet.backward(spec, params, cache, d_pred, d_state)
        for name, value in frame_grads.items():
            grads[name] += value
    return total, grads


def _step(params: dict, grads: dict, scale: float) -> None:
    for name in params:
        params[name] = params[name] - scale * grads[name]


def train(spec: UNetSpec, config: TrainConfig, sequences: list[Sequence],
          init: dict[str, np.ndarray] | None = None, verbose: bool = False) -> TrainResult:
    """
    Plain gradient descent on the mean per-frame loss.

    Gradients flow through the ConvGRU state inside a reset window and never
    across a reset. With step_per='epoch' the whole training set contributes
    one step per epoch; with 'window' every reset window takes its own step.

    Args:
        spec (UNetSpec): Architecture.
        config (TrainConfig): Loss, schedule and reset policy.
        sequences (list[Sequence]): Training scans in frame order.
        init (dict, optional): Starting parameters; seeded He init otherwise.
        verbose (bool): Show a progress bar on standard error.

    Returns:
        TrainResult: Final parameters and the mean loss of every epoch.

    Raises:
        TrainingError: When an epoch produces a non-finite loss.
    """
    jobs = [(seq, window) for seq in sequences for window in config.reset_policy.windows(seq.sweep_ids)]
    n_frames = sum(len(window) for _, window in jobs)
    if n_frames == 0:
        raise DegenerateInputError("Training set is empty")
    shapes = {x.shape for seq in sequences for x in seq.inputs}
    if len(shapes) != 1:
        raise ShapeError(f"Training inputs must share one shape, got {sorted(shapes)}")

    params = {name: value.copy() for name, value in (init or unet.init_params(spec, config.seed)).items()}
    trace = []
    for epoch in tqdm(range(config.epochs), desc="train", unit="epoch", file=sys.stderr, disable=not verbose):
        epoch_loss = 0.0
        accumulated = {name: np.zeros_like(value) for name, value in params.items()}
        for seq, window in jobs:
            loss, grads = _window_pass(spec, params, config, seq, window)
            epoch_loss += loss
            if not np.isfinite(loss):
                raise TrainingError("Loss became non-finite", epoch)
            if config.step_per == "window":
                _step(params, grads, config.learning_rate / len(window))
            else:
                for name, value in grads.items():
                    accumulated[name] += value
        if config.step_per == "epoch":
            _step(params, accumulated, config.learning_rate / n_frames)
        mean_loss = epoch_loss / n_frames
        if not np.isfinite(mean_loss) or not all(np.all(np.isfinite(v)) for v in params.values()):
            raise TrainingError("Training diverged", epoch)
        trace.append(float(mean_loss))
        if verbose:
            print(f"[DEBUG] epoch {epoch}: loss {mean_loss:.6f}", file=sys.stderr)
    return TrainResult(params, trace)


def infer_sequence(spec: UNetSpec, params: dict[str, np.ndarray], inputs: list[np.ndarray], sweep_ids: list[int],
                   policy: ResetPolicy) -> list[np.ndarray]:
    """Predictions (H, W) for consecutive frames, zeroing the state per `policy`."""
    preds: list[np.ndarray] = []
    for window in policy.windows(sweep_ids):
        state = None
        for i in window:
            pred, state, _ = unet.forward(spec, params, inputs[i], state)
            preds.append(pred[0])
    return preds
