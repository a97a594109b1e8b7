"""
File name: losses.py

Description: Weighted Dice and weighted cross-entropy losses on soft labels,
each returning the loss and its exact gradient w.r.t. the prediction.
"""

import numpy as np

from errors import DimensionError

DICE_EPSILON = 1e-6
CE_CLAMP = 1e-7


def _pair(pred: np.ndarray, label: np.ndarray, mask: np.ndarray | None):
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise DimensionError(f"Prediction {pred.shape} and label {label.shape} differ in shape")
    weight = np.ones_like(pred) if mask is None else np.asarray(mask, dtype=np.float64)
    if weight.shape != pred.shape:
        raise DimensionError(f"Mask {weight.shape} does not match prediction {pred.shape}")
    return pred, label, weight


def dice_score(pred: np.ndarray, label: np.ndarray, mask: np.ndarray | None = None) -> float:
    """(2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps) over the (optional) mask."""
    pred, label, weight = _pair(pred, label, mask)
    overlap = np.sum(weight * pred * label)
    power = np.sum(weight * pred ** 2) + np.sum(weight * label ** 2)
    return float((2.0 * overlap + DICE_EPSILON) / (power + DICE_EPSILON))


def w_dice_loss(pred: np.ndarray, label: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """
    Soft Dice loss: 1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps).

    Returns:
        tuple: (loss in [0, 1], gradient with the shape of pred).
    """
    pred, label, weight = _pair(pred, label, mask)
    overlap = 2.0 * np.sum(weight * pred * label) + DICE_EPSILON
    power = np.sum(weight * pred ** 2) + np.sum(weight * label ** 2) + DICE_EPSILON
    loss = 1.0 - overlap / power
    grad = -weight * (2.0 * label * power - overlap * 2.0 * pred) / power ** 2
    return float(loss), grad


def w_ce_loss(pred: np.ndarray, label: np.ndarray, weight_lambda: float = 10.0,
              mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """
    Pixel-weighted binary cross-entropy with weight 1 + lambda * g.

    Predictions are clamped to [1e-7, 1 - 1e-7]; clamped pixels get zero gradient.
    """
    if weight_lambda < 0:
        raise ValueError("weight_lambda must be >= 0")
    pred, label, inside = _pair(pred, label, mask)
    weight = inside * (1.0 + weight_lambda * label)
    total = weight.sum()
    if total == 0.0:
        return 0.0, np.zeros_like(pred)
    clamped = np.clip(pred, CE_CLAMP, 1.0 - CE_CLAMP)
    per_pixel = -label * np.log(clamped) - (1.0 - label) * np.log(1.0 - clamped)
    loss = np.sum(weight * per_pixel) / total
    active = (pred > CE_CLAMP) & (pred < 1.0 - CE_CLAMP)
    grad = np.where(active, weight * (-label / clamped + (1.0 - label) / (1.0 - clamped)) / total, 0.0)
    return float(loss), grad


def loss_and_grad(kind: str, pred: np.ndarray, label: np.ndarray, weight_lambda: float = 10.0,
                  mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    if kind == "w_dice":
        return w_dice_loss(pred, label, mask)
    if kind == "w_ce":
        return w_ce_loss(pred, label, weight_lambda, mask)
    raise ValueError(f"Unknown loss '{kind}', expected 'w_dice' or 'w_ce'")
