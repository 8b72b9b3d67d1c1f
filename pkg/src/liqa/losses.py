"""Binary cross-entropy on logits and soft Dice loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

DICE_EPS = 1e-6


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """mean(log(1 + exp(-|z|)) + max(z, 0) - y z), the overflow-free form of
    log(1 + exp(-z)) + (1 - y) z."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype).reshape(z.shape)
    n = z.size
    loss = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - y * z
    out = np.asarray(loss.mean(), dtype=z.dtype)

    def backward(g):
        return ((T._sigmoid(z) - y) * (g / n),)

    return T._make(out, (logits,), backward, "bce")


def bce_naive(logits: np.ndarray, labels: np.ndarray) -> float:
    """-[y ln s + (1 - y) ln(1 - s)]; reference only, overflows for large |z|."""
    s = 1.0 / (1.0 + np.exp(-logits))
    return float(np.mean(-(labels * np.log(s) + (1 - labels) * np.log(1 - s))))


def dice_loss(probs: Tensor, gt, eps: float = DICE_EPS) -> Tensor:
    """1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps) per frame, averaged.

    Accepts a single map [H, W] or a batch [B, H, W].
    """
    g = np.asarray(gt, dtype=probs.dtype)
    if g.shape != probs.shape:
        raise T.ShapeError(f"dice_loss: prediction {probs.shape} and mask {g.shape} differ")
    if probs.ndim == 2:
        probs = T.reshape(probs, (1,) + probs.shape)
        g = g[None]
    axes = (1, 2)
    gt_t = Tensor(g, dtype=probs.dtype)
    inter = T.sum_(T.mul(probs, gt_t), axis=axes)
    denom = T.sum_(T.mul(probs, probs), axis=axes) + Tensor((g * g).sum(axis=axes) + eps, dtype=probs.dtype)
    dice = T.div(T.scale(inter, 2.0) + Tensor(eps, dtype=probs.dtype), denom)
    return T.mean(T.scale(dice, -1.0) + 1.0)


def dice_score(pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS) -> np.ndarray:
    """Per-frame Dice of binary masks [N, H, W]; empty vs empty scores 1."""
    p = np.asarray(pred, dtype=np.float64).reshape(len(pred), -1)
    g = np.asarray(gt, dtype=np.float64).reshape(len(gt), -1)
    return (2 * (p * g).sum(1) + eps) / ((p * p).sum(1) + (g * g).sum(1) + eps)
