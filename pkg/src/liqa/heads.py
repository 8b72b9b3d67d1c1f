"""Task heads: a single linear classifier and a small U-shaped mask decoder,
plus the rule that turns a predicted mask into a frame label."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, Parameter
from .tensor import Tensor
from .vit import EncoderConfig


class ClsHead(Module):
    """logit = W . embedding + b. Zero-initialised, so a fresh head predicts 0."""

    def __init__(self, embed_dim: int):
        self.weight = Parameter(np.zeros((1, embed_dim)))
        self.bias = Parameter(np.zeros(1))

    def forward(self, embedding: Tensor) -> Tensor:
        """[B, D] -> [B] logits."""
        if embedding.shape[-1] != self.weight.shape[1]:
            raise T.ShapeError(f"classify: embedding width {embedding.shape[-1]} != {self.weight.shape[1]}")
        out = T.matmul(embedding, T.transpose(self.weight)) + self.bias
        return T.reshape(out, out.shape[:-1])


def classify(embedding, head: ClsHead) -> Tensor:
    emb = T.as_tensor(embedding)
    if emb.ndim == 1:
        return head(T.reshape(emb, (1, -1)))[0]
    return head(emb)


def predict_label(logits) -> np.ndarray:
    """Label 1 iff sigmoid(logit) > 0.5, i.e. logit > 0."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (data > 0).astype(np.int64)


class SegDecoder(Module):
    """Lightweight UNETR-style decoder.

    Patch tokens are tapped at blocks depth//2 and depth. The deep map is
    concatenated with a 1x1 projection of the mid-depth map at token
    resolution, then upsampled log2(patch) times by (nearest x2, conv3x3,
    ReLU) with channels halving from embed_dim. A final 1x1 conv gives one
    logit per pixel.
    """

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        p = cfg.patch_size
        if p & (p - 1):
            raise ValueError(f"SegDecoder needs a power-of-two patch size, got {p}")
        n_up = int(math.log2(p))
        d = cfg.embed_dim
        if d >> n_up < 1:
            raise ValueError(f"embed_dim {d} too small for {n_up} halvings")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.taps = (max(1, cfg.depth // 2), cfg.depth)
        skip_ch = d // 2
        self.skip = Conv2d(d, skip_ch, 1, rng)
        chans = [d + skip_ch] + [d >> s for s in range(1, n_up + 1)]
        self.up = [Conv2d(chans[s], chans[s + 1], 3, rng, padding=1) for s in range(n_up)]
        self.out = Conv2d(chans[-1], 1, 1, rng)

    def forward(self, layer_tokens: dict[int, Tensor]) -> Tensor:
        """Token maps [B, g, g, D] keyed by block -> logits [B, S, S]."""
        mid_i, deep_i = self.taps
        try:
            deep, mid = layer_tokens[deep_i], layer_tokens[mid_i]
        except KeyError as exc:
            raise T.ShapeError(f"decode_mask: missing tokens from block {exc.args[0]}") from None
        g, d = self.cfg.grid, self.cfg.embed_dim
        if deep.shape[1:] != (g, g, d) or mid.shape[1:] != (g, g, d):
            raise T.ShapeError(f"decode_mask: token maps {deep.shape}/{mid.shape} != [B, {g}, {g}, {d}]")
        x = T.concat([T.transpose(deep, (0, 3, 1, 2)),
                      self.skip(T.transpose(mid, (0, 3, 1, 2)))], axis=1)
        for conv in self.up:
            x = T.relu(conv(T.upsample2x(x)))
        logits = self.out(x)
        b, _, h, w = logits.shape
        return T.reshape(logits, (b, h, w))


def binarize(logits) -> np.ndarray:
    """Per-pixel foreground iff sigmoid(logit) > 0.5."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (data > 0).astype(np.uint8)


@dataclass(frozen=True)
class ThresholdRule:
    """A frame is positive when its mask's foreground area strictly exceeds
    ``fraction`` of the image area."""

    height: int = 224
    width: int = 224
    fraction: float = 0.01

    @property
    def pixel_threshold(self) -> int:
        """Smallest integer count strictly greater than fraction * H * W."""
        exact = Decimal(repr(self.fraction)) * self.height * self.width
        return int(math.floor(exact)) + 1


def mask_to_label(mask, rule: ThresholdRule) -> int:
    m = np.asarray(mask)
    if m.shape != (rule.height, rule.width):
        raise T.ShapeError(f"mask_to_label: mask {m.shape} != rule {(rule.height, rule.width)}")
    return int(np.count_nonzero(m) >= rule.pixel_threshold)


def masks_to_labels(masks: np.ndarray, rule: ThresholdRule) -> np.ndarray:
    """Batched form of :func:`mask_to_label` for masks [N, H, W]."""
    m = np.asarray(masks)
    if m.shape[1:] != (rule.height, rule.width):
        raise T.ShapeError(f"masks_to_labels: masks {m.shape[1:]} != rule {(rule.height, rule.width)}")
    counts = np.count_nonzero(m.reshape(len(m), -1), axis=1)
    return (counts >= rule.pixel_threshold).astype(np.int64)
