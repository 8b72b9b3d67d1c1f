"""Low-rank adapters for the encoder's linear projections.

A wrapped layer computes ``x W^T + b + s * (x A^T) B^T`` with ``s = alpha / r``.
``A`` starts Gaussian and ``B`` starts at zero, so an adapted model is
initially identical to its base.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import Linear, Module, Parameter
from .tensor import Tensor
from .vit import PROJECTIONS, ViTEncoder


class LoraError(RuntimeError):
    pass


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    targets: tuple[str, ...] = PROJECTIONS
    dropout_p: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValueError("LoRA alpha must be finite and positive")
        if not self.targets:
            raise ValueError("LoRA needs at least one target projection")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d


class LoraLinear(Module):
    """A frozen linear layer plus a trainable low-rank update.

    ``weight`` and ``bias`` are the base layer's own parameter objects.
    """

    def __init__(self, base: Linear, rank: int, alpha: float, rng: np.random.Generator,
                 dropout_p: float = 0.0):
        self.d_in, self.d_out = base.d_in, base.d_out
        self.weight = base.weight
        self.bias = base.bias
        self.weight.requires_grad = False
        if self.bias is not None:
            self.bias.requires_grad = False
        self.lora_A = Parameter(rng.normal(0.0, 0.02, size=(rank, base.d_in)))
        self.lora_B = Parameter(np.zeros((base.d_out, rank)))
        self.rank = rank
        self.scaling = alpha / rank
        self.dropout_p = dropout_p
        self.training = True
        self._dropout_rng = np.random.default_rng(int(rng.integers(2 ** 63)))

    def delta(self) -> np.ndarray:
        """The dense update s * B A."""
        return self.scaling * (self.lora_B.data @ self.lora_A.data)

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, T.transpose(self.weight))
        if self.bias is not None:
            y = y + self.bias
        xa = x
        if self.dropout_p > 0 and self.training and T.grad_enabled():
            keep = self._dropout_rng.random(x.shape) >= self.dropout_p
            xa = T.mul(x, Tensor(keep / (1.0 - self.dropout_p), dtype=x.dtype))
        low = T.matmul(T.matmul(xa, T.transpose(self.lora_A)), T.transpose(self.lora_B))
        return y + T.scale(low, self.scaling)


def inject(encoder: ViTEncoder, cfg: LoraConfig, seed: int = 0) -> ViTEncoder:
    """Wrap every targeted projection of every block, in place."""
    unknown = [t for t in cfg.targets if t not in PROJECTIONS]
    if unknown:
        raise LoraError(f"LoRA targets {unknown} match no layer; available: {list(PROJECTIONS)}")
    rng = np.random.default_rng(seed)
    for block in encoder.blocks:
        for target in cfg.targets:
            layer = getattr(block, target)
            if isinstance(layer, LoraLinear):
                raise LoraError(f"projection {target} already carries an adapter")
            setattr(block, target, LoraLinear(layer, cfg.rank, cfg.alpha, rng, cfg.dropout_p))
    return encoder


def adapters(encoder: ViTEncoder) -> list[tuple[int, str, LoraLinear]]:
    return [(i, t, getattr(b, t)) for i, b in enumerate(encoder.blocks)
            for t in PROJECTIONS if isinstance(getattr(b, t), LoraLinear)]


def merge(layer: LoraLinear) -> Linear:
    """Fold the low-rank update into a plain linear layer.

    The returned layer owns new weight data; the adapter is untouched.
    """
    if getattr(layer, "merged", False):
        raise LoraError("layer is already merged")
    out = Linear.__new__(Linear)
    out.d_in, out.d_out = layer.d_in, layer.d_out
    out.weight = Parameter(layer.weight.data + layer.delta().astype(layer.weight.data.dtype),
                           requires_grad=False)
    out.bias = None if layer.bias is None else Parameter(layer.bias.data.copy(), requires_grad=False)
    out.merged = True
    out.lora_factors = (layer.lora_A.data.copy(), layer.lora_B.data.copy(), layer.scaling)
    return out


def unmerge(layer: Linear) -> np.ndarray:
    """Recover the base weight from a merged layer: W_eff - s * B A."""
    if not getattr(layer, "merged", False):
        raise LoraError("layer was not produced by merge()")
    a, b, s = layer.lora_factors
    return layer.weight.data - s * (b @ a)


def merge_all(encoder: ViTEncoder) -> ViTEncoder:
    """Replace every adapter in ``encoder`` by its merged linear layer, in place."""
    for i, target, layer in adapters(encoder):
        setattr(encoder.blocks[i], target, merge(layer))
    return encoder


def lora_param_count(cfg: LoraConfig, d_model: int, d_hidden: int, depth: int) -> int:
    """Closed form: sum over blocks and targets of r * (d_in + d_out)."""
    dims = {"q": (d_model, d_model), "k": (d_model, d_model), "v": (d_model, d_model),
            "attn_out": (d_model, d_model), "mlp_in": (d_model, d_hidden),
            "mlp_out": (d_hidden, d_model)}
    return depth * sum(cfg.rank * (dims[t][0] + dims[t][1]) for t in cfg.targets)
