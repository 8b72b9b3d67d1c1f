"""Vision Transformer image encoder for single-channel frames."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor

PROJECTIONS = ("q", "k", "v", "attn_out", "mlp_in", "mlp_out")


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid + 1

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))

    def to_dict(self) -> dict:
        return asdict(self)


# Reference geometry for a 224px ViT-L/14-class encoder; not exercised by the tests.
VIT_L14 = EncoderConfig(image_size=224, patch_size=14, embed_dim=1024, depth=24, num_heads=16)


@dataclass
class EncoderOutput:
    cls_embedding: Tensor                      # [B, D], after the final norm
    last_block_cls: Tensor                     # [B, D], last block output before the final norm
    layer_tokens: dict[int, Tensor] = field(default_factory=dict)  # block -> [B, g, g, D]


class Block(Module):
    """Pre-norm transformer block. Linear projections are direct attributes so
    that adapters can be injected by name."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d, h = cfg.embed_dim, cfg.mlp_hidden
        self.num_heads = cfg.num_heads
        self.norm1 = LayerNorm(d)
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.attn_out = Linear(d, d, rng)
        self.norm2 = LayerNorm(d)
        self.mlp_in = Linear(d, h, rng)
        self.mlp_out = Linear(h, d, rng)
        self.last_attention: np.ndarray | None = None

    def attention(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        nh = self.num_heads
        dh = d // nh

        def heads(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (b, n, nh, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        probs = T.softmax(scores)
        self.last_attention = probs.data
        ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, n, d))
        return self.attn_out(ctx)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attention(self.norm1(x))
        return x + self.mlp_out(T.gelu(self.mlp_in(self.norm2(x))))


class ViTEncoder(Module):
    """Patch embedding (conv, kernel = stride = patch), learned CLS token and
    positional table, ``depth`` pre-norm blocks and a final norm."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.embed_dim
        self.patch_embed = Conv2d(1, d, cfg.patch_size, rng, stride=cfg.patch_size, std=0.02)
        w = self.patch_embed.weight
        w.data = trunc_normal(rng, w.shape).astype(w.data.dtype)
        self.cls_token = Parameter(trunc_normal(rng, (1, 1, d)))
        self.pos_embed = Parameter(trunc_normal(rng, (cfg.num_tokens, d)))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(d)

    def set_frozen(self, frozen: bool) -> None:
        """Freeze or unfreeze every base parameter (adapters excluded)."""
        for name, p in self.named_parameters():
            if ".lora_" not in name:
                p.requires_grad = not frozen

    def forward(self, images, taps: tuple[int, ...] = ()) -> EncoderOutput:
        """Encode a batch ``[B, 1, S, S]`` (a single ``[1, S, S]`` frame is also accepted).

        ``taps`` are 1-based block indices whose patch tokens are returned.
        """
        x = T.as_tensor(images)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        s = self.cfg.image_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise T.ShapeError(f"encode: expected images of shape [B, 1, {s}, {s}], got {x.shape}")
        b = x.shape[0]
        g, d = self.cfg.grid, self.cfg.embed_dim
        for t in taps:
            if not 1 <= t <= self.cfg.depth:
                raise ValueError(f"tap {t} outside 1..{self.cfg.depth}")
        patches = self.patch_embed(x)                                   # [B, D, g, g]
        tokens = T.transpose(T.reshape(patches, (b, d, g * g)), (0, 2, 1))
        cls = T.add(self.cls_token, Tensor(np.zeros((b, 1, d), dtype=tokens.dtype)))
        h = T.concat([cls, tokens], axis=1)
        h = h + T.embedding(self.pos_embed, np.arange(self.cfg.num_tokens))
        layer_tokens = {}
        for i, block in enumerate(self.blocks, start=1):
            h = block(h)
            if i in taps:
                layer_tokens[i] = T.reshape(h[:, 1:, :], (b, g, g, d))
        last_cls = h[:, 0, :]
        return EncoderOutput(cls_embedding=self.norm(last_cls), last_block_cls=last_cls,
                             layer_tokens=layer_tokens)
