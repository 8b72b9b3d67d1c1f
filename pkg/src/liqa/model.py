"""Encoder + optional adapters + task head, configured by fine-tuning strategy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .heads import ClsHead, SegDecoder
from .lora import LoraConfig, adapters, inject
from .nn import Module, count_trainable
from .tensor import Tensor
from .vit import EncoderConfig, ViTEncoder

STRATEGIES = ("linear_probe", "full_parameter", "lora")
HEADS = ("classification", "segmentation")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    head: str = "classification"
    strategy: str = "lora"
    # Seed of the fixed random init that stands in for pretrained weights.
    encoder_seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "lora": self.lora.to_dict(),
                "head": self.head, "strategy": self.strategy, "encoder_seed": self.encoder_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        lora = dict(d.get("lora", {}))
        if "targets" in lora:
            lora["targets"] = tuple(lora["targets"])
        return cls(encoder=EncoderConfig(**d.get("encoder", {})), lora=LoraConfig(**lora),
                   head=d.get("head", "classification"), strategy=d.get("strategy", "lora"),
                   encoder_seed=int(d.get("encoder_seed", 0)))


class IQAModel(Module):
    """Frame-quality model: classification logits [B] or mask logits [B, S, S]."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.encoder = ViTEncoder(cfg.encoder, seed=cfg.encoder_seed)
        rng = np.random.default_rng(seed)
        if cfg.strategy == "lora":
            inject(self.encoder, cfg.lora, seed=int(rng.integers(2 ** 31)))
        head_seed = int(rng.integers(2 ** 31))
        if cfg.head == "classification":
            self.head = ClsHead(cfg.encoder.embed_dim)
        else:
            self.head = SegDecoder(cfg.encoder, seed=head_seed)
        self.apply_strategy()

    def apply_strategy(self) -> None:
        self.encoder.set_frozen(self.cfg.strategy != "full_parameter")
        for _, _, layer in adapters(self.encoder):
            layer.lora_A.requires_grad = True
            layer.lora_B.requires_grad = True
        self.head.requires_grad_(True)

    @property
    def taps(self) -> tuple[int, ...]:
        return self.head.taps if isinstance(self.head, SegDecoder) else ()

    def forward(self, images) -> Tensor:
        enc = self.encoder(images, taps=self.taps)
        if isinstance(self.head, SegDecoder):
            return self.head(enc.layer_tokens)
        return self.head(enc.cls_embedding)

    def embed(self, images, layer: str = "pre_head") -> Tensor:
        enc = self.encoder(images)
        if layer == "pre_head":
            return enc.cls_embedding
        if layer == "penultimate_block":
            return enc.last_block_cls
        raise ValueError(f"unknown embedding layer {layer!r}")

    def set_training(self, flag: bool) -> None:
        for _, _, layer in adapters(self.encoder):
            layer.training = flag

    def count_trainable(self) -> int:
        return count_trainable(self)

    def base_parameters(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.encoder.named_parameters() if ".lora_" not in n}

    def astype(self, dtype) -> "IQAModel":
        super().astype(dtype)
        return self


def checkpoint_name(name: str) -> str:
    """Model parameter name -> stored tensor name (adapters as lora.<block>.<target>.A/B)."""
    parts = name.split(".")
    if parts[0] == "encoder" and parts[-1] in ("lora_A", "lora_B"):
        return f"lora.{parts[2]}.{parts[3]}.{parts[-1][-1]}"
    return name


def model_name(stored: str) -> str:
    parts = stored.split(".")
    if parts[0] == "lora":
        return f"encoder.blocks.{parts[1]}.{parts[2]}.lora_{parts[3]}"
    return stored


def build_model(cfg: ModelConfig, seed: int = 0, dtype=None) -> IQAModel:
    with T.precision(dtype or T.default_dtype()):
        return IQAModel(cfg, seed=seed)
