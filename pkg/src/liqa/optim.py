"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


@dataclass
class AdamWState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adamw_update(theta: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                 lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One in-place AdamW update of ``theta`` (step count ``t`` starts at 1)."""
    b1, b2 = betas
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * (g * g)
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    if weight_decay:
        theta -= (lr * weight_decay) * theta
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


def decays(name: str, p: Parameter) -> bool:
    """Weight matrices decay; biases, norm parameters, LoRA B, CLS token and
    positional table do not."""
    if p.ndim < 2:
        return False
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("lora_B", "cls_token", "pos_embed")


class AdamW:
    def __init__(self, named_params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = [(n, p) for n, p in named_params]
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.state = AdamWState()

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.state.step += 1
        t = self.state.step
        for i, (name, p) in enumerate(self.params):
            if not p.requires_grad or p.grad is None:
                continue
            if i not in self.state.m:
                self.state.m[i] = np.zeros_like(p.data)
                self.state.v[i] = np.zeros_like(p.data)
            wd = self.weight_decay if decays(name, p) else 0.0
            adamw_update(p.data, p.grad.astype(p.data.dtype, copy=False), self.state.m[i],
                         self.state.v[i], t, self.lr, self.betas, self.eps, wd)
