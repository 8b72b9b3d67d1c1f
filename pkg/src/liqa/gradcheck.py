"""Central finite-difference gradient checking (float64)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    checked: int


@dataclass
class GradcheckReport:
    tolerance: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_error < self.tolerance for e in self.entries)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            mark = "ok  " if e.max_rel_error < self.tolerance else "FAIL"
            out.append(f"{mark} {e.name:<48s} rel_err={e.max_rel_error:.3e} ({e.checked} coords)")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max|a - n| / max(max|a|, max|n|, floor), computed over one tensor."""
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]],
              tolerance: float = 1e-6, h: float = 1e-5, max_coords: int | None = None,
              rng: np.random.Generator | None = None) -> GradcheckReport:
    """Compare backward gradients with (f(x+h) - f(x-h)) / 2h.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. Parameters must already be float64. When ``max_coords`` is set,
    only that many randomly chosen coordinates of each tensor are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    for _, p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 parameters")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    report = GradcheckReport(tolerance)
    for name, p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for k, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2 * h)
        err = relative_error(analytic.reshape(-1)[coords], numeric)
        report.entries.append(ParamCheck(name, err, int(coords.size)))
    for _, p in params:
        p.grad = None
    return report
