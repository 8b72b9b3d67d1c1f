"""Confusion counts, derived metrics, multi-seed aggregation and reporting."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass

import numpy as np

METRICS = ("accuracy", "f1", "precision", "recall")


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    dice: float | None = None

    @classmethod
    def from_predictions(cls, pred, labels, dice: float | None = None) -> "EvalReport":
        p = np.asarray(pred).astype(bool)
        y = np.asarray(labels).astype(bool)
        if p.shape != y.shape:
            raise ValueError(f"predictions {p.shape} and labels {y.shape} differ")
        tp = int(np.count_nonzero(p & y))
        fp = int(np.count_nonzero(p & ~y))
        fn = int(np.count_nonzero(~p & y))
        return cls(tp, fp, int(p.size) - tp - fp - fn, fn, dice)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return _ratio(2 * p * r, p + r)

    def as_dict(self) -> dict:
        d = {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
             **{m: getattr(self, m) for m in METRICS}}
        if self.dice is not None:
            d["dice"] = self.dice
        return d


def aggregate(reports: list[EvalReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (n - 1) of each metric across runs."""
    if len(reports) < 2:
        raise ValueError("aggregate needs at least two reports")
    names = list(METRICS) + (["dice"] if all(r.dice is not None for r in reports) else [])
    out = {}
    for name in names:
        vals = [float(getattr(r, name)) for r in reports]
        out[name] = (statistics.fmean(vals), statistics.stdev(vals))
    return out


def format_table(rows: dict[str, dict[str, tuple[float, float]]], trainable: dict[str, int] | None = None) -> str:
    """Plain-text results table, one row per model, mean +- std to 4 decimals."""
    cols = ["dice", *METRICS]
    present = [c for c in cols if any(c in r for r in rows.values())]
    head = ["Model"] + [c.capitalize() if c != "f1" else "F1" for c in present]
    if trainable:
        head.append("# Trainable")
    lines = [" | ".join(head)]
    for name, agg in rows.items():
        cells = [name]
        for c in present:
            cells.append(f"{agg[c][0]:.4f} ± {agg[c][1]:.4f}" if c in agg else "/")
        if trainable:
            cells.append(human_count(trainable.get(name, 0)))
        lines.append(" | ".join(cells))
    return "\n".join(lines)


def human_count(n: int) -> str:
    if n >= 1_000_000:
        return f"{n / 1e6:.1f} M"
    if n >= 1_000:
        return f"{n / 1e3:.1f} K"
    return str(n)


def report_records(reports: list[EvalReport], seeds: list[int], **extra) -> list[str]:
    """Machine-readable form: one JSON line per seed, plus an aggregate line."""
    lines = [json.dumps({"kind": "run", "seed": s, **extra, **r.as_dict()}, sort_keys=True)
             for s, r in zip(seeds, reports)]
    if len(reports) >= 2:
        agg = {k: {"mean": m, "std": sd} for k, (m, sd) in aggregate(reports).items()}
        lines.append(json.dumps({"kind": "aggregate", **extra, **agg}, sort_keys=True))
    return lines


def is_finite(x: float) -> bool:
    return math.isfinite(x)
