"""Frame records, the line-delimited manifest, sweep filtering and patient splits.

Manifest layout (UTF-8 JSON lines): the first line is a metadata object with
``"type": "metadata"``; every following line is one :class:`FrameRecord`.
Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .phantom import FRAMES_PER_SWEEP

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class FrameRecord:
    patient_id: str
    sweep_id: int
    sweep_axis: str
    frame_index: int
    image_path: str
    mask_path: str
    label: int
    aug_version: int = 0
    split: str | None = None

    def __post_init__(self):
        if not 0 <= self.sweep_id <= 5:
            raise ValueError(f"sweep_id {self.sweep_id} outside 0..5")
        if not 0 <= self.frame_index < FRAMES_PER_SWEEP:
            raise ValueError(f"frame_index {self.frame_index} outside 0..{FRAMES_PER_SWEEP - 1}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.patient_id, self.sweep_id, self.frame_index, self.aug_version)

    @property
    def sweep_key(self) -> tuple[str, int]:
        return (self.patient_id, self.sweep_id)


@dataclass
class DatasetManifest:
    records: list[FrameRecord]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise ValueError(f"duplicate manifest record {r.key}")
            seen.add(r.key)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def prevalence(self) -> float:
        return float(np.mean([r.label for r in self.records])) if self.records else 0.0

    @property
    def patients(self) -> list[str]:
        return sorted({r.patient_id for r in self.records})

    def select(self, split: str | None = None, include_augmented: bool = True) -> list[FrameRecord]:
        return [r for r in self.records
                if (split is None or r.split == split) and (include_augmented or r.aug_version == 0)]

    def write(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"type": "metadata", **self.metadata}
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty manifest")
        meta = json.loads(lines[0])
        if meta.pop("type", None) != "metadata":
            raise ValueError(f"{path}: first line must be the metadata record")
        return cls([FrameRecord(**json.loads(ln)) for ln in lines[1:]], meta)


def filter_sweeps(manifest: DatasetManifest) -> DatasetManifest:
    """Drop every sweep in which no frame has a foreground mask."""
    positive = {r.sweep_key for r in manifest.records if r.label == 1}
    kept = [r for r in manifest.records if r.sweep_key in positive]
    meta = dict(manifest.metadata)
    meta["raw_prevalence"] = manifest.prevalence
    out = DatasetManifest(kept, meta)
    meta["filtered_prevalence"] = out.prevalence
    meta["sweeps_dropped"] = len({r.sweep_key for r in manifest.records}) - len(positive)
    return out


def largest_remainder(n: int, ratios: Iterable[float]) -> list[int]:
    ratios = list(ratios)
    quotas = [n * r for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    # Every split with a nonzero ratio gets at least one patient.
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_patients(manifest_or_patients, ratios=(0.70, 0.10, 0.20), seed: int = 0) -> dict[str, str]:
    """Random patient-level assignment to train/val/test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    if isinstance(manifest_or_patients, DatasetManifest):
        patients = manifest_or_patients.patients
    else:
        patients = sorted(set(manifest_or_patients))
    nonzero = sum(1 for r in ratios if r > 0)
    if len(patients) < nonzero:
        raise ValueError(f"{len(patients)} patients cannot fill {nonzero} non-empty splits")
    counts = largest_remainder(len(patients), ratios)
    order = np.random.default_rng(seed).permutation(len(patients))
    assignment: dict[str, str] = {}
    pos = 0
    for name, c in zip(SPLITS, counts):
        for i in order[pos:pos + c]:
            assignment[patients[i]] = name
        pos += c
    return dict(sorted(assignment.items()))


def apply_split(manifest: DatasetManifest, assignment: dict[str, str]) -> DatasetManifest:
    recs = [replace(r, split=assignment[r.patient_id]) for r in manifest.records]
    meta = dict(manifest.metadata)
    meta["split_counts"] = {s: sum(1 for v in assignment.values() if v == s) for s in SPLITS}
    return DatasetManifest(recs, meta)


def leakage(manifest: DatasetManifest) -> dict[str, set[str]]:
    """Patients whose records appear in more than one split (should be empty)."""
    seen: dict[str, set[str]] = defaultdict(set)
    for r in manifest.records:
        seen[r.patient_id].add(r.split)
    return {p: s for p, s in seen.items() if len(s) > 1}
