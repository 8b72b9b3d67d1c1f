"""On-disk dataset construction and in-memory loading.

Directory layout produced by :func:`build_dataset`::

    <root>/manifest.raw.jsonl   every generated frame
    <root>/manifest.jsonl       after sweep filtering, with split tags and
                                augmented training copies (aug_version 1, 2)
    <root>/splits.json          patient_id -> split
    <root>/images/<patient>/s<sweep>/f<frame>.pgm
    <root>/masks/<patient>/s<sweep>/f<frame>.pgm
    <root>/augmented/<patient>/s<sweep>/f<frame>_v<k>{,_mask}.pgm
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment
from .manifest import DatasetManifest, FrameRecord, apply_split, filter_sweeps, split_patients
from .pgm import read_pgm, write_pgm
from .phantom import SWEEPS, PhantomGeometry, frame_mask, plan_patient, render_frame
from .preprocess import pad_to_square, preprocess, preprocess_mask

log = logging.getLogger(__name__)

GENERATOR_VERSION = 1


def patient_ids(n: int) -> list[str]:
    return [f"P{i:04d}" for i in range(n)]


def _generate_patient(args) -> list[dict]:
    seed, pid, geo, root, write = args
    rows = []
    for s, plan in enumerate(plan_patient(seed, pid, geo)):
        for f in range(geo.frames_per_sweep):
            img_rel = f"images/{pid}/s{s}/f{f:03d}.pgm"
            mask_rel = f"masks/{pid}/s{s}/f{f:03d}.pgm"
            if write:
                img, mask = render_frame(seed, pid, s, f, plan, geo)
                write_pgm(Path(root) / img_rel, img)
                write_pgm(Path(root) / mask_rel, mask)
                label = int(mask.any())
            else:
                label = int(frame_mask(plan, f, geo).any())
                img_rel = mask_rel = ""
            rows.append(dict(patient_id=pid, sweep_id=s, sweep_axis=plan.axis, frame_index=f,
                             image_path=img_rel, mask_path=mask_rel, label=label))
    return rows


def generate_dataset(n_patients: int, seed: int, out_dir: str | os.PathLike,
                     geometry: PhantomGeometry = PhantomGeometry(), workers: int = 1,
                     write_images: bool = True) -> DatasetManifest:
    """Render ``n_patients`` x 6 sweeps x 140 frames and write the raw manifest.

    With ``write_images=False`` only labels are computed (from the rasterised
    masks) and no pixel files are written; record paths are then empty.
    """
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(seed, pid, geometry, str(root), write_images) for pid in patient_ids(n_patients)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_generate_patient, jobs))
    else:
        chunks = [_generate_patient(j) for j in jobs]
    records = [FrameRecord(**row) for chunk in chunks for row in chunk]
    meta = {"seed": seed, "n_patients": n_patients, "sweeps_per_patient": SWEEPS,
            "native_size": [geometry.height, geometry.width], "geometry": geometry.to_dict(),
            "generator_version": GENERATOR_VERSION, "images_written": write_images}
    manifest = DatasetManifest(records, meta)
    meta["raw_prevalence"] = manifest.prevalence
    manifest.write(root / "manifest.raw.jsonl")
    return manifest


def _augment_record(args) -> list[dict]:
    root, rec, seed, cfg = args
    root = Path(root)
    img = pad_to_square(read_pgm(root / rec.image_path))
    mask = pad_to_square(read_pgm(root / rec.mask_path))
    out = []
    identity = (rec.patient_id, rec.sweep_id, rec.frame_index)
    for v, (im, m) in enumerate(augment(img, mask, seed, identity, cfg), start=1):
        stem = f"augmented/{rec.patient_id}/s{rec.sweep_id}/f{rec.frame_index:03d}_v{v}"
        write_pgm(root / f"{stem}.pgm", im)
        write_pgm(root / f"{stem}_mask.pgm", m)
        out.append(dict(image_path=f"{stem}.pgm", mask_path=f"{stem}_mask.pgm", aug_version=v,
                        label=int(m.any())))
    return out


def augment_training(manifest: DatasetManifest, root: str | os.PathLike, seed: int,
                     cfg: AugmentConfig = AugmentConfig(), workers: int = 1) -> DatasetManifest:
    """Append ``cfg.versions`` augmented copies of every original training record."""
    train = [r for r in manifest.records if r.split == "train" and r.aug_version == 0]
    jobs = [(str(root), r, seed, cfg) for r in train]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_augment_record, jobs, chunksize=64))
    else:
        results = [_augment_record(j) for j in jobs]
    extra = [replace(r, **fields) for r, res in zip(train, results) for fields in res]
    meta = dict(manifest.metadata)
    meta["augmentation"] = {**cfg.to_dict(), "seed": seed, "added": len(extra)}
    return DatasetManifest(manifest.records + extra, meta)


@dataclass
class BuildResult:
    raw: DatasetManifest
    final: DatasetManifest
    splits: dict[str, str]


def build_dataset(out_dir: str | os.PathLike, n_patients: int, seed: int,
                  geometry: PhantomGeometry = PhantomGeometry(), filter_empty: bool = True,
                  ratios=(0.70, 0.10, 0.20), augment_train: bool = True,
                  augment_cfg: AugmentConfig = AugmentConfig(), workers: int = 1) -> BuildResult:
    root = Path(out_dir)
    raw = generate_dataset(n_patients, seed, root, geometry, workers=workers)
    kept = filter_sweeps(raw) if filter_empty else DatasetManifest(list(raw.records), dict(raw.metadata))
    kept.metadata["filtered"] = filter_empty
    splits = split_patients(raw, ratios, seed)
    final = apply_split(kept, splits)
    if augment_train:
        final = augment_training(final, root, seed, augment_cfg, workers=workers)
    final.write(root / "manifest.jsonl")
    (root / "splits.json").write_text(json.dumps(splits, indent=1, sort_keys=True) + "\n")
    return BuildResult(raw=raw, final=final, splits=splits)


@dataclass
class FrameArrays:
    """Preprocessed frames of one split, in manifest order."""
    images: np.ndarray          # [N, 1, S, S] float32 in [0, 1]
    masks: np.ndarray           # [N, S, S] uint8 {0, 1}
    labels: np.ndarray          # [N] int64
    records: list[FrameRecord]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "FrameArrays":
        idx = np.asarray(idx)
        return FrameArrays(self.images[idx], self.masks[idx], self.labels[idx],
                           [self.records[i] for i in idx])


def load_frames(root: str | os.PathLike, records: list[FrameRecord], size: int = 64) -> FrameArrays:
    root = Path(root)
    n = len(records)
    images = np.empty((n, 1, size, size), dtype=np.float32)
    masks = np.empty((n, size, size), dtype=np.uint8)
    for i, r in enumerate(records):
        images[i, 0] = preprocess(read_pgm(root / r.image_path), size)
        masks[i] = preprocess_mask(read_pgm(root / r.mask_path), size)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return FrameArrays(images, masks, labels, list(records))


def load_split(root: str | os.PathLike, split: str, size: int = 64,
               manifest: DatasetManifest | None = None, include_augmented: bool = True) -> FrameArrays:
    manifest = manifest or DatasetManifest.read(Path(root) / "manifest.jsonl")
    records = manifest.select(split, include_augmented=include_augmented and split == "train")
    if not records:
        raise ValueError(f"split {split!r} is empty")
    return load_frames(root, records, size)
