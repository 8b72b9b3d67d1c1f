"""Training loop, best-epoch checkpoint selection, evaluation and embedding export."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .data.dataset import FrameArrays
from .heads import SegDecoder, ThresholdRule, binarize, masks_to_labels, predict_label
from .lora import merge_all
from .losses import bce_with_logits, dice_loss, dice_score
from .metrics import EvalReport
from .model import IQAModel, ModelConfig, build_model, checkpoint_name, model_name
from .optim import AdamW

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    epochs: int = 5
    batch_size: int = 32
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    repeats: int = 5
    # Desk-scale knob: train on a seeded, label-stratified subset of at most
    # this many training frames (None = all of them).
    max_train_frames: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainResult:
    model: IQAModel
    best: Checkpoint
    history: list[EpochRecord]
    checkpoints: list[Checkpoint] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return int(self.best.metadata["epoch"])


def batch_loss(model: IQAModel, images: np.ndarray, labels: np.ndarray, masks: np.ndarray) -> T.Tensor:
    out = model(T.Tensor(images))
    if isinstance(model.head, SegDecoder):
        return dice_loss(T.sigmoid(out), masks)
    return bce_with_logits(out, labels)


def mean_loss(model: IQAModel, frames: FrameArrays, batch_size: int = 64) -> float:
    """Frame-averaged loss (BCE or Dice, matching the head) without gradients."""
    total = 0.0
    model.set_training(False)
    with T.no_grad():
        for lo in range(0, len(frames), batch_size):
            sl = slice(lo, lo + batch_size)
            n = len(frames.labels[sl])
            loss = batch_loss(model, frames.images[sl], frames.labels[sl], frames.masks[sl])
            total += float(loss.data) * n
    model.set_training(True)
    return total / len(frames)


def stratified_subset(labels: np.ndarray, limit: int, seed: int) -> np.ndarray:
    """Indices of at most ``limit`` frames keeping the label ratio, in original order."""
    n = len(labels)
    if limit >= n:
        return np.arange(n)
    rng = np.random.default_rng([seed, 17])
    pos, neg = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    n_pos = int(round(limit * len(pos) / n))
    pick = np.concatenate([rng.choice(pos, n_pos, replace=False),
                           rng.choice(neg, limit - n_pos, replace=False)])
    return np.sort(pick)


def model_checkpoint(model: IQAModel, metadata: dict, storage: str = "full") -> Checkpoint:
    """Snapshot model parameters.

    ``storage``: "full" keeps every tensor; "adapters" keeps only trainable
    tensors (the frozen base is rebuilt from ``encoder_seed``); "merged" folds
    adapters into the base weights and stores no adapter tensors.
    """
    src = model
    if storage == "merged":
        src = copy.deepcopy(model)
        merge_all(src.encoder)
    elif storage not in ("full", "adapters"):
        raise ValueError(f"unknown checkpoint storage {storage!r}")
    tensors = {}
    for name, p in src.named_parameters():
        if storage == "adapters" and not p.requires_grad:
            continue
        tensors[checkpoint_name(name)] = np.array(p.data, dtype=np.float32)
    meta = {**metadata, "storage": storage, "model_config": model.cfg.to_dict()}
    return Checkpoint(meta, tensors)


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> IQAModel:
    cfg = ModelConfig.from_dict(ckpt.metadata["model_config"])
    model = build_model(cfg, seed=int(ckpt.metadata.get("seed", 0)), dtype=dtype)
    storage = ckpt.metadata.get("storage", "full")
    if storage == "merged":
        merge_all(model.encoder)
    state = {model_name(k): v for k, v in ckpt.tensors.items()}
    model.load_state_dict(state, strict=storage != "adapters")
    model.apply_strategy()
    return model


def train(model_cfg: ModelConfig, cfg: TrainConfig, train_frames: FrameArrays,
          val_frames: FrameArrays, keep_all: bool = False, progress=None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs; keep the epoch with the lowest
    validation loss (ties go to the earlier epoch)."""
    if len(train_frames) == 0 or len(val_frames) == 0:
        raise TrainingError("training needs non-empty train and val splits")
    if cfg.max_train_frames is not None:
        train_frames = train_frames.subset(
            stratified_subset(train_frames.labels, cfg.max_train_frames, cfg.seed))
    model = build_model(model_cfg, seed=cfg.seed)
    opt = AdamW([(n, p) for n, p in model.named_parameters() if p.requires_grad],
                lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(train_frames)
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    best_state = None
    all_ckpts = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = np.sort(order[lo:lo + cfg.batch_size])
            opt.zero_grad()
            loss = batch_loss(model, train_frames.images[idx], train_frames.labels[idx],
                              train_frames.masks[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {lo // cfg.batch_size}")
            loss.backward()
            opt.step()
            total += value * len(idx)
            count += len(idx)
        train_loss = total / count
        val_loss = mean_loss(model, val_frames)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0)
        history.append(rec)
        if progress:
            progress(rec)
        meta = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "seed": cfg.seed,
                "train_config": cfg.to_dict()}
        if keep_all:
            all_ckpts.append(model_checkpoint(model, meta))
        if best is None or val_loss < best.metadata["val_loss"]:
            best = model_checkpoint(model, meta)
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    return TrainResult(model=model, best=best, history=history, checkpoints=all_ckpts)


@dataclass
class Predictions:
    labels: np.ndarray                 # predicted {0, 1}
    scores: np.ndarray                 # logits [N] or foreground pixel counts [N]
    masks: np.ndarray | None = None    # binary predicted masks [N, S, S]


def predict(model: IQAModel, frames: FrameArrays, rule: ThresholdRule | None = None,
            batch_size: int = 64) -> Predictions:
    seg = isinstance(model.head, SegDecoder)
    if seg and rule is None:
        s = model.cfg.encoder.image_size
        rule = ThresholdRule(s, s)
    labels, scores, masks = [], [], []
    model.set_training(False)
    with T.no_grad():
        for lo in range(0, len(frames), batch_size):
            out = model(T.Tensor(frames.images[lo:lo + batch_size]))
            if seg:
                m = binarize(out)
                masks.append(m)
                labels.append(masks_to_labels(m, rule))
                scores.append(m.reshape(len(m), -1).sum(axis=1))
            else:
                labels.append(predict_label(out))
                scores.append(np.array(out.data, dtype=np.float64))
    model.set_training(True)
    return Predictions(np.concatenate(labels), np.concatenate(scores),
                       np.concatenate(masks) if seg else None)


def evaluate(model: IQAModel, frames: FrameArrays, rule: ThresholdRule | None = None,
             batch_size: int = 64) -> tuple[EvalReport, Predictions]:
    if len(frames) == 0:
        raise ValueError("cannot evaluate an empty split")
    pred = predict(model, frames, rule, batch_size)
    dice = None
    if pred.masks is not None:
        dice = float(dice_score(pred.masks, frames.masks).mean())
    return EvalReport.from_predictions(pred.labels, frames.labels, dice), pred


def export_embeddings(model: IQAModel, frames: FrameArrays, layer: str = "pre_head",
                      batch_size: int = 64) -> np.ndarray:
    """One embedding row per frame, in frame order."""
    rows = []
    model.set_training(False)
    with T.no_grad():
        for lo in range(0, len(frames), batch_size):
            rows.append(np.array(model.embed(T.Tensor(frames.images[lo:lo + batch_size]), layer).data))
    model.set_training(True)
    return np.concatenate(rows).astype(np.float64)
