"""Training-time augmentation: intensity jitter, optional CLAHE, random affine."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .clahe import clahe
from .phantom import rng_for


@dataclass(frozen=True)
class AugmentConfig:
    gain: tuple[float, float] = (0.8, 1.2)
    bias: tuple[float, float] = (-0.1, 0.1)       # fraction of the 0..255 range
    clahe_p: float = 0.5
    clahe_clip: float = 2.0
    rotation_deg: float = 15.0
    translate: float = 0.05
    scale: tuple[float, float] = (0.9, 1.1)
    versions: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentParams:
    gain: float = 1.0
    bias: float = 0.0
    use_clahe: bool = False
    rotation: float = 0.0        # radians
    shift: tuple[float, float] = (0.0, 0.0)   # pixels (rows, cols)
    zoom: float = 1.0

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls()


def draw_params(rng: np.random.Generator, shape: tuple[int, int], cfg: AugmentConfig) -> AugmentParams:
    h, w = shape
    return AugmentParams(
        gain=float(rng.uniform(*cfg.gain)),
        bias=float(rng.uniform(*cfg.bias)),
        use_clahe=bool(rng.random() < cfg.clahe_p),
        rotation=math.radians(float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))),
        shift=(float(rng.uniform(-cfg.translate, cfg.translate) * h),
               float(rng.uniform(-cfg.translate, cfg.translate) * w)),
        zoom=float(rng.uniform(*cfg.scale)),
    )


def warp(image: np.ndarray, p: AugmentParams, order: int) -> np.ndarray:
    """Rotate/scale about the image centre, then translate. ``order`` 1 is
    bilinear, 0 nearest-neighbour; outside pixels become 0."""
    h, w = image.shape
    c, s = math.cos(p.rotation), math.sin(p.rotation)
    fwd = p.zoom * np.array([[c, -s], [s, c]])
    inv = np.linalg.inv(fwd)
    centre = np.array([(h - 1) / 2, (w - 1) / 2])
    # output coordinate o maps to input coordinate inv @ (o - centre - shift) + centre
    offset = centre - inv @ (centre + np.array(p.shift))
    out = ndimage.affine_transform(image.astype(np.float64), inv, offset=offset,
                                   order=order, mode="constant", cval=0.0)
    return out


def apply(image: np.ndarray, mask: np.ndarray, p: AugmentParams,
          cfg: AugmentConfig = AugmentConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Jitter -> optional CLAHE -> affine on the image; only the affine on the mask."""
    img = image.astype(np.float64) * p.gain + p.bias * 255.0
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if p.use_clahe:
        img = clahe(img, cfg.clahe_clip)
    img = np.clip(np.rint(warp(img, p, order=1)), 0, 255).astype(np.uint8)
    m = np.where(warp(mask, p, order=0) > 127, 255, 0).astype(np.uint8)
    return img, m


def augment(image: np.ndarray, mask: np.ndarray, seed: int, identity: tuple,
            cfg: AugmentConfig = AugmentConfig()) -> list[tuple[np.ndarray, np.ndarray]]:
    """``cfg.versions`` augmented copies of one frame.

    ``identity`` is (patient_id, sweep_id, frame_index); version ``v`` (1-based)
    draws its parameters from a generator seeded by (seed, *identity, v), so
    results do not depend on processing order.
    """
    out = []
    for v in range(1, cfg.versions + 1):
        rng = rng_for(seed, *identity, v, "augment")
        out.append(apply(image, mask, draw_params(rng, image.shape, cfg), cfg))
    return out
