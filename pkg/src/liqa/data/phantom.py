"""Synthetic blind-sweep phantoms.

Each patient has six sweeps of 140 frames (three transverse, three sagittal).
In one to three sweeps an elliptical hypoechoic "abdomen" with a bright rim
enters the field of view for a short contiguous window, its cross-section
growing and then shrinking. Everything else is speckled tissue under a slowly
varying low-contrast bias field.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

FRAMES_PER_SWEEP = 140
SWEEPS = 6
AXES = ("transverse", "transverse", "transverse", "sagittal", "sagittal", "sagittal")


@dataclass(frozen=True)
class PhantomGeometry:
    height: int = 56
    width: int = 72
    frames_per_sweep: int = FRAMES_PER_SWEEP
    target_prevalence: float = 0.026
    min_positive_sweeps: int = 1
    max_positive_sweeps: int = 3
    semi_axis_min: float = 12.0          # native pixels, at the window peak
    semi_axis_max: float = 18.0
    edge_scale: float = 0.55             # cross-section scale at the window edges
    tissue_level: float = 110.0
    speckle_shape: float = 20.0          # gamma shape; larger means weaker speckle
    interior_gain: float = 0.10
    rim_gain: float = 1.8
    rim_width: float = 2.0
    bias_amplitude: float = 0.15

    def __post_init__(self):
        if not 1 <= self.min_positive_sweeps <= self.max_positive_sweeps <= SWEEPS:
            raise ValueError("positive sweep counts must satisfy 1 <= min <= max <= 6")
        if not 0 < self.target_prevalence < 1:
            raise ValueError("target_prevalence must lie in (0, 1)")

    @property
    def window_range(self) -> tuple[int, int]:
        """Min/max length of the anatomy window, centred on the length that
        hits ``target_prevalence`` on average."""
        mean_k = (self.min_positive_sweeps + self.max_positive_sweeps) / 2
        mean_len = self.target_prevalence * SWEEPS * self.frames_per_sweep / mean_k
        lo = max(1, int(round(0.65 * mean_len)))
        hi = max(lo, int(round(1.35 * mean_len)))
        return lo, min(hi, self.frames_per_sweep)

    def to_dict(self) -> dict:
        return asdict(self)


def stable_key(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def rng_for(*parts) -> np.random.Generator:
    """Generator seeded from a tuple of ints/strings, independent of call order."""
    ints = [p if isinstance(p, int) else stable_key(str(p)) for p in parts]
    return np.random.default_rng([int(i) % (2 ** 63) for i in ints])


@dataclass(frozen=True)
class SweepPlan:
    axis: str
    window_start: int        # -1 when the sweep never meets the anatomy
    window_length: int
    center: tuple[float, float]
    drift: tuple[float, float]
    semi_axes: tuple[float, float]
    angle: float
    bias: tuple[float, float, float]

    def scale_at(self, frame: int, edge_scale: float) -> float:
        """Cross-section scale at ``frame``; 0 outside the window."""
        if self.window_start < 0:
            return 0.0
        t = frame - self.window_start
        if not 0 <= t < self.window_length:
            return 0.0
        return edge_scale + (1 - edge_scale) * math.sin(math.pi * (t + 0.5) / self.window_length)


def plan_patient(seed: int, patient_id: str, geo: PhantomGeometry) -> list[SweepPlan]:
    rng = rng_for(seed, patient_id, "plan")
    k = int(rng.integers(geo.min_positive_sweeps, geo.max_positive_sweeps + 1))
    positive = set(rng.choice(SWEEPS, size=k, replace=False).tolist())
    lo, hi = geo.window_range
    plans = []
    for s in range(SWEEPS):
        srng = rng_for(seed, patient_id, s, "sweep")
        axis = AXES[s]
        length = int(srng.integers(lo, hi + 1))
        start = int(srng.integers(0, geo.frames_per_sweep - length + 1)) if s in positive else -1
        a = float(srng.uniform(geo.semi_axis_min, geo.semi_axis_max))
        ratio = srng.uniform(0.8, 1.0) if axis == "transverse" else srng.uniform(0.5, 0.7)
        margin = geo.semi_axis_max * 0.6
        cy = float(srng.uniform(margin, geo.height - margin))
        cx = float(srng.uniform(geo.semi_axis_max, geo.width - geo.semi_axis_max))
        plans.append(SweepPlan(
            axis=axis, window_start=start, window_length=length, center=(cy, cx),
            drift=(float(srng.uniform(-0.3, 0.3)), float(srng.uniform(-0.3, 0.3))),
            semi_axes=(a, a * float(ratio)),
            angle=float(srng.uniform(0, math.pi)) if axis == "sagittal" else float(srng.uniform(-0.3, 0.3)),
            bias=tuple(float(v) for v in srng.uniform(-1, 1, size=3)),
        ))
    return plans


def _ellipse_field(plan: SweepPlan, frame: int, scale: float, geo: PhantomGeometry) -> np.ndarray:
    """Normalised radial coordinate: < 1 inside the ellipse."""
    t = frame - plan.window_start
    cy = plan.center[0] + plan.drift[0] * t
    cx = plan.center[1] + plan.drift[1] * t
    a, b = plan.semi_axes[0] * scale, plan.semi_axes[1] * scale
    yy, xx = np.mgrid[0:geo.height, 0:geo.width]
    dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
    c, s = math.cos(plan.angle), math.sin(plan.angle)
    u, v = c * dx + s * dy, -s * dx + c * dy
    return np.sqrt((u / a) ** 2 + (v / b) ** 2)


def frame_mask(plan: SweepPlan, frame: int, geo: PhantomGeometry) -> np.ndarray:
    scale = plan.scale_at(frame, geo.edge_scale)
    if scale == 0.0:
        return np.zeros((geo.height, geo.width), dtype=np.uint8)
    r = _ellipse_field(plan, frame, scale, geo)
    mask = r < 1.0
    if not mask.any():
        # Guarantee at least the centre pixel so label and mask always agree.
        cy = int(np.clip(plan.center[0], 0, geo.height - 1))
        cx = int(np.clip(plan.center[1], 0, geo.width - 1))
        mask[cy, cx] = True
    return mask.astype(np.uint8)


def render_frame(seed: int, patient_id: str, sweep: int, frame: int, plan: SweepPlan,
                 geo: PhantomGeometry) -> tuple[np.ndarray, np.ndarray]:
    """One 8-bit frame and its {0, 255} mask."""
    rng = rng_for(seed, patient_id, sweep, frame, "render")
    h, w = geo.height, geo.width
    coarse = rng.standard_normal((h // 8 + 2, w // 8 + 2))
    texture = ndimage.zoom(coarse, (h / coarse.shape[0], w / coarse.shape[1]), order=1)[:h, :w]
    tissue = geo.tissue_level * (1 + 0.12 * texture)

    yy, xx = np.mgrid[0:h, 0:w]
    ny, nx = yy / h - 0.5, xx / w - 0.5
    phase = 2 * math.pi * frame / geo.frames_per_sweep
    bx, by, bq = plan.bias
    bias = 1 + geo.bias_amplitude * (bx * nx * math.cos(phase) + by * ny + bq * (nx * nx + ny * ny))
    img = tissue * bias

    mask = frame_mask(plan, frame, geo)
    scale = plan.scale_at(frame, geo.edge_scale)
    if scale > 0:
        r = _ellipse_field(plan, frame, scale, geo)
        a_px = plan.semi_axes[1] * scale
        rim = np.exp(-(((r - 1.0) * a_px / geo.rim_width) ** 2))
        gain = np.where(mask > 0, geo.interior_gain, 1.0) + (geo.rim_gain - 1.0) * rim
        img = img * gain

    speckle = rng.gamma(geo.speckle_shape, 1.0 / geo.speckle_shape, size=(h, w))
    img = np.clip(np.rint(img * speckle), 0, 255).astype(np.uint8)
    return img, (mask * 255).astype(np.uint8)
