"""Pad-to-square and bilinear resizing."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def pad_to_square(image: np.ndarray) -> np.ndarray:
    """Zero-pad the shorter axis symmetrically; an odd remainder goes to the bottom/right."""
    h, w = image.shape
    if h == w:
        return image
    n = max(h, w)
    top, left = (n - h) // 2, (n - w) // 2
    out = np.zeros((n, n), dtype=image.dtype)
    out[top:top + h, left:left + w] = image
    return out


def _sample_grid(n_in: int, n_out: int) -> np.ndarray:
    # Pixel-centre alignment, clamped to the valid range.
    c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(c, 0, n_in - 1)


def resize(image: np.ndarray, size: int, order: int = 1) -> np.ndarray:
    """Resize a 2-D array to ``size`` x ``size`` (order 1 bilinear, 0 nearest)."""
    h, w = image.shape
    if (h, w) == (size, size):
        return image.astype(np.float64)
    rows, cols = _sample_grid(h, size), _sample_grid(w, size)
    if order == 0:
        return image[np.rint(rows).astype(int)][:, np.rint(cols).astype(int)].astype(np.float64)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(image.astype(np.float64), [rr, cc], order=order, mode="nearest")


def preprocess(image: np.ndarray, size: int = 64) -> np.ndarray:
    """8-bit frame -> padded, resized float32 array in [0, 1]."""
    sq = pad_to_square(np.asarray(image))
    return (resize(sq, size, order=1) / 255.0).astype(np.float32)


def preprocess_mask(mask: np.ndarray, size: int = 64) -> np.ndarray:
    """Binary mask (any nonzero is foreground) -> {0, 1} uint8 at the working size."""
    sq = pad_to_square((np.asarray(mask) > 0).astype(np.uint8))
    return (resize(sq, size, order=0) > 0).astype(np.uint8)
